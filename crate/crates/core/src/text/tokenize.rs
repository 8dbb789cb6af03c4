use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use super::lang::{detect_language, Language};
use crate::error::{Error, Result};

/// Analyzed terms of a text together with the language used for stemming.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream {
    pub tokens: Vec<String>,
    pub language: Language,
}

/// Byte offset and slice of every Unicode word in `text`.
pub fn word_spans(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.unicode_word_indices()
}

/// Lowercased Unicode words, unstemmed.
pub fn normalized_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.unicode_words().map(str::to_lowercase)
}

fn stemmer_for(lang: Language) -> &'static Stemmer {
    static STEMMERS: OnceLock<[Stemmer; 5]> = OnceLock::new();
    let all = STEMMERS.get_or_init(|| {
        [
            Stemmer::create(Algorithm::English),
            Stemmer::create(Algorithm::Italian),
            Stemmer::create(Algorithm::French),
            Stemmer::create(Algorithm::German),
            Stemmer::create(Algorithm::Spanish),
        ]
    });
    match lang.stemming() {
        Language::En | Language::Unknown => &all[0],
        Language::It => &all[1],
        Language::Fr => &all[2],
        Language::De => &all[3],
        Language::Es => &all[4],
    }
}

const STEM_CACHE_CAP: usize = 1 << 18;

thread_local! {
    static STEM_CACHE: RefCell<[HashMap<String, String>; 5]> = RefCell::new(Default::default());
}

/// Snowball stem applied until it reaches a fixed point.
///
/// A single Snowball pass is not always idempotent (English "agreed" ->
/// "agre" -> "agr"); iterating makes `stem(stem(t)) == stem(t)` hold.
pub fn stem(word: &str, lang: Language) -> String {
    let lang = lang.stemming();
    let slot = lang.code() as usize;
    if let Some(hit) = STEM_CACHE.with(|c| c.borrow()[slot].get(word).cloned()) {
        return hit;
    }
    let stemmer = stemmer_for(lang);
    let mut current = word.to_string();
    loop {
        let next = stemmer.stem(&current);
        if next == current {
            break;
        }
        current = next.into_owned();
    }
    STEM_CACHE.with(|c| {
        let mut c = c.borrow_mut();
        let map = &mut c[slot];
        if map.len() >= STEM_CACHE_CAP {
            map.clear();
        }
        map.insert(word.to_string(), current.clone());
    });
    current
}

/// Lowercase, split on word boundaries and stem with `lang`'s rules.
pub fn analyze(text: &str, lang: Language) -> Vec<String> {
    text.unicode_words()
        .map(|w| {
            let lw = w.to_lowercase();
            stem(&lw, lang)
        })
        .collect()
}

pub fn tokenize_with_language(text: &str, lang: Language) -> TokenStream {
    TokenStream {
        tokens: analyze(text, lang),
        language: lang,
    }
}

/// Detect the language of `text`, then analyze it with that language's
/// stemmer (English rules when undetected).
pub fn detect_and_tokenize(text: &str) -> Result<TokenStream> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput("text to tokenize"));
    }
    let lang = detect_language(text);
    Ok(TokenStream {
        tokens: analyze(text, lang),
        language: lang,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn italian_singular_plural_share_a_stem() {
        let ts = detect_and_tokenize("gatto gatti").unwrap();
        assert_eq!(ts.language, Language::It);
        assert_eq!(ts.tokens.len(), 2);
        assert_eq!(ts.tokens[0], ts.tokens[1]);

        let ts = tokenize_with_language("il gatto e i gatti", Language::It);
        assert_eq!(ts.tokens[1], ts.tokens[4]);
    }

    #[test]
    fn english_inflections_map_to_run() {
        let ts = tokenize_with_language("Running RUNS", Language::En);
        assert_eq!(ts.tokens, vec!["run", "run"]);
        // Unknown language text takes the English rules.
        let ts = detect_and_tokenize("Running RUNS").unwrap();
        assert_eq!(ts.tokens, vec!["run", "run"]);
    }

    #[test]
    fn empty_text_is_rejected() {
        assert!(matches!(detect_and_tokenize(""), Err(Error::EmptyInput(_))));
        assert!(detect_and_tokenize("   ").is_err());
    }

    #[test]
    fn punctuation_splits_and_lowercases() {
        let ts = tokenize_with_language("Hello, WORLD! foo-bar", Language::En);
        assert_eq!(ts.tokens, vec!["hello", "world", "foo", "bar"]);
    }

    #[test]
    fn single_pass_non_idempotent_word_reaches_fixed_point() {
        let s = stem("agreed", Language::En);
        assert_eq!(stem(&s, Language::En), s);
    }

    proptest! {
        #[test]
        fn stemming_is_idempotent(word in "[a-z]{1,14}", li in 0usize..5) {
            let lang = Language::SUPPORTED[li];
            let once = stem(&word, lang);
            prop_assert_eq!(stem(&once, lang), once);
        }

        #[test]
        fn tokenization_is_deterministic(text in "[a-zA-Z ,.!?]{1,80}") {
            prop_assert_eq!(analyze(&text, Language::En), analyze(&text, Language::En));
        }
    }
}
