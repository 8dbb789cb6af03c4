use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

/// Languages with dedicated stemming rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    It,
    Fr,
    De,
    Es,
    #[default]
    Unknown,
}

impl Language {
    pub const SUPPORTED: [Language; 5] = [
        Language::En,
        Language::It,
        Language::Fr,
        Language::De,
        Language::Es,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::It => "it",
            Language::Fr => "fr",
            Language::De => "de",
            Language::Es => "es",
            Language::Unknown => "unknown",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Language::En => 0,
            Language::It => 1,
            Language::Fr => 2,
            Language::De => 3,
            Language::Es => 4,
            Language::Unknown => 255,
        }
    }

    pub fn from_code(code: u8) -> Language {
        match code {
            0 => Language::En,
            1 => Language::It,
            2 => Language::Fr,
            3 => Language::De,
            4 => Language::Es,
            _ => Language::Unknown,
        }
    }

    /// Language whose stemming rules apply; unknown text uses English.
    pub fn stemming(self) -> Language {
        match self {
            Language::Unknown => Language::En,
            l => l,
        }
    }

    fn stopwords(self) -> &'static [&'static str] {
        match self {
            Language::En => &[
                "the", "and", "of", "to", "in", "is", "that", "it", "was", "for", "on", "are",
                "with", "as", "this", "be", "at", "by", "from", "or", "an", "which", "have",
                "not", "were", "but", "they", "their", "has", "been", "would", "what", "when",
            ],
            Language::It => &[
                "il", "di", "che", "è", "la", "per", "un", "una", "non", "sono", "gli", "le",
                "della", "del", "con", "nel", "alla", "questo", "come", "anche", "più", "dei",
                "delle", "lo", "ma", "si", "ha", "e", "i", "da", "dal", "nella",
            ],
            Language::Fr => &[
                "le", "la", "les", "de", "des", "et", "est", "une", "un", "du", "que", "qui",
                "dans", "pour", "pas", "sur", "au", "aux", "avec", "ce", "cette", "sont", "il",
                "elle", "nous", "vous", "ils", "mais", "ou", "par", "plus", "été",
            ],
            Language::De => &[
                "der", "die", "das", "und", "ist", "nicht", "ein", "eine", "zu", "den", "dem",
                "mit", "sich", "des", "auf", "für", "im", "von", "auch", "es", "sie", "wird",
                "bei", "oder", "sind", "aus", "wie", "werden", "nach", "noch", "einer", "über",
            ],
            Language::Es => &[
                "el", "la", "los", "las", "de", "que", "y", "en", "un", "una", "es", "por",
                "con", "para", "del", "se", "no", "al", "lo", "como", "más", "pero", "sus",
                "su", "este", "esta", "fue", "son", "está", "muy", "también", "entre",
            ],
            Language::Unknown => &[],
        }
    }
}

impl std::fmt::Display for Language {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Language {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "en" => Ok(Language::En),
            "it" => Ok(Language::It),
            "fr" => Ok(Language::Fr),
            "de" => Ok(Language::De),
            "es" => Ok(Language::Es),
            "unknown" => Ok(Language::Unknown),
            other => Err(crate::Error::InvalidConfig(format!("unknown language {other:?}"))),
        }
    }
}

/// Words inspected when scoring a document.
const DETECT_SAMPLE_WORDS: usize = 2000;

/// Stopword-frequency language detection over the supported languages.
///
/// Texts without any stopword hit fall back to a word-ending profile so
/// that short keyword queries ("gatto gatti") still resolve; anything
/// undecided is [`Language::Unknown`].
pub fn detect_language(text: &str) -> Language {
    let mut scores = [0usize; 5];
    let mut words = 0usize;
    let mut vowel_final = 0usize;
    let mut o_or_i_final = 0usize;
    let mut s_final = 0usize;
    for w in text.unicode_words().take(DETECT_SAMPLE_WORDS) {
        let lw = w.to_lowercase();
        words += 1;
        for (i, lang) in Language::SUPPORTED.iter().enumerate() {
            if lang.stopwords().contains(&lw.as_str()) {
                scores[i] += 1;
            }
        }
        match lw.chars().last() {
            Some('a' | 'e' | 'i' | 'o') => {
                vowel_final += 1;
                if lw.ends_with('o') || lw.ends_with('i') {
                    o_or_i_final += 1;
                }
            }
            Some('s') => s_final += 1,
            _ => {}
        }
    }
    let (best, &best_score) = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("non-empty");
    if best_score > 0 {
        return Language::SUPPORTED[best];
    }
    // Italian inflection ends almost every word in a vowel, with -o/-i
    // dominating; English keywords rarely do.
    if words >= 2 && vowel_final == words && o_or_i_final * 2 >= words && s_final == 0 {
        return Language::It;
    }
    Language::Unknown
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_each_supported_language() {
        let cases = [
            ("the cat is on the table and it was sleeping", Language::En),
            ("il gatto è sulla tavola e non vuole scendere per la cena", Language::It),
            ("le chat est sur la table et il ne veut pas descendre", Language::Fr),
            ("die Katze ist auf dem Tisch und sie will nicht runter", Language::De),
            ("el gato está en la mesa y no quiere bajar para la cena", Language::Es),
        ];
        for (text, lang) in cases {
            assert_eq!(detect_language(text), lang, "{text}");
        }
    }

    #[test]
    fn keyword_only_italian_falls_back_to_endings() {
        assert_eq!(detect_language("gatto gatti"), Language::It);
        assert_eq!(detect_language("xyzzy quux"), Language::Unknown);
    }

    #[test]
    fn detection_is_deterministic() {
        let t = "der die das und the and of";
        let first = detect_language(t);
        for _ in 0..10 {
            assert_eq!(detect_language(t), first);
        }
    }

    #[test]
    fn codes_round_trip() {
        for l in Language::SUPPORTED.iter().copied().chain([Language::Unknown]) {
            assert_eq!(Language::from_code(l.code()), l);
            assert_eq!(l.as_str().parse::<Language>().unwrap(), l);
        }
    }
}
