use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::text::normalized_words;
use crate::util::normalize;

/// Identity of a deterministic embedding function.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub name: String,
    pub dimension: usize,
    pub seed: u64,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec {
            name: "hashed-word-trigram".into(),
            dimension: 768,
            seed: 42,
        }
    }
}

const WORD_TAG: u8 = b'w';
const TRIGRAM_TAG: u8 = b't';

#[inline]
fn add_feature(out: &mut [f32], tag: u8, feature: &[u8], weight: f32, seed: u64, scratch: &mut Vec<u8>) {
    scratch.clear();
    scratch.push(tag);
    scratch.extend_from_slice(feature);
    let h = xxh3_64_with_seed(scratch, seed);
    let idx = (h % out.len() as u64) as usize;
    if h >> 63 == 0 {
        out[idx] += weight;
    } else {
        out[idx] -= weight;
    }
}

/// Signed feature hashing of lowercased words and their boundary-marked
/// character trigrams, L2-normalized. Texts without words map to the zero
/// vector.
pub fn embed(text: &str, spec: &EmbedderSpec) -> Vec<f32> {
    let mut out = vec![0.0f32; spec.dimension];
    if spec.dimension == 0 {
        return out;
    }
    let mut scratch = Vec::with_capacity(64);
    let mut chars: Vec<char> = Vec::with_capacity(32);
    let mut buf = [0u8; 16];
    for word in normalized_words(text) {
        add_feature(&mut out, WORD_TAG, word.as_bytes(), 1.0, spec.seed, &mut scratch);
        chars.clear();
        chars.push('^');
        chars.extend(word.chars());
        chars.push('$');
        let grams = chars.len().saturating_sub(2);
        if grams == 0 {
            continue;
        }
        let w = 1.0 / (grams as f32).sqrt();
        for g in chars.windows(3) {
            let mut n = 0;
            for c in g {
                n += c.encode_utf8(&mut buf[n..]).len();
            }
            add_feature(&mut out, TRIGRAM_TAG, &buf[..n], w, spec.seed, &mut scratch);
        }
    }
    normalize(&mut out);
    out
}

/// An [`embed`] provider with an optional fixed per-call cost, standing in
/// for a neural model's inference time in latency benchmarks.
#[derive(Debug, Clone)]
pub struct Embedder {
    pub spec: EmbedderSpec,
    pub simulated_cost: Duration,
}

impl Embedder {
    pub fn new(spec: EmbedderSpec) -> Self {
        Embedder {
            spec,
            simulated_cost: Duration::ZERO,
        }
    }

    pub fn with_cost(mut self, cost: Duration) -> Self {
        self.simulated_cost = cost;
        self
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension
    }

    pub fn embed(&self, text: &str) -> Vec<f32> {
        let start = Instant::now();
        let v = embed(text, &self.spec);
        if let Some(rest) = self.simulated_cost.checked_sub(start.elapsed()) {
            std::thread::sleep(rest);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::{cosine, norm};

    #[test]
    fn deterministic_and_unit_norm() {
        let s = EmbedderSpec::default();
        let a = embed("The quick brown fox", &s);
        assert_eq!(a, embed("The quick brown fox", &s));
        assert_eq!(a.len(), 768);
        assert!((norm(&a) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn shared_words_are_closer() {
        let s = EmbedderSpec::default();
        let q = embed("cat sat", &s);
        let near = cosine(&q, &embed("cat sat mat", &s));
        let far = cosine(&q, &embed("xyzzy quux", &s));
        assert!(near > far, "{near} {far}");
        assert!(near > 0.5);
    }

    #[test]
    fn spelling_variants_share_trigrams() {
        let s = EmbedderSpec::default();
        let q = embed("colour", &s);
        assert!(cosine(&q, &embed("color", &s)) > cosine(&q, &embed("planet", &s)) + 0.2);
    }

    #[test]
    fn seed_changes_vectors() {
        let a = embed("hello world", &EmbedderSpec::default());
        let b = embed(
            "hello world",
            &EmbedderSpec {
                seed: 7,
                ..Default::default()
            },
        );
        assert_ne!(a, b);
    }

    #[test]
    fn empty_text_is_zero() {
        assert!(embed("  ", &EmbedderSpec::default()).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn simulated_cost_is_respected() {
        let e = Embedder::new(EmbedderSpec::default()).with_cost(Duration::from_millis(5));
        let t = Instant::now();
        e.embed("x");
        assert!(t.elapsed() >= Duration::from_millis(5));
    }
}
