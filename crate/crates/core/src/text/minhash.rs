use std::collections::{HashMap, HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;
use xxhash_rust::xxh3::{xxh3_128, xxh3_64, xxh3_64_with_seed};

use super::chunk::Chunk;
use crate::error::{Error, Result};

pub const DEFAULT_PERMUTATIONS: usize = 128;
pub const DEFAULT_SHINGLE_WIDTH: usize = 5;
const DEFAULT_SEED: u64 = 0x5EED_0F_D1CE;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashSignature {
    pub hashes: Vec<u64>,
    pub shingle_width: usize,
}

impl MinHashSignature {
    /// Fraction of agreeing positions, an unbiased Jaccard estimate.
    pub fn jaccard(&self, other: &MinHashSignature) -> f64 {
        debug_assert_eq!(self.hashes.len(), other.hashes.len());
        if self.hashes.is_empty() {
            return 0.0;
        }
        let same = self
            .hashes
            .iter()
            .zip(&other.hashes)
            .filter(|(a, b)| a == b)
            .count();
        same as f64 / self.hashes.len() as f64
    }
}

/// Hash of every window of `width` consecutive lowercased words. Texts with
/// fewer words than `width` contribute a single shingle of all their words.
pub fn shingle_hashes(text: &str, width: usize) -> Vec<u64> {
    let words: Vec<u64> = text
        .unicode_words()
        .map(|w| {
            if w.bytes().any(|b| b.is_ascii_uppercase()) || !w.is_ascii() {
                xxh3_64(w.to_lowercase().as_bytes())
            } else {
                xxh3_64(w.as_bytes())
            }
        })
        .collect();
    if words.is_empty() {
        return Vec::new();
    }
    let width = width.max(1);
    let mut buf = [0u8; 8 * 16];
    let hash_window = |win: &[u64], buf: &mut [u8]| {
        let n = win.len().min(16);
        for (i, h) in win.iter().take(n).enumerate() {
            buf[i * 8..i * 8 + 8].copy_from_slice(&h.to_le_bytes());
        }
        let mut h = xxh3_64(&buf[..n * 8]);
        for extra in win.iter().skip(16) {
            h = xxh3_64_with_seed(&extra.to_le_bytes(), h);
        }
        h
    };
    if words.len() <= width {
        return vec![hash_window(&words, &mut buf)];
    }
    words.windows(width).map(|w| hash_window(w, &mut buf)).collect()
}

/// Seeded family of `num_permutations` hash functions `a*x + b mod 2^64`
/// with odd `a`, each a bijection on 64-bit shingle hashes.
#[derive(Debug, Clone)]
pub struct MinHasher {
    mul: Vec<u64>,
    add: Vec<u64>,
    shingle_width: usize,
}

impl MinHasher {
    pub fn new(num_permutations: usize, shingle_width: usize, seed: u64) -> Result<Self> {
        if num_permutations < 16 {
            return Err(Error::InvalidConfig(format!(
                "minhash needs at least 16 permutations, got {num_permutations}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mul = (0..num_permutations).map(|_| rng.gen::<u64>() | 1).collect();
        let add = (0..num_permutations).map(|_| rng.gen::<u64>()).collect();
        Ok(MinHasher {
            mul,
            add,
            shingle_width: shingle_width.max(1),
        })
    }

    pub fn num_permutations(&self) -> usize {
        self.mul.len()
    }

    pub fn signature_of_shingles(&self, shingles: &[u64]) -> MinHashSignature {
        let mut mins = vec![u64::MAX; self.mul.len()];
        for &s in shingles {
            // Final avalanche so low-entropy products do not bias the min.
            for (m, (a, b)) in mins.iter_mut().zip(self.mul.iter().zip(&self.add)) {
                let v = a.wrapping_mul(s).wrapping_add(*b);
                let v = v ^ (v >> 29);
                if v < *m {
                    *m = v;
                }
            }
        }
        MinHashSignature {
            hashes: mins,
            shingle_width: self.shingle_width,
        }
    }

    pub fn signature(&self, text: &str) -> MinHashSignature {
        self.signature_of_shingles(&shingle_hashes(text, self.shingle_width))
    }
}

/// Signature of a chunk's word shingles with the default seed.
pub fn minhash_signature(
    chunk: &Chunk,
    num_permutations: usize,
    shingle_width: usize,
) -> Result<MinHashSignature> {
    if chunk.text.trim().is_empty() {
        return Err(Error::EmptyInput("chunk text"));
    }
    Ok(MinHasher::new(num_permutations, shingle_width, DEFAULT_SEED)?.signature(&chunk.text))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DedupConfig {
    pub threshold: f64,
    pub permutations: usize,
    pub shingle_width: usize,
    pub bands: usize,
    pub rows: usize,
    /// Kept signatures retained for near-duplicate candidate lookup; older
    /// ones are evicted first. Exact duplicates are tracked separately and
    /// never forgotten.
    pub window: usize,
    pub seed: u64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig {
            threshold: 0.9,
            permutations: DEFAULT_PERMUTATIONS,
            shingle_width: DEFAULT_SHINGLE_WIDTH,
            bands: 32,
            rows: 4,
            window: 16_384,
            seed: DEFAULT_SEED,
        }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "dedup threshold must be in (0, 1], got {}",
                self.threshold
            )));
        }
        if self.bands == 0 || self.rows == 0 || self.bands * self.rows > self.permutations {
            return Err(Error::InvalidConfig(format!(
                "{} bands x {} rows do not fit {} permutations",
                self.bands, self.rows, self.permutations
            )));
        }
        if self.window == 0 {
            return Err(Error::InvalidConfig("dedup window must be >= 1".into()));
        }
        Ok(())
    }

    pub fn hasher(&self) -> Result<MinHasher> {
        MinHasher::new(self.permutations, self.shingle_width, self.seed)
    }
}

struct Kept {
    signature: Vec<u64>,
    band_keys: Vec<u64>,
}

/// Streaming near-duplicate filter with LSH banding.
///
/// Memory is bounded by the band tables and signatures of at most
/// `window` kept chunks, plus one 128-bit digest per distinct text.
pub struct DedupFilter {
    cfg: DedupConfig,
    exact: HashSet<u128>,
    bands: Vec<HashMap<u64, u64>>,
    kept: VecDeque<(u64, Kept)>,
    next_seq: u64,
}

impl DedupFilter {
    pub fn new(cfg: DedupConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(DedupFilter {
            bands: (0..cfg.bands).map(|_| HashMap::new()).collect(),
            cfg,
            exact: HashSet::new(),
            kept: VecDeque::new(),
            next_seq: 0,
        })
    }

    pub fn config(&self) -> &DedupConfig {
        &self.cfg
    }

    fn band_keys(&self, sig: &[u64]) -> Vec<u64> {
        let rows = self.cfg.rows;
        (0..self.cfg.bands)
            .map(|b| {
                let mut bytes = Vec::with_capacity(rows * 8 + 8);
                bytes.extend_from_slice(&(b as u64).to_le_bytes());
                for h in &sig[b * rows..(b + 1) * rows] {
                    bytes.extend_from_slice(&h.to_le_bytes());
                }
                xxh3_64(&bytes)
            })
            .collect()
    }

    fn lookup(&self, seq: u64) -> Option<&Kept> {
        let front = self.kept.front()?.0;
        let idx = seq.checked_sub(front)? as usize;
        self.kept.get(idx).map(|(_, k)| k)
    }

    /// Returns `true` when the chunk should be kept, recording it; `false`
    /// when it duplicates an already-kept chunk.
    pub fn admit(&mut self, text: &str, sig: &MinHashSignature) -> bool {
        let digest = xxh3_128(text.as_bytes());
        if self.exact.contains(&digest) {
            return false;
        }
        let keys = self.band_keys(&sig.hashes);
        let mut checked = HashSet::new();
        for (band, key) in keys.iter().enumerate() {
            if let Some(&seq) = self.bands[band].get(key) {
                if !checked.insert(seq) {
                    continue;
                }
                if let Some(k) = self.lookup(seq) {
                    let same = k
                        .signature
                        .iter()
                        .zip(&sig.hashes)
                        .filter(|(a, b)| a == b)
                        .count();
                    if same as f64 / sig.hashes.len() as f64 >= self.cfg.threshold {
                        return false;
                    }
                }
            }
        }
        self.exact.insert(digest);
        let seq = self.next_seq;
        self.next_seq += 1;
        for (band, key) in keys.iter().enumerate() {
            self.bands[band].insert(*key, seq);
        }
        self.kept.push_back((
            seq,
            Kept {
                signature: sig.hashes.clone(),
                band_keys: keys,
            },
        ));
        while self.kept.len() > self.cfg.window {
            let (old_seq, old) = self.kept.pop_front().expect("non-empty");
            for (band, key) in old.band_keys.iter().enumerate() {
                if self.bands[band].get(key) == Some(&old_seq) {
                    self.bands[band].remove(key);
                }
            }
        }
        true
    }

    pub fn kept_in_window(&self) -> usize {
        self.kept.len()
    }
}

/// Keep first occurrences; drop later chunks whose estimated Jaccard with a
/// kept chunk reaches `threshold`.
pub fn dedup_filter<I>(stream: I, threshold: f64) -> Result<Vec<Chunk>>
where
    I: IntoIterator<Item = (Chunk, MinHashSignature)>,
{
    let mut filter = DedupFilter::new(DedupConfig {
        threshold,
        ..Default::default()
    })?;
    Ok(stream
        .into_iter()
        .filter_map(|(chunk, sig)| filter.admit(&chunk.text, &sig).then_some(chunk))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Language;
    use proptest::prelude::*;

    fn chunk(text: &str) -> Chunk {
        Chunk {
            chunk_id: crate::text::chunk_id("d", (0, 1), text),
            doc_id: "d".into(),
            token_span: (0, 1),
            text: text.into(),
            language: Language::En,
        }
    }

    fn exact_jaccard(a: &str, b: &str, w: usize) -> f64 {
        let sa: HashSet<u64> = shingle_hashes(a, w).into_iter().collect();
        let sb: HashSet<u64> = shingle_hashes(b, w).into_iter().collect();
        sa.intersection(&sb).count() as f64 / sa.union(&sb).count() as f64
    }

    fn words(prefix: &str, n: usize) -> String {
        (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn identical_chunks_identical_signatures() {
        let a = minhash_signature(&chunk("the quick brown fox jumps"), 128, 5).unwrap();
        let b = minhash_signature(&chunk("the quick brown fox jumps"), 128, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.jaccard(&b), 1.0);
    }

    #[test]
    fn disjoint_vocabularies_estimate_near_zero() {
        let a = chunk(&words("alpha", 200));
        let b = chunk(&words("beta", 200));
        assert_eq!(exact_jaccard(&a.text, &b.text, 5), 0.0);
        let est = minhash_signature(&a, 128, 5)
            .unwrap()
            .jaccard(&minhash_signature(&b, 128, 5).unwrap());
        assert!(est < 0.1, "{est}");
    }

    #[test]
    fn half_overlap_estimate_within_tolerance() {
        // Shingle sets of sizes 300 sharing 200 -> Jaccard 200/400 = 0.5.
        let shared = words("s", 204);
        let a = format!("{shared} {}", words("a", 100));
        let b = format!("{shared} {}", words("b", 100));
        // Boundary shingles straddle shared/unique parts; measure exactly.
        let j = exact_jaccard(&a, &b, 5);
        assert!((j - 0.5).abs() < 0.01, "oracle jaccard {j}");
        for seed in 0..5 {
            let h = MinHasher::new(128, 5, seed).unwrap();
            let est = h.signature(&a).jaccard(&h.signature(&b));
            // 3 sigma of Binomial(128, 0.5) / 128 is about 0.13.
            assert!((est - j).abs() <= 0.15, "seed {seed}: est {est} vs {j}");
        }
    }

    #[test]
    fn too_few_permutations_rejected() {
        assert!(minhash_signature(&chunk("a b c"), 8, 5).is_err());
    }

    #[test]
    fn exact_duplicate_stream_collapses() {
        let a = chunk("one two three four five six");
        let sa = minhash_signature(&a, 128, 5).unwrap();
        let out = dedup_filter(vec![(a.clone(), sa.clone()), (a.clone(), sa)], 0.9).unwrap();
        assert_eq!(out, vec![a]);
    }

    #[test]
    fn unrelated_chunks_survive() {
        let a = chunk(&words("x", 50));
        let b = chunk(&words("y", 50));
        let sa = minhash_signature(&a, 128, 5).unwrap();
        let sb = minhash_signature(&b, 128, 5).unwrap();
        let out = dedup_filter(vec![(a.clone(), sa), (b.clone(), sb)], 0.9).unwrap();
        assert_eq!(out, vec![a, b]);
    }

    #[test]
    fn thousand_chunks_with_hundred_repeats() {
        let h = MinHasher::new(128, 5, DEFAULT_SEED).unwrap();
        let mut stream = Vec::new();
        for i in 0..900 {
            stream.push(chunk(&words(&format!("d{i}w"), 40)));
        }
        for i in 0..100 {
            let c = stream[i * 7].clone();
            stream.insert(300 + i * 5, c);
        }
        // Brute-force oracle: a chunk survives iff no earlier survivor has
        // exact shingle Jaccard >= threshold.
        let mut survivors: Vec<&Chunk> = Vec::new();
        for c in &stream {
            if !survivors
                .iter()
                .any(|s| exact_jaccard(&s.text, &c.text, 5) >= 0.9)
            {
                survivors.push(c);
            }
        }
        assert_eq!(survivors.len(), 900);
        let out = dedup_filter(
            stream.iter().map(|c| (c.clone(), h.signature(&c.text))),
            0.9,
        )
        .unwrap();
        assert_eq!(out.len(), 900);
    }

    #[test]
    fn exact_duplicates_outlive_the_window() {
        let mut f = DedupFilter::new(DedupConfig {
            window: 2,
            ..Default::default()
        })
        .unwrap();
        let h = f.config().hasher().unwrap();
        let texts: Vec<String> = (0..5).map(|i| words(&format!("t{i}"), 20)).collect();
        for t in &texts {
            assert!(f.admit(t, &h.signature(t)));
        }
        assert_eq!(f.kept_in_window(), 2);
        assert!(!f.admit(&texts[0], &h.signature(&texts[0])));
    }

    #[test]
    fn invalid_threshold_rejected() {
        assert!(dedup_filter(Vec::new(), 0.0).is_err());
        assert!(dedup_filter(Vec::new(), 1.5).is_err());
        assert!(dedup_filter(Vec::new(), 1.0).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn byte_identical_collapse_for_any_seed(seed in any::<u64>(), n in 1usize..40) {
            let text = words("p", n);
            let mut f = DedupFilter::new(DedupConfig { seed, ..Default::default() }).unwrap();
            let h = f.config().hasher().unwrap();
            prop_assert!(f.admit(&text, &h.signature(&text)));
            prop_assert!(!f.admit(&text, &h.signature(&text)));
        }
    }
}
