//! Deterministic synthetic corpora and vector sets for benchmarks and tests.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result};
use crate::ingest::{ChunkStore, StoreWriter};
use crate::text::{chunk_id, Chunk, Language};
use crate::util::normalize;

/// Pseudo-word vocabulary with Zipfian term frequencies.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    words: Vec<String>,
    cdf: Vec<f64>,
}

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "cr", "st", "tr",
    "pl", "gr",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ea", "io"];
const CODAS: &[&str] = &["", "", "n", "r", "s", "l", "x", "m"];

impl Vocabulary {
    pub fn new(size: usize, exponent: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = std::collections::HashSet::new();
        let mut words = Vec::with_capacity(size);
        while words.len() < size {
            let syllables = rng.gen_range(2..=4);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
                w.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
                w.push_str(CODAS[rng.gen_range(0..CODAS.len())]);
            }
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        let mut cdf = Vec::with_capacity(size);
        let mut acc = 0.0;
        for r in 1..=size {
            acc += 1.0 / (r as f64).powf(exponent);
            cdf.push(acc);
        }
        for c in &mut cdf {
            *c /= acc;
        }
        Vocabulary { words, cdf }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, rank: usize) -> &str {
        &self.words[rank]
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> &str {
        let u: f64 = rng.gen();
        let i = self.cdf.partition_point(|&c| c < u).min(self.words.len() - 1);
        &self.words[i]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub total_bytes: u64,
    pub doc_bytes: usize,
    pub docs_per_file: usize,
    pub vocab_size: usize,
    pub zipf_exponent: f64,
    /// Fraction of documents that repeat an earlier document verbatim.
    pub duplicate_rate: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            total_bytes: 50 << 20,
            doc_bytes: 16 << 10,
            docs_per_file: 64,
            vocab_size: 50_000,
            zipf_exponent: 1.0,
            duplicate_rate: 0.01,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub files: usize,
    pub documents: usize,
    pub bytes: u64,
}

fn synth_doc<R: Rng>(vocab: &Vocabulary, bytes: usize, rng: &mut R, out: &mut String) {
    out.clear();
    let mut sentence_len = 0;
    while out.len() < bytes {
        let w = vocab.sample(rng);
        if sentence_len == 0 {
            let mut cs = w.chars();
            if let Some(c) = cs.next() {
                out.extend(c.to_uppercase());
                out.push_str(cs.as_str());
            }
        } else {
            out.push_str(w);
        }
        sentence_len += 1;
        if sentence_len >= 8 && rng.gen_bool(0.12) {
            out.push_str(". ");
            sentence_len = 0;
        } else {
            out.push(' ');
        }
    }
}

/// Write plain-text files under `dir` until `spec.total_bytes` is reached.
/// Document statistics depend only on the spec, not on the total size.
pub fn write_text_corpus(dir: &Path, spec: &CorpusSpec) -> Result<CorpusSummary> {
    fs::create_dir_all(dir).at(dir)?;
    let vocab = Vocabulary::new(spec.vocab_size, spec.zipf_exponent, spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xC0FFEE);
    let mut summary = CorpusSummary::default();
    let mut doc = String::new();
    let mut recent: Vec<String> = Vec::new();
    while summary.bytes < spec.total_bytes {
        let path = dir.join(format!("doc-{:06}.txt", summary.files));
        let mut w = BufWriter::new(File::create(&path).at(&path)?);
        for i in 0..spec.docs_per_file {
            if summary.bytes >= spec.total_bytes {
                break;
            }
            if !recent.is_empty() && rng.gen_bool(spec.duplicate_rate.clamp(0.0, 1.0)) {
                doc = recent[rng.gen_range(0..recent.len())].clone();
            } else {
                synth_doc(&vocab, spec.doc_bytes, &mut rng, &mut doc);
                if recent.len() < 32 {
                    recent.push(doc.clone());
                } else {
                    let slot = rng.gen_range(0..recent.len());
                    recent[slot] = doc.clone();
                }
            }
            if i > 0 {
                w.write_all(b"\n\n").at(&path)?;
            }
            w.write_all(doc.as_bytes()).at(&path)?;
            summary.bytes += doc.len() as u64;
            summary.documents += 1;
        }
        w.flush().at(&path)?;
        summary.files += 1;
    }
    Ok(summary)
}

/// Parameters of a chunk store generated without going through parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreSpec {
    pub total_bytes: u64,
    pub chunk_words: usize,
    pub chunks_per_doc: usize,
    pub vocab_size: usize,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for StoreSpec {
    fn default() -> Self {
        StoreSpec {
            total_bytes: 512 << 20,
            chunk_words: 512,
            chunks_per_doc: 8,
            vocab_size: 50_000,
            zipf_exponent: 1.0,
            seed: 42,
        }
    }
}

/// Write Zipfian chunks of `spec.chunk_words` words straight into a chunk
/// store at `out` until `spec.total_bytes` of chunk text exist.
pub fn write_chunk_store(out: &Path, spec: &StoreSpec) -> Result<ChunkStore> {
    let vocab = Vocabulary::new(spec.vocab_size, spec.zipf_exponent, spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5704E);
    let mut w = StoreWriter::create(out)?;
    let mut bytes = 0u64;
    let mut text = String::new();
    let per_doc = spec.chunks_per_doc.max(1);
    let mut i = 0usize;
    while bytes < spec.total_bytes {
        text.clear();
        for j in 0..spec.chunk_words {
            if j > 0 {
                text.push(' ');
            }
            text.push_str(vocab.sample(&mut rng));
        }
        let doc_id = format!("synth-{:08}", i / per_doc);
        let start = ((i % per_doc) * spec.chunk_words) as u32;
        let span = (start, start + spec.chunk_words as u32);
        w.push(&Chunk {
            chunk_id: chunk_id(&doc_id, span, &text),
            doc_id,
            token_span: span,
            text: text.clone(),
            language: Language::En,
        })?;
        bytes += text.len() as u64;
        i += 1;
    }
    w.commit()
}

/// Keyword queries drawn from stored chunks: `words` distinct words of
/// vocabulary rank at least `min_rank`, taken from one random chunk each.
pub fn content_queries(store: &ChunkStore, vocab: &Vocabulary, n: usize, words: usize, min_rank: usize, seed: u64) -> Result<Vec<String>> {
    let rank: std::collections::HashMap<&str, usize> =
        vocab.words.iter().enumerate().map(|(r, w)| (w.as_str(), r)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n && !store.is_empty() && attempts < n * 20 {
        attempts += 1;
        let c = store.get_ref(rng.gen_range(0..store.len()))?;
        let mut picks: Vec<&str> = c
            .text
            .split_whitespace()
            .filter(|w| rank.get(w).is_some_and(|&r| r >= min_rank))
            .collect();
        picks.sort_unstable();
        picks.dedup();
        if picks.len() < words {
            continue;
        }
        for i in 0..words {
            let j = rng.gen_range(i..picks.len());
            picks.swap(i, j);
        }
        out.push(picks[..words].join(" "));
    }
    Ok(out)
}

/// `n` random unit vectors of dimension `d`.
pub fn random_unit_vectors(n: usize, d: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut v: Vec<f32> = (0..d).map(|_| gaussian(&mut rng)).collect();
            normalize(&mut v);
            v
        })
        .collect()
}

/// Standard normal sample (Box-Muller).
pub fn gaussian<R: Rng>(rng: &mut R) -> f32 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
}

/// Hierarchically clustered unit vectors: `clusters` well-separated
/// centers, each with `groups` sub-centers, each with `per_group` members.
/// Spreads are relative to unit-norm gaussian directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub dim: usize,
    pub clusters: usize,
    pub groups: usize,
    pub per_group: usize,
    pub group_spread: f32,
    pub member_spread: f32,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ClusteredData {
    pub vectors: Vec<Vec<f32>>,
    pub cluster_of: Vec<usize>,
    pub cluster_means: Vec<Vec<f32>>,
}

fn noise(rng: &mut ChaCha8Rng, d: usize, scale: f32) -> Vec<f32> {
    let mut v: Vec<f32> = (0..d).map(|_| gaussian(rng)).collect();
    normalize(&mut v);
    v.iter_mut().for_each(|x| *x *= scale);
    v
}

pub fn clustered_vectors(spec: &ClusterSpec) -> ClusteredData {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let mut vectors = Vec::new();
    let mut cluster_of = Vec::new();
    let mut cluster_means = Vec::new();
    for c in 0..spec.clusters {
        let center = noise(&mut rng, d, 1.0);
        let mut mean = vec![0.0f32; d];
        let mut members = 0usize;
        for _ in 0..spec.groups {
            let g = noise(&mut rng, d, spec.group_spread);
            let sub: Vec<f32> = center.iter().zip(&g).map(|(a, b)| a + b).collect();
            for _ in 0..spec.per_group {
                let e = noise(&mut rng, d, spec.member_spread);
                let mut v: Vec<f32> = sub.iter().zip(&e).map(|(a, b)| a + b).collect();
                normalize(&mut v);
                mean.iter_mut().zip(&v).for_each(|(m, x)| *m += x);
                members += 1;
                vectors.push(v);
                cluster_of.push(c);
            }
        }
        mean.iter_mut().for_each(|m| *m /= members.max(1) as f32);
        cluster_means.push(mean);
    }
    ClusteredData {
        vectors,
        cluster_of,
        cluster_means,
    }
}

/// Perturb a vector by relative noise and renormalize (query generation).
pub fn perturb(v: &[f32], scale: f32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let e = noise(rng, v.len(), scale);
    let mut out: Vec<f32> = v.iter().zip(&e).map(|(a, b)| a + b).collect();
    normalize(&mut out);
    out
}
