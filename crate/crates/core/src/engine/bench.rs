use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::runtime::{Engine, QueryOptions, StageTimings};
use crate::dense::{ColdIndex, DenseSearcher, FlatIndex, IvfParams, PqParams};
use crate::error::{Error, Result};
use crate::ingest::{resident_bytes, streaming_ingest, IngestConfig, Verdict, DEFAULT_DELTA_BOUND};
use crate::synth::{clustered_vectors, perturb, write_text_corpus, ClusterSpec, CorpusSpec};
use crate::util::percentile_nearest_rank;

pub const MIN_BENCH_QUERIES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub mean: f64,
}

impl Percentiles {
    pub fn of(samples: &[f64]) -> Self {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        Percentiles {
            p50: percentile_nearest_rank(&s, 50.0),
            p95: percentile_nearest_rank(&s, 95.0),
            p99: percentile_nearest_rank(&s, 99.0),
            mean: if s.is_empty() {
                0.0
            } else {
                s.iter().sum::<f64>() / s.len() as f64
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyOptions {
    pub runs: usize,
    pub batch: usize,
    pub cold: bool,
    pub k: usize,
    pub seed: u64,
    pub warmup: usize,
}

impl Default for LatencyOptions {
    fn default() -> Self {
        LatencyOptions {
            runs: 1000,
            batch: 10,
            cold: false,
            k: 10,
            seed: 42,
            warmup: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub stage: String,
    pub ms: Percentiles,
    /// Share of the summed stage p50s (serial attribution).
    pub share_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub mode: String,
    pub queries: usize,
    pub runs: usize,
    pub chunks: usize,
    pub stages: Vec<StageRow>,
    /// Wall clock per query; stages overlap, so this is not their sum.
    pub total: Percentiles,
    /// Batch wall time divided by batch size (warm mode).
    pub batch_per_query_ms: Option<Percentiles>,
    pub cold_start_method: Option<String>,
}

impl LatencyReport {
    pub fn stage(&self, name: &str) -> Option<&StageRow> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{} run: {} queries x {} runs over {} chunks\n{:<14}{:>10}{:>10}{:>10}{:>8}\n",
            self.mode, self.queries, self.runs, self.chunks, "stage", "p50 ms", "p95 ms", "p99 ms", "%"
        );
        for s in &self.stages {
            let _ = writeln!(
                out,
                "{:<14}{:>10.3}{:>10.3}{:>10.3}{:>8.1}",
                s.stage, s.ms.p50, s.ms.p95, s.ms.p99, s.share_pct
            );
        }
        let _ = writeln!(
            out,
            "{:<14}{:>10.3}{:>10.3}{:>10.3}",
            "total", self.total.p50, self.total.p95, self.total.p99
        );
        if let Some(b) = &self.batch_per_query_ms {
            let _ = writeln!(out, "batch per-query mean {:.3} ms (p50 {:.3})", b.mean, b.p50);
        }
        if let Some(m) = &self.cold_start_method {
            let _ = writeln!(out, "cold start: {m}");
        }
        out
    }
}

fn stage_rows(timings: &[StageTimings]) -> Vec<StageRow> {
    let pick: [(&str, fn(&StageTimings) -> f64); 4] = [
        ("embed", |t| t.embed_ms),
        ("dense_search", |t| t.dense_ms),
        ("sparse_search", |t| t.sparse_ms),
        ("fusion", |t| t.fusion_ms),
    ];
    let mut rows: Vec<StageRow> = pick
        .iter()
        .map(|(name, f)| StageRow {
            stage: name.to_string(),
            ms: Percentiles::of(&timings.iter().map(f).collect::<Vec<_>>()),
            share_pct: 0.0,
        })
        .collect();
    let sum: f64 = rows.iter().map(|r| r.ms.p50).sum();
    if sum > 0.0 {
        for r in &mut rows {
            r.share_pct = 100.0 * r.ms.p50 / sum;
        }
    }
    rows
}

/// Time `runs` queries. Warm mode runs a warmup pass, then randomized
/// batches of `batch`; cold mode drops page caches and reopens every mapped
/// file before each query. The semantic cache is bypassed in both.
pub fn bench_latency(engine: &Engine, queries: &[String], opts: &LatencyOptions) -> Result<LatencyReport> {
    if queries.len() < MIN_BENCH_QUERIES {
        return Err(Error::Bench(format!(
            "need at least {MIN_BENCH_QUERIES} queries, got {}",
            queries.len()
        )));
    }
    let qopts = QueryOptions {
        k: opts.k,
        use_cache: false,
        ..QueryOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order = Vec::with_capacity(opts.runs);
    while order.len() < opts.runs {
        let mut perm: Vec<usize> = (0..queries.len()).collect();
        perm.shuffle(&mut rng);
        order.extend(perm);
    }
    order.truncate(opts.runs.max(1));

    let mut timings = Vec::with_capacity(order.len());
    let mut cold_method = None;
    let mut batch_pq = Vec::new();
    if opts.cold {
        for &i in &order {
            cold_method = Some(engine.drop_caches()?.to_string());
            timings.push(engine.query(&queries[i], &qopts)?.timings);
        }
    } else {
        for q in queries.iter().take(opts.warmup) {
            engine.query(q, &qopts)?;
        }
        for batch in order.chunks(opts.batch.max(1)) {
            let t = Instant::now();
            for &i in batch {
                timings.push(engine.query(&queries[i], &qopts)?.timings);
            }
            batch_pq.push(t.elapsed().as_secs_f64() * 1e3 / batch.len() as f64);
        }
    }
    let totals: Vec<f64> = timings.iter().map(|t| t.total_ms).collect();
    Ok(LatencyReport {
        mode: if opts.cold { "cold" } else { "warm" }.to_string(),
        queries: queries.len(),
        runs: timings.len(),
        chunks: engine.snapshot().chunk_count(),
        stages: stage_rows(&timings),
        total: Percentiles::of(&totals),
        batch_per_query_ms: (!opts.cold).then(|| Percentiles::of(&batch_pq)),
        cold_start_method: cold_method,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRun {
    pub corpus_bytes: u64,
    pub documents: usize,
    pub chunks: usize,
    pub delta_bytes: u64,
    pub min_rss: u64,
    pub max_rss: u64,
    pub samples: usize,
    pub seconds: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBenchReport {
    pub runs: Vec<MemoryRun>,
    pub bound: u64,
    /// max(delta) / min(delta) across sizes.
    pub spread: f64,
    pub baseline_rss: Option<u64>,
}

impl MemoryBenchReport {
    pub fn table(&self) -> String {
        let mb = |b: u64| b as f64 / (1 << 20) as f64;
        let mut out = format!(
            "{:>12}{:>10}{:>10}{:>12}{:>10}{:>10}\n",
            "corpus MB", "docs", "chunks", "delta MB", "secs", "verdict"
        );
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{:>12.1}{:>10}{:>10}{:>12.1}{:>10.1}{:>10}",
                mb(r.corpus_bytes),
                r.documents,
                r.chunks,
                mb(r.delta_bytes),
                r.seconds,
                format!("{:?}", r.verdict).to_lowercase()
            );
        }
        let _ = writeln!(out, "spread max/min delta = {:.2}x, bound {:.0} MB", self.spread, mb(self.bound));
        out
    }
}

/// Generate a text corpus per size in `sizes` (same document statistics,
/// fixed seed) under `workdir`, stream it into a store with memory
/// profiling, and report each run's resident-memory delta.
pub fn bench_memory(workdir: &Path, sizes: &[u64], template: &CorpusSpec, keep: bool) -> Result<MemoryBenchReport> {
    std::fs::create_dir_all(workdir).map_err(|e| Error::io(workdir, e))?;
    let baseline = resident_bytes();
    let mut runs = Vec::new();
    for &size in sizes {
        let corpus = workdir.join(format!("corpus-{size}"));
        let spec = CorpusSpec {
            total_bytes: size,
            ..template.clone()
        };
        let marker = corpus.join(".spec.json");
        let want = serde_json::to_string(&spec)?;
        if std::fs::read_to_string(&marker).ok().as_deref() != Some(want.as_str()) {
            let _ = std::fs::remove_dir_all(&corpus);
            write_text_corpus(&corpus, &spec)?;
            std::fs::write(&marker, &want).map_err(|e| Error::io(&marker, e))?;
        }
        let out = workdir.join(format!("store-{size}.tks"));
        let cfg = IngestConfig {
            profile_memory: true,
            ..IngestConfig::default()
        };
        let t = Instant::now();
        let res = streaming_ingest(&corpus, &out, &cfg)?;
        let seconds = t.elapsed().as_secs_f64();
        let rep = res.memory_report(DEFAULT_DELTA_BOUND)?;
        runs.push(MemoryRun {
            corpus_bytes: spec.total_bytes,
            documents: res.stats.documents,
            chunks: res.store.len(),
            delta_bytes: rep.delta,
            min_rss: rep.min,
            max_rss: rep.max,
            samples: rep.samples.len(),
            seconds,
            verdict: rep.verdict,
        });
        drop(res);
        let _ = std::fs::remove_file(&out);
        if !keep {
            let _ = std::fs::remove_dir_all(&corpus);
        }
    }
    let deltas: Vec<u64> = runs.iter().map(|r| r.delta_bytes).collect();
    let lo = deltas.iter().copied().min().unwrap_or(0).max(1);
    let hi = deltas.iter().copied().max().unwrap_or(0);
    Ok(MemoryBenchReport {
        runs,
        bound: DEFAULT_DELTA_BOUND,
        spread: hi as f64 / lo as f64,
        baseline_rss: baseline,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantOptions {
    pub data: ClusterSpec,
    pub grid: Vec<(usize, usize)>,
    pub nprobes: Vec<usize>,
    pub nlist: usize,
    pub queries: usize,
    pub query_noise: f32,
    pub k: usize,
    pub seed: u64,
}

impl Default for QuantOptions {
    fn default() -> Self {
        QuantOptions {
            data: ClusterSpec {
                dim: 768,
                clusters: 20,
                groups: 100,
                per_group: 10,
                group_spread: 0.7,
                member_spread: 0.1,
                seed: 42,
            },
            grid: vec![(4, 4), (8, 8)],
            nprobes: vec![1, 10, 50],
            nlist: IvfParams::default().nlist,
            queries: 200,
            query_noise: 0.1,
            k: 10,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantRow {
    pub m: usize,
    pub nbits: usize,
    pub nprobe: usize,
    pub recall: f64,
    pub code_bytes: usize,
    pub compression: f64,
    pub train_seconds: f64,
    pub search_ms_per_query: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantReport {
    pub vectors: usize,
    pub dim: usize,
    pub nlist: usize,
    pub k: usize,
    pub rows: Vec<QuantRow>,
}

impl QuantReport {
    pub fn recall(&self, m: usize, nbits: usize, nprobe: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| (r.m, r.nbits, r.nprobe) == (m, nbits, nprobe))
            .map(|r| r.recall)
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{} vectors, d={}, nlist={}, recall@{} vs exact search\n{:>4}{:>7}{:>8}{:>10}{:>8}{:>10}{:>10}\n",
            self.vectors, self.dim, self.nlist, self.k, "m", "nbits", "nprobe", "recall", "bytes", "ratio", "ms/q"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>4}{:>7}{:>8}{:>10.4}{:>8}{:>9.0}x{:>10.3}",
                r.m, r.nbits, r.nprobe, r.recall, r.code_bytes, r.compression, r.search_ms_per_query
            );
        }
        out
    }
}

/// Recall@k of IVF-PQ configurations against exact search on clustered
/// synthetic vectors, with queries perturbed from stored members.
pub fn bench_quant(opts: &QuantOptions) -> Result<QuantReport> {
    let data = clustered_vectors(&opts.data);
    let d = opts.data.dim;
    let n = data.vectors.len();
    if n == 0 {
        return Err(Error::Bench("empty vector set".into()));
    }
    let flat_vs = data.vectors.concat();
    drop(data.cluster_means);
    let ids: Vec<u32> = (0..n as u32).collect();
    let mut flat = FlatIndex::new(d);
    flat.add(&ids, &flat_vs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let stride = (n / opts.queries.max(1)).max(1);
    let queries: Vec<Vec<f32>> = (0..opts.queries)
        .map(|i| perturb(&data.vectors[(i * stride + i % stride.max(1)) % n], opts.query_noise, &mut rng))
        .collect();
    drop(data.vectors);
    let truth: Vec<Vec<u32>> = queries
        .iter()
        .map(|q| flat.search(q, opts.k).iter().map(|h| h.id).collect())
        .collect();
    drop(flat);
    let mut rows = Vec::new();
    for &(m, nbits) in &opts.grid {
        let params = IvfParams {
            nlist: opts.nlist,
            nprobe: 1,
            pq: PqParams { m, nbits },
            ..IvfParams::default()
        };
        let t = Instant::now();
        let mut idx = ColdIndex::train(&flat_vs, d, &params)?;
        idx.add(&ids, &flat_vs)?;
        let train_seconds = t.elapsed().as_secs_f64();
        let code_bytes = idx.codebook().code_len();
        for &nprobe in &opts.nprobes {
            let t = Instant::now();
            let mut found = 0usize;
            for (q, tr) in queries.iter().zip(&truth) {
                found += idx
                    .search_with(q, opts.k, nprobe)
                    .iter()
                    .filter(|h| tr.contains(&h.id))
                    .count();
            }
            rows.push(QuantRow {
                m,
                nbits,
                nprobe,
                recall: found as f64 / (opts.k * queries.len()) as f64,
                code_bytes,
                compression: (d * 4) as f64 / code_bytes as f64,
                train_seconds,
                search_ms_per_query: t.elapsed().as_secs_f64() * 1e3 / queries.len() as f64,
            });
        }
    }
    Ok(QuantReport {
        vectors: n,
        dim: d,
        nlist: opts.nlist,
        k: opts.k,
        rows,
    })
}

/// Render any report as pretty JSON.
pub fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

/// Per-size summary used when comparing latency across corpora.
pub fn latency_spread(reports: &BTreeMap<String, LatencyReport>) -> Option<f64> {
    let means: Vec<f64> = reports
        .values()
        .filter_map(|r| r.batch_per_query_ms.map(|b| b.mean))
        .collect();
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = means.iter().copied().fold(0.0, f64::max);
    (means.len() >= 2 && lo > 0.0).then(|| hi / lo)
}
