use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::Serialize;

use tierkite::dense::{build_dense, ColdIndex, DenseBuildOptions, Embedder, FlatIndex, IvfParams, PqParams};
use tierkite::engine::bench::{bench_latency, bench_memory, bench_quant, to_json, LatencyOptions, QuantOptions};
use tierkite::engine::eval::{eval_retrieval, parse_qrels, parse_trec_run, write_trec_run, Run};
use tierkite::engine::service::serve;
use tierkite::engine::{
    config_from_env, Channels, Engine, EngineConfig, EnginePaths, QueryOptions, FLAT_FILE,
};
use tierkite::fusion::{calibrate_qar, AlphaMode, CalibrateOptions, DeltaMode, DEFAULT_BETA};
use tierkite::ingest::{streaming_ingest, IngestConfig, DEFAULT_DELTA_BOUND};
use tierkite::sparse::{build_sparse, Bm25Params, SparseBuildOptions};
use tierkite::synth::CorpusSpec;
use tierkite::{Error, Result};

/// Hybrid BM25 + IVF-PQ retrieval engine.
///
/// Configuration comes from host detection, then TIERKITE_PROFILE
/// (laptop|full), then the JSON file named by TIERKITE_CONFIG.
#[derive(Parser)]
#[command(name = "tierkite", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Stream a corpus directory into the engine's chunk store.
    Ingest {
        corpus: PathBuf,
        engine_dir: PathBuf,
        /// Append through the live ingest job (also refreshes indexes).
        #[arg(long)]
        append: bool,
        /// Sample resident memory and report the delta.
        #[arg(long)]
        profile_memory: bool,
        /// Write the memory samples as CSV.
        #[arg(long)]
        memory_csv: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        batch_size: usize,
    },
    /// Build the BM25 index over the chunk store.
    IndexSparse {
        engine_dir: PathBuf,
        #[arg(long, default_value_t = 1.2)]
        k1: f64,
        #[arg(long, default_value_t = 0.75)]
        b: f64,
    },
    /// Embed every chunk and build the IVF-PQ cold index.
    IndexDense {
        engine_dir: PathBuf,
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 8)]
        nbits: usize,
        #[arg(long, default_value_t = 1000)]
        nlist: usize,
        #[arg(long, default_value_t = 10)]
        nprobe: usize,
        /// Fail instead of shrinking nlist on small stores.
        #[arg(long)]
        strict_nlist: bool,
        /// Also write an exact fp32 index for calibration.
        #[arg(long)]
        flat: bool,
    },
    /// Measure quantization recall loss and write a calibration record.
    Calibrate {
        #[arg(long)]
        fp32: PathBuf,
        #[arg(long)]
        q8: PathBuf,
        /// One query per line (a leading `id<TAB>` is ignored).
        #[arg(long)]
        queries: PathBuf,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_BETA)]
        beta: f64,
        #[arg(long)]
        absolute: bool,
        #[arg(long)]
        corpus_id: Option<String>,
        /// Defaults to calibration.json next to the q8 index.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one hybrid query.
    Query {
        engine_dir: PathBuf,
        #[arg(long)]
        q: String,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value = "fixed")]
        alpha_mode: AlphaMode,
        #[arg(long)]
        no_cache: bool,
        #[arg(long, value_parser = parse_channels, default_value = "hybrid")]
        channels: Channels,
    },
    /// Serve /health, /query, /ingest and /stats over HTTP.
    Serve {
        engine_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
    },
    /// Per-stage latency percentiles over a query file.
    BenchLatency {
        engine_dir: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 1000)]
        runs: usize,
        #[arg(long, default_value_t = 10)]
        batch: usize,
        /// Drop page caches and reopen mapped files before each query.
        #[arg(long)]
        cold: bool,
        /// Artificial embedding cost per query, in milliseconds.
        #[arg(long)]
        embed_cost_ms: Option<u64>,
    },
    /// Resident-memory delta of streaming ingestion across corpus sizes.
    BenchMemory {
        #[arg(long)]
        workdir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "50,200,1024")]
        sizes_mb: Vec<u64>,
        /// Keep generated corpora for reuse.
        #[arg(long)]
        keep: bool,
    },
    /// Recall of IVF-PQ configurations on clustered synthetic vectors.
    BenchQuant {
        /// Comma-separated MxNBITS pairs.
        #[arg(long, value_delimiter = ',', default_value = "4x4,8x8")]
        grid: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1,10,50")]
        nprobes: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        nlist: usize,
        #[arg(long, default_value_t = 200)]
        queries: usize,
    },
    /// Recall@k, nDCG@10 and MRR of a run against graded qrels.
    Eval {
        #[arg(long)]
        qrels: PathBuf,
        /// A TREC run file to score.
        #[arg(long, conflicts_with = "engine_dir")]
        run: Option<PathBuf>,
        /// Produce the run by querying this engine.
        #[arg(long, requires = "queries")]
        engine_dir: Option<PathBuf>,
        /// TSV of `query_id<TAB>text`.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(short, long, default_value_t = 100)]
        k: usize,
        #[arg(long, default_value = "fixed")]
        alpha_mode: AlphaMode,
        #[arg(long)]
        write_run: Option<PathBuf>,
    },
}

fn parse_channels(s: &str) -> std::result::Result<Channels, String> {
    match s {
        "hybrid" => Ok(Channels::Hybrid),
        "dense" => Ok(Channels::DenseOnly),
        "sparse" => Ok(Channels::SparseOnly),
        o => Err(format!("unknown channels {o:?} (hybrid|dense|sparse)")),
    }
}

fn emit<T: Serialize>(report: &T, table: &str) {
    eprint!("{table}");
    println!("{}", to_json(report));
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn query_lines(path: &Path) -> Result<Vec<(String, String)>> {
    Ok(read(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| match l.split_once('\t') {
            Some((id, text)) => (id.trim().to_string(), text.trim().to_string()),
            None => (format!("q{}", i + 1), l.trim().to_string()),
        })
        .collect())
}

fn run(cli: Cli, cfg: EngineConfig) -> Result<()> {
    match cli.cmd {
        Cmd::Ingest {
            corpus,
            engine_dir,
            append,
            profile_memory,
            memory_csv,
            batch_size,
        } => {
            if append {
                let engine = Engine::open(&engine_dir, cfg)?;
                let rep = engine.ingest(&corpus)?;
                let table = format!(
                    "{}: +{} chunks, {} total, {} migrated, {:.0} ms\n",
                    rep.job, rep.chunks_added, rep.total_chunks, rep.migrated, rep.elapsed_ms
                );
                emit(&rep, &table);
                return Ok(());
            }
            std::fs::create_dir_all(&engine_dir).map_err(|e| Error::io(&engine_dir, e))?;
            let paths = EnginePaths::new(&engine_dir, &cfg);
            let icfg = IngestConfig {
                batch_size,
                profile_memory: profile_memory || memory_csv.is_some(),
                ..IngestConfig::default()
            };
            let out = streaming_ingest(&corpus, &paths.store, &icfg)?;
            let mut report = serde_json::json!({ "store": paths.store, "chunks": out.store.len(), "stats": out.stats });
            let mut table = format!(
                "{} files, {} documents, {} chunks kept ({} duplicates), {} shards\n",
                out.stats.files, out.stats.documents, out.stats.chunks_kept, out.stats.duplicates, out.stats.shards
            );
            if icfg.profile_memory {
                let mem = out.memory_report(DEFAULT_DELTA_BOUND)?;
                if let Some(p) = &memory_csv {
                    std::fs::write(p, mem.to_csv()).map_err(|e| Error::io(p, e))?;
                }
                table.push_str(&format!(
                    "resident delta {:.1} MB over {} samples: {:?}\n",
                    mem.delta as f64 / 1048576.0,
                    mem.samples.len(),
                    mem.verdict
                ));
                report["memory"] = serde_json::json!({
                    "delta_bytes": mem.delta, "min_rss": mem.min, "max_rss": mem.max,
                    "bound": mem.bound, "verdict": mem.verdict,
                });
            }
            emit(&report, &table);
        }
        Cmd::IndexSparse { engine_dir, k1, b } => {
            let paths = EnginePaths::new(&engine_dir, &cfg);
            let store = tierkite::ingest::ChunkStore::open(&paths.store)?;
            let opts = SparseBuildOptions {
                params: Bm25Params { k1, b },
                ..SparseBuildOptions::default()
            };
            let meta = build_sparse(&store, &paths.sparse, &opts)?;
            let table = format!(
                "{} docs, {} terms, avg length {:.1}\n",
                meta.doc_count, meta.term_count, meta.avg_doc_len
            );
            emit(&meta, &table);
        }
        Cmd::IndexDense {
            engine_dir,
            m,
            nbits,
            nlist,
            nprobe,
            strict_nlist,
            flat,
        } => {
            let paths = EnginePaths::new(&engine_dir, &cfg);
            let store = tierkite::ingest::ChunkStore::open(&paths.store)?;
            let opts = DenseBuildOptions {
                embedder: cfg.embedder.clone(),
                ivf: IvfParams {
                    nlist,
                    nprobe,
                    pq: PqParams { m, nbits },
                    ..IvfParams::default()
                },
                adapt_nlist: !strict_nlist,
                flat_out: flat.then(|| engine_dir.join(FLAT_FILE)),
                ..DenseBuildOptions::default()
            };
            let rep = build_dense(&store, &paths.dense, &opts)?;
            let table = format!(
                "{} vectors, nlist {}, trained on {}, file {} bytes (metadata {})\n",
                rep.vectors,
                rep.nlist,
                rep.trained_on,
                rep.layout.total(),
                rep.layout.metadata()
            );
            emit(&rep, &table);
        }
        Cmd::Calibrate {
            fp32,
            q8,
            queries,
            k,
            beta,
            absolute,
            corpus_id,
            out,
        } => {
            let flat = FlatIndex::open(&fp32)?;
            let cold = ColdIndex::open(&q8)?;
            let embedder = Embedder::new(cfg.embedder.clone());
            let qs: Vec<Vec<f32>> = query_lines(&queries)?.iter().map(|(_, t)| embedder.embed(t)).collect();
            let opts = CalibrateOptions {
                corpus_id: corpus_id.unwrap_or_else(|| q8.display().to_string()),
                k,
                beta,
                delta_mode: if absolute { DeltaMode::Absolute } else { DeltaMode::Relative },
            };
            let rec = calibrate_qar(&flat, &cold, &qs, &opts)?;
            let out = out.unwrap_or_else(|| {
                q8.parent()
                    .unwrap_or(Path::new("."))
                    .join(tierkite::engine::CALIBRATION_FILE)
            });
            rec.save(&out)?;
            let table = format!(
                "{} queries, mean degradation {:.4}, beta {}, written to {}\n",
                rec.per_query.len(),
                rec.mean_degradation,
                rec.beta,
                out.display()
            );
            emit(&rec, &table);
        }
        Cmd::Query {
            engine_dir,
            q,
            k,
            alpha_mode,
            no_cache,
            channels,
        } => {
            let engine = Engine::open(&engine_dir, cfg)?;
            let opts = QueryOptions {
                k,
                alpha_mode,
                use_cache: !no_cache,
                channels,
                ..QueryOptions::default()
            };
            let res = engine.query(&q, &opts)?;
            let views = engine.views(&engine.snapshot(), &res.hits)?;
            let mut table = format!("{:>4}  {:>10}  {:<12} {}\n", "rank", "score", "channel", "chunk");
            for v in &views {
                table.push_str(&format!(
                    "{:>4}  {:>10.6}  {:<12} {} ({})\n",
                    v.rank,
                    v.score,
                    v.channel.as_str(),
                    v.chunk_id,
                    v.doc_id
                ));
            }
            table.push_str(&format!("{:.2} ms, alpha {}\n", res.timings.total_ms, res.alpha));
            emit(
                &serde_json::json!({ "hits": views, "timings": res.timings, "alpha": res.alpha, "cache_hit": res.cache_hit }),
                &table,
            );
        }
        Cmd::Serve { engine_dir, addr } => {
            let workers = cfg.worker_count;
            let engine = Arc::new(Engine::open(&engine_dir, cfg)?);
            let svc = serve(engine, &addr, workers)?;
            eprintln!("listening on {}", svc.url());
            svc.wait();
        }
        Cmd::BenchLatency {
            engine_dir,
            queries,
            runs,
            batch,
            cold,
            embed_cost_ms,
        } => {
            let mut cfg = cfg;
            if let Some(c) = embed_cost_ms {
                cfg.embed_cost_ms = c;
            }
            let engine = Engine::open(&engine_dir, cfg)?;
            let qs: Vec<String> = query_lines(&queries)?.into_iter().map(|(_, t)| t).collect();
            let opts = LatencyOptions {
                runs,
                batch,
                cold,
                ..LatencyOptions::default()
            };
            let rep = bench_latency(&engine, &qs, &opts)?;
            emit(&rep, &rep.table());
        }
        Cmd::BenchMemory { workdir, sizes_mb, keep } => {
            let sizes: Vec<u64> = sizes_mb.iter().map(|m| m << 20).collect();
            let rep = bench_memory(&workdir, &sizes, &CorpusSpec::default(), keep)?;
            emit(&rep, &rep.table());
        }
        Cmd::BenchQuant {
            grid,
            nprobes,
            nlist,
            queries,
        } => {
            let grid = grid
                .iter()
                .map(|g| {
                    let (m, b) = g
                        .split_once('x')
                        .ok_or_else(|| Error::InvalidConfig(format!("grid entry {g:?} is not MxNBITS")))?;
                    let p = |s: &str| s.parse::<usize>().map_err(|_| Error::InvalidConfig(format!("bad grid entry {g:?}")));
                    Ok((p(m)?, p(b)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let opts = QuantOptions {
                grid,
                nprobes,
                nlist,
                queries,
                ..QuantOptions::default()
            };
            let rep = bench_quant(&opts)?;
            emit(&rep, &rep.table());
        }
        Cmd::Eval {
            qrels,
            run,
            engine_dir,
            queries,
            k,
            alpha_mode,
            write_run,
        } => {
            let qrels = parse_qrels(&read(&qrels)?)?;
            let run: Run = match (run, engine_dir, queries) {
                (Some(r), _, _) => parse_trec_run(&read(&r)?)?,
                (None, Some(dir), Some(qf)) => {
                    let engine = Engine::open(&dir, cfg)?;
                    let snap = engine.snapshot();
                    let opts = QueryOptions {
                        k,
                        alpha_mode,
                        use_cache: false,
                        ..QueryOptions::default()
                    };
                    let mut scored: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
                    for (id, text) in query_lines(&qf)? {
                        let res = engine.query(&text, &opts)?;
                        let views = engine.views(&snap, &res.hits)?;
                        let mut seen = HashSet::new();
                        let docs = views
                            .into_iter()
                            .filter(|v| seen.insert(v.doc_id.clone()))
                            .map(|v| (v.doc_id, v.score))
                            .collect();
                        scored.insert(id, docs);
                    }
                    if let Some(p) = &write_run {
                        std::fs::write(p, write_trec_run(&scored, "tierkite")).map_err(|e| Error::io(p, e))?;
                    }
                    scored
                        .into_iter()
                        .map(|(q, v)| (q, v.into_iter().map(|(d, _)| d).collect()))
                        .collect()
                }
                _ => return Err(Error::InvalidConfig("eval needs --run or --engine-dir with --queries".into())),
            };
            let rep = eval_retrieval(&qrels, &run, &[5, 10, 20]);
            let table = format!(
                "{} queries ({} skipped): R@5 {:.4}  R@10 {:.4}  R@20 {:.4}  nDCG@10 {:.4}  MRR {:.4}\n",
                rep.queries, rep.skipped, rep.recall[&5], rep.recall[&10], rep.recall[&20], rep.ndcg_at_10, rep.mrr
            );
            emit(&rep, &table);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = config_from_env().and_then(|cfg| run(cli, cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
