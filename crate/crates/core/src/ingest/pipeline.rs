use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::memory::{
    memory_report, trim_allocator, MemoryPhase, MemoryReport, MemorySample, MemorySampler,
    DEFAULT_DELTA_BOUND,
};
use super::shard::{flush_shard, ShardManifest};
use super::store::{merge_shards, ChunkStore};
use crate::error::{Error, IoContext, Result};
use crate::text::{
    ChunkConfig, ChunkWindows, DedupConfig, DedupFilter, DocFormat, DocumentReader, ParseOptions,
};

/// Count of in-flight queries; ingestion backs off while it is non-zero.
#[derive(Debug, Default)]
pub struct QueryPressure {
    in_flight: AtomicUsize,
}

pub struct PressureGuard<'a>(&'a QueryPressure);

impl Drop for PressureGuard<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::AcqRel);
    }
}

impl QueryPressure {
    pub fn enter(&self) -> PressureGuard<'_> {
        self.in_flight.fetch_add(1, Ordering::AcqRel);
        PressureGuard(self)
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.load(Ordering::Acquire)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// Chunks held in memory before a shard flush.
    pub batch_size: usize,
    /// Shard directory; defaults to `<out>.shards`.
    pub shard_dir: Option<PathBuf>,
    pub profile_memory: bool,
    #[serde(with = "duration_ms")]
    pub sample_interval: Duration,
    pub chunk: ChunkConfig,
    pub dedup: DedupConfig,
    pub parse: ParseOptions,
    /// Pause after a flush while queries are running.
    #[serde(with = "duration_ms")]
    pub throttle_interval: Duration,
    pub keep_shards: bool,
    pub memory_bound: u64,
    #[serde(skip)]
    pub pressure: Option<Arc<QueryPressure>>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            batch_size: 50,
            shard_dir: None,
            profile_memory: false,
            sample_interval: Duration::from_millis(100),
            chunk: ChunkConfig::default(),
            dedup: DedupConfig::default(),
            parse: ParseOptions::default(),
            throttle_interval: Duration::from_millis(20),
            keep_shards: false,
            memory_bound: DEFAULT_DELTA_BOUND,
            pressure: None,
        }
    }
}

pub(crate) mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        self.chunk.validate()?;
        self.dedup.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub files: usize,
    pub documents: usize,
    pub skipped_documents: usize,
    pub chunks_seen: usize,
    pub chunks_kept: usize,
    pub duplicates: usize,
    pub shards: usize,
    pub max_buffered: usize,
}

#[derive(Debug)]
pub struct IngestOutcome {
    pub store: ChunkStore,
    pub manifests: Vec<ShardManifest>,
    pub samples: Vec<MemorySample>,
    pub stats: IngestStats,
}

impl IngestOutcome {
    pub fn memory_report(&self, bound: u64) -> Result<MemoryReport> {
        memory_report(&self.samples, bound)
    }
}

/// Progress notifications, mainly for instrumentation and tests.
#[derive(Debug)]
pub enum IngestEvent<'a> {
    /// Buffer length right after a chunk was appended.
    Buffered(usize),
    Flushed(&'a ShardManifest),
    Skipped { path: &'a Path, error: &'a Error },
}

/// Supported files under `dir`, recursively, in sorted path order.
pub fn list_corpus_files(dir: &Path) -> Result<Vec<(PathBuf, DocFormat)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).at(&d)? {
            let path = entry.at(&d)?.path();
            if path.is_dir() {
                stack.push(path);
            } else if let Some(fmt) = DocFormat::from_path(&path) {
                out.push((path, fmt));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn clear_shards(dir: &Path) -> Result<()> {
    for entry in fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("shard-") {
            fs::remove_file(&path).at(&path)?;
        }
    }
    Ok(())
}

pub fn streaming_ingest(corpus_dir: &Path, out: &Path, cfg: &IngestConfig) -> Result<IngestOutcome> {
    streaming_ingest_with(corpus_dir, out, cfg, &mut |_| {})
}

/// Stream every document under `corpus_dir` through chunking and
/// deduplication into a bounded buffer, flushing a shard whenever it holds
/// `batch_size` chunks, then merge the shards into the store at `out`.
pub fn streaming_ingest_with(
    corpus_dir: &Path,
    out: &Path,
    cfg: &IngestConfig,
    observer: &mut dyn FnMut(IngestEvent<'_>),
) -> Result<IngestOutcome> {
    cfg.validate()?;
    let files = list_corpus_files(corpus_dir)?;
    if files.is_empty() {
        return Err(Error::EmptyCorpus(corpus_dir.to_path_buf()));
    }
    let shard_dir = cfg
        .shard_dir
        .clone()
        .unwrap_or_else(|| out.with_extension("shards"));
    fs::create_dir_all(&shard_dir).at(&shard_dir)?;
    clear_shards(&shard_dir)?;

    let sampler = cfg
        .profile_memory
        .then(|| MemorySampler::start(cfg.sample_interval, MemorySampler::DEFAULT_CAPACITY));
    let checkpoint = |phase| {
        if let Some(s) = &sampler {
            s.checkpoint(phase);
        }
    };
    checkpoint(MemoryPhase::IngestStart);

    let hasher = cfg.dedup.hasher()?;
    let mut dedup = DedupFilter::new(cfg.dedup.clone())?;
    let mut stats = IngestStats::default();
    let mut manifests: Vec<ShardManifest> = Vec::new();
    let mut buffer = Vec::with_capacity(cfg.batch_size);
    let mut parsed_any = false;

    let flush = |buffer: &mut Vec<_>,
                     manifests: &mut Vec<ShardManifest>,
                     observer: &mut dyn FnMut(IngestEvent<'_>)|
     -> Result<()> {
        let shard_id = manifests.len() as u32;
        let m = flush_shard(buffer, shard_id, &shard_dir)?;
        observer(IngestEvent::Flushed(&m));
        manifests.push(m);
        // Drop the batch outright and hand freed pages back to the OS.
        *buffer = Vec::with_capacity(cfg.batch_size);
        trim_allocator();
        checkpoint(MemoryPhase::PostFlush);
        if let Some(p) = &cfg.pressure {
            if p.in_flight() > 0 {
                std::thread::sleep(cfg.throttle_interval);
            }
        }
        Ok(())
    };

    for (path, format) in &files {
        stats.files += 1;
        let reader = match DocumentReader::open(path, *format, cfg.parse.clone()) {
            Ok(r) => r,
            Err(e) => {
                observer(IngestEvent::Skipped { path, error: &e });
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        for doc in reader {
            let doc = match doc {
                Ok(d) => d,
                Err(e) => {
                    stats.skipped_documents += 1;
                    observer(IngestEvent::Skipped { path, error: &e });
                    continue;
                }
            };
            parsed_any = true;
            stats.documents += 1;
            for chunk in ChunkWindows::new(&doc, cfg.chunk)? {
                stats.chunks_seen += 1;
                let sig = hasher.signature(&chunk.text);
                if !dedup.admit(&chunk.text, &sig) {
                    stats.duplicates += 1;
                    continue;
                }
                buffer.push(chunk);
                stats.chunks_kept += 1;
                stats.max_buffered = stats.max_buffered.max(buffer.len());
                observer(IngestEvent::Buffered(buffer.len()));
                if buffer.len() >= cfg.batch_size {
                    flush(&mut buffer, &mut manifests, observer)?;
                }
            }
        }
    }
    if !parsed_any {
        return Err(Error::EmptyCorpus(corpus_dir.to_path_buf()));
    }
    if !buffer.is_empty() {
        flush(&mut buffer, &mut manifests, observer)?;
    }
    drop(dedup);
    stats.shards = manifests.len();

    let store = merge_shards(&manifests, out)?;
    checkpoint(MemoryPhase::IngestEnd);
    let samples = sampler.map(MemorySampler::stop).unwrap_or_default();
    if !cfg.keep_shards {
        let _ = fs::remove_dir_all(&shard_dir);
    }
    Ok(IngestOutcome {
        store,
        manifests,
        samples,
        stats,
    })
}
