use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::config::EngineConfig;
use super::governor::{Action, Component, ResourceLedger};
use super::journal::Journal;
use super::lock::{WriteLock, WriteToken};
use crate::dense::{ColdIndex, DenseSearcher, Embedder, IvfParams};
use crate::error::{Error, IoContext, Result};
use crate::fusion::{
    compute_adaptive_alpha, fuse_rrf, fuse_rrf_weighted, qar_adjust, rerank_stub, AlphaMode, CacheKey,
    CalibrationRecord, Channel, ChannelRanking, FusedHit, SemanticCache,
};
use crate::hot::{load_hot, migrate_to_cold, persist_hot, HotGraph, MigrationRequest};
use crate::ingest::{concat_stores, resident_bytes, streaming_ingest, ChunkStore, IngestConfig, QueryPressure};
use crate::sparse::{build_sparse, SparseBuildOptions, SparseIndex};
use crate::util::sync_dir;

pub const STORE_FILE: &str = "chunks.tks";
pub const SPARSE_FILE: &str = "sparse.tks";
pub const DENSE_FILE: &str = "dense.tks";
pub const FLAT_FILE: &str = "flat.tks";
pub const HOT_FILE: &str = "hot.tks";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const JOURNAL_FILE: &str = "journal.wal";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnginePaths {
    pub dir: PathBuf,
    pub store: PathBuf,
    pub sparse: PathBuf,
    pub dense: PathBuf,
    pub hot: PathBuf,
    pub calibration: PathBuf,
    pub journal: PathBuf,
}

impl EnginePaths {
    pub fn new(dir: &Path, cfg: &EngineConfig) -> Self {
        EnginePaths {
            dir: dir.to_path_buf(),
            store: cfg.path_in(dir, &cfg.store_path, STORE_FILE),
            sparse: cfg.path_in(dir, &cfg.sparse_path, SPARSE_FILE),
            dense: cfg.path_in(dir, &cfg.dense_path, DENSE_FILE),
            hot: cfg.path_in(dir, &cfg.hot_path, HOT_FILE),
            calibration: cfg.path_in(dir, &cfg.calibration_path, CALIBRATION_FILE),
            journal: dir.join(JOURNAL_FILE),
        }
    }

    fn mapped_files(&self) -> [&Path; 3] {
        [&self.store, &self.sparse, &self.dense]
    }
}

/// Immutable view of every index; queries hold one for their whole run.
#[derive(Debug)]
pub struct Snapshot {
    pub generation: u64,
    pub store: Option<ChunkStore>,
    pub sparse: Option<SparseIndex>,
    pub hot: Option<HotGraph>,
    pub cold: Option<ColdIndex>,
    pub calibration: Option<CalibrationRecord>,
}

impl Snapshot {
    fn load(paths: &EnginePaths, cfg: &EngineConfig, generation: u64, hot: Option<HotGraph>) -> Result<Self> {
        let opt = |p: &Path| p.exists();
        let store = opt(&paths.store).then(|| ChunkStore::open(&paths.store)).transpose()?;
        let sparse = opt(&paths.sparse).then(|| SparseIndex::open(&paths.sparse)).transpose()?;
        let mut cold = opt(&paths.dense).then(|| ColdIndex::open(&paths.dense)).transpose()?;
        if let Some(c) = cold.as_mut() {
            c.set_nprobe(cfg.nprobe);
        }
        let mut hot = match hot {
            Some(h) => Some(h),
            None => opt(&paths.hot).then(|| load_hot(&paths.hot)).transpose()?,
        };
        if let Some(h) = hot.as_mut() {
            h.set_ef_search(cfg.hot.ef_search);
        }
        let calibration = opt(&paths.calibration)
            .then(|| CalibrationRecord::load(&paths.calibration))
            .transpose()?;
        Ok(Snapshot {
            generation,
            store,
            sparse,
            hot,
            cold,
            calibration,
        })
    }

    pub fn chunk_count(&self) -> usize {
        self.store.as_ref().map_or(0, |s| s.len())
    }

    pub fn has_dense(&self) -> bool {
        self.hot.as_ref().is_some_and(|h| !h.is_empty()) || self.cold.as_ref().is_some_and(|c| !c.is_empty())
    }

    pub fn is_ready(&self) -> bool {
        self.store.is_some() && (self.sparse.is_some() || self.has_dense())
    }

    /// Every id reachable through the dense channel, sorted.
    pub fn dense_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .hot
            .iter()
            .flat_map(|h| h.ids_in_order())
            .chain(self.cold.iter().flat_map(|c| c.ids()))
            .collect();
        ids.sort_unstable();
        ids
    }

    fn component_bytes(&self, cfg: &EngineConfig) -> [(Component, u64); 4] {
        [
            (Component::SparseIndex, self.sparse.as_ref().map_or(0, |s| s.file_size())),
            (Component::HotGraph, self.hot.as_ref().map_or(0, |h| h.memory_bytes())),
            (Component::ColdIndex, self.cold.as_ref().map_or(0, |c| c.layout().total())),
            (Component::Cache, cache_bytes(cfg)),
        ]
    }
}

fn cache_bytes(cfg: &EngineConfig) -> u64 {
    let per_entry = cfg.embedder.dimension as u64 * 4 + cfg.search_depth as u64 * 64;
    cfg.cache_capacity as u64 * per_entry
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channels {
    #[default]
    Hybrid,
    DenseOnly,
    SparseOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryOptions {
    pub k: usize,
    pub alpha_mode: AlphaMode,
    pub use_cache: bool,
    pub rerank: bool,
    pub channels: Channels,
}

impl Default for QueryOptions {
    fn default() -> Self {
        QueryOptions {
            k: 10,
            alpha_mode: AlphaMode::Fixed,
            use_cache: true,
            rerank: false,
            channels: Channels::Hybrid,
        }
    }
}

/// Per-stage wall-clock time in milliseconds. Dense and sparse run
/// concurrently, so stages may sum to more than `total_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub embed_ms: f64,
    pub dense_ms: f64,
    pub sparse_ms: f64,
    pub fusion_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub hits: Vec<FusedHit>,
    pub cache_hit: bool,
    pub alpha: f64,
    pub generation: u64,
    pub timings: StageTimings,
}

/// A hit resolved against the chunk store, ready for display or citation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitView {
    pub rank: usize,
    pub doc_ref: u32,
    pub chunk_id: String,
    pub doc_id: String,
    pub score: f64,
    pub channel: Channel,
    pub dense_rank: Option<u32>,
    pub sparse_rank: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum JobStatus {
    Running,
    Committed { report: IngestJobReport },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestJobReport {
    pub job: String,
    pub chunks_added: usize,
    pub total_chunks: usize,
    pub migrated: usize,
    pub generation: u64,
    pub elapsed_ms: f64,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// The query engine over one directory of index files.
pub struct Engine {
    cfg: EngineConfig,
    paths: EnginePaths,
    snapshot: RwLock<Arc<Snapshot>>,
    cache: Mutex<SemanticCache>,
    embedder: Mutex<Option<Arc<Embedder>>>,
    ledger: Mutex<ResourceLedger>,
    write_lock: WriteLock,
    journal: Journal,
    pressure: Arc<QueryPressure>,
    jobs: Mutex<BTreeMap<String, JobStatus>>,
    last_migration: Mutex<Instant>,
    started: Instant,
    next_job: AtomicU64,
    served: AtomicU64,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("dir", &self.paths.dir)
            .field("generation", &self.snapshot().generation)
            .finish()
    }
}

impl Engine {
    /// Open (creating if needed) the engine directory `dir`. Missing index
    /// files are allowed; queries then fail with `NotReady`.
    pub fn open(dir: &Path, cfg: EngineConfig) -> Result<Self> {
        cfg.validate()?;
        fs::create_dir_all(dir).at(dir)?;
        let paths = EnginePaths::new(dir, &cfg);
        let journal = Journal::open(&paths.journal)?;
        let mut ledger = ResourceLedger::new(cfg.memory_ceiling_bytes, Duration::from_secs(cfg.idle_unload_seconds));
        ledger.declare(Component::Embedder, cfg.embedder_bytes);
        let snap = Snapshot::load(&paths, &cfg, 1, None)?;
        for (c, bytes) in snap.component_bytes(&cfg) {
            ledger.declare(c, bytes);
            if c.mandatory() && bytes > 0 {
                ledger.request_load(c, Duration::ZERO)?;
            }
        }
        let next_job = journal.entries()?.len() as u64 + 1;
        Ok(Engine {
            cache: Mutex::new(SemanticCache::new(cfg.cache_capacity, cfg.cache_threshold)),
            embedder: Mutex::new(None),
            ledger: Mutex::new(ledger),
            write_lock: WriteLock::new(),
            journal,
            pressure: Arc::new(QueryPressure::default()),
            jobs: Mutex::new(BTreeMap::new()),
            last_migration: Mutex::new(Instant::now()),
            started: Instant::now(),
            next_job: AtomicU64::new(next_job),
            served: AtomicU64::new(0),
            snapshot: RwLock::new(Arc::new(snap)),
            paths,
            cfg,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn paths(&self) -> &EnginePaths {
        &self.paths
    }

    pub fn journal(&self) -> &Journal {
        &self.journal
    }

    pub fn write_lock(&self) -> &WriteLock {
        &self.write_lock
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.snapshot.read())
    }

    fn now(&self) -> Duration {
        self.started.elapsed()
    }

    pub fn ledger(&self) -> ResourceLedger {
        self.ledger.lock().clone()
    }

    pub fn embedder_loaded(&self) -> bool {
        self.embedder.lock().is_some()
    }

    fn apply_actions(&self, actions: &[(Component, Action)]) {
        for (c, a) in actions {
            if matches!(a, Action::Evict | Action::Unload) {
                match c {
                    Component::Cache => self.cache.lock().clear(),
                    Component::Embedder => *self.embedder.lock() = None,
                    _ => {}
                }
            }
        }
    }

    /// The embedder, loaded on demand through the ledger.
    pub fn embedder(&self) -> Result<Arc<Embedder>> {
        let actions = self.ledger.lock().request_load(Component::Embedder, self.now())?;
        self.apply_actions(&actions);
        let mut slot = self.embedder.lock();
        Ok(Arc::clone(slot.get_or_insert_with(|| {
            Arc::new(
                Embedder::new(self.cfg.embedder.clone())
                    .with_cost(Duration::from_millis(self.cfg.embed_cost_ms)),
            )
        })))
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let e = self.embedder()?;
        let v = e.embed(text);
        self.ledger.lock().touch(Component::Embedder, self.now());
        Ok(v)
    }

    /// Run the idle-unload policy at the current time.
    pub fn governor_tick(&self) -> Vec<(Component, Action)> {
        self.governor_tick_at(self.now())
    }

    /// Run the idle-unload policy as if `now` had elapsed since startup.
    pub fn governor_tick_at(&self, now: Duration) -> Vec<(Component, Action)> {
        let actions = self.ledger.lock().governor_tick(now);
        self.apply_actions(&actions);
        actions
    }

    fn cache_lookup(&self, q: &[f32], key: CacheKey) -> Option<Vec<FusedHit>> {
        if !self.ledger.lock().is_loaded(Component::Cache) {
            return None;
        }
        self.ledger.lock().touch(Component::Cache, self.now());
        self.cache.lock().lookup(q, key)
    }

    fn cache_insert(&self, q: &[f32], key: CacheKey, hits: Vec<FusedHit>, generation: u64) {
        let loaded = self.ledger.lock().request_load(Component::Cache, self.now());
        match loaded {
            Ok(actions) => self.apply_actions(&actions),
            Err(_) => return,
        }
        if self.snapshot().generation == generation {
            self.cache.lock().insert(q, key, hits);
        }
    }

    pub fn cache_stats(&self) -> (usize, u64, u64) {
        let c = self.cache.lock();
        let (h, m) = c.stats();
        (c.len(), h, m)
    }

    pub fn clear_cache(&self) {
        self.cache.lock().clear();
    }

    /// Hybrid retrieval: embed, consult the cache, search hot, cold and
    /// sparse concurrently, fuse, adjust for quantization loss, cut to `k`.
    pub fn query(&self, text: &str, opts: &QueryOptions) -> Result<QueryResult> {
        let t0 = Instant::now();
        let _pressure = self.pressure.enter();
        let snap = self.snapshot();
        if !snap.is_ready() {
            return Err(Error::NotReady("no chunk store or index loaded".into()));
        }
        self.served.fetch_add(1, Ordering::Relaxed);
        let cfg = &self.cfg;
        let alpha = match opts.alpha_mode {
            AlphaMode::Fixed => cfg.alpha,
            AlphaMode::Adaptive => compute_adaptive_alpha(
                snap.calibration.as_ref(),
                cfg.alpha,
                cfg.beta_adaptive,
                snap.cold.as_ref().is_some_and(|c| !c.is_empty()),
            ),
        };
        let mut timings = StageTimings::default();
        if opts.k == 0 {
            timings.total_ms = ms(t0.elapsed());
            return Ok(QueryResult {
                hits: Vec::new(),
                cache_hit: false,
                alpha,
                generation: snap.generation,
                timings,
            });
        }
        let want_dense = opts.channels != Channels::SparseOnly && snap.has_dense();
        let want_sparse = opts.channels != Channels::DenseOnly && snap.sparse.is_some();
        let use_cache = opts.use_cache && cfg.cache_enabled && opts.channels == Channels::Hybrid;
        let key = CacheKey {
            k: opts.k,
            alpha_mode: opts.alpha_mode,
        };

        let te = Instant::now();
        let qv = if want_dense || use_cache {
            Some(self.embed(text)?)
        } else {
            None
        };
        timings.embed_ms = ms(te.elapsed());

        if use_cache {
            if let Some(hits) = self.cache_lookup(qv.as_deref().expect("embedded"), key) {
                timings.total_ms = ms(t0.elapsed());
                return Ok(QueryResult {
                    hits,
                    cache_hit: true,
                    alpha,
                    generation: snap.generation,
                    timings,
                });
            }
        }

        let depth = opts.k.max(cfg.search_depth);
        let (dense, sparse) = std::thread::scope(|s| -> Result<_> {
            let dense = want_dense.then(|| {
                let q = qv.as_deref().expect("embedded");
                let snap = &snap;
                s.spawn(move || {
                    let t = Instant::now();
                    let r = search_dense(snap, q, depth);
                    (r, t.elapsed())
                })
            });
            let ts = Instant::now();
            let sparse = match (&snap.sparse, want_sparse) {
                (Some(idx), true) => idx
                    .search(text, depth)?
                    .into_iter()
                    .map(|h| (h.chunk_ordinal, h.score, Channel::Sparse))
                    .collect(),
                _ => Vec::new(),
            };
            let sparse_t = ts.elapsed();
            let dense = dense.map(|h| h.join().expect("dense search panicked"));
            Ok((dense, (sparse, sparse_t)))
        })?;
        let (dense_hits, dense_t) = dense.unwrap_or_default();
        timings.dense_ms = ms(dense_t);
        timings.sparse_ms = ms(sparse.1);

        let tf = Instant::now();
        let d = ChannelRanking::from_scores(dense_hits);
        let s = ChannelRanking::from_scores(sparse.0);
        let mut hits = if opts.alpha_mode == AlphaMode::Fixed && alpha == 0.5 {
            fuse_rrf(&d, &s, cfg.rrf_k, depth)
        } else {
            fuse_rrf_weighted(&d, &s, cfg.rrf_k, alpha, depth)
        };
        if let Some(rec) = &snap.calibration {
            hits = qar_adjust(hits, rec, cfg.qar_mode);
        }
        if opts.rerank && cfg.reranking {
            hits = rerank_stub(hits);
        }
        hits.truncate(opts.k);
        timings.fusion_ms = ms(tf.elapsed());

        if use_cache {
            self.cache_insert(qv.as_deref().expect("embedded"), key, hits.clone(), snap.generation);
        }
        timings.total_ms = ms(t0.elapsed());
        Ok(QueryResult {
            hits,
            cache_hit: false,
            alpha,
            generation: snap.generation,
            timings,
        })
    }

    /// Resolve hits to chunk identifiers.
    pub fn views(&self, snap: &Snapshot, hits: &[FusedHit]) -> Result<Vec<HitView>> {
        let store = snap
            .store
            .as_ref()
            .ok_or_else(|| Error::NotReady("no chunk store".into()))?;
        hits.iter()
            .enumerate()
            .map(|(i, h)| {
                let c = store.get_ref(h.doc_ref as usize)?;
                Ok(HitView {
                    rank: i + 1,
                    doc_ref: h.doc_ref,
                    chunk_id: c.chunk_id.to_string(),
                    doc_id: c.doc_id.to_string(),
                    score: h.qar_adjusted_score,
                    channel: h.primary_channel(),
                    dense_rank: h.dense_rank,
                    sparse_rank: h.sparse_rank,
                })
            })
            .collect()
    }

    /// Reopen every mapped file and drop its cached pages (best effort);
    /// the in-memory hot tier is kept. Also empties the semantic cache and
    /// unloads the embedder.
    pub fn drop_caches(&self) -> Result<&'static str> {
        let _t = self.write_lock.acquire("reopen");
        let old = self.snapshot();
        let method = advise_dontneed(&self.paths.mapped_files());
        let snap = Snapshot::load(&self.paths, &self.cfg, old.generation + 1, old.hot.clone())?;
        if let Some(c) = &snap.cold {
            c.advise_cold();
        }
        *self.snapshot.write() = Arc::new(snap);
        self.cache.lock().clear();
        if self.ledger.lock().unload(Component::Embedder, self.now()) {
            *self.embedder.lock() = None;
        }
        Ok(method)
    }

    pub fn pressure(&self) -> &Arc<QueryPressure> {
        &self.pressure
    }

    pub fn jobs(&self) -> BTreeMap<String, JobStatus> {
        self.jobs.lock().clone()
    }

    pub fn job(&self, id: &str) -> Option<JobStatus> {
        self.jobs.lock().get(id).cloned()
    }

    /// Claim the write lock for a new ingest job; `WouldBlock` when another
    /// writer is active.
    pub fn begin_ingest(&self) -> Result<(String, WriteToken)> {
        let id = format!("ingest-{}", self.next_job.fetch_add(1, Ordering::Relaxed));
        let token = self.write_lock.try_acquire(&id)?;
        self.jobs.lock().insert(id.clone(), JobStatus::Running);
        Ok((id, token))
    }

    /// Ingest `corpus` synchronously, failing fast if a writer is active.
    pub fn ingest(&self, corpus: &Path) -> Result<IngestJobReport> {
        let (id, token) = self.begin_ingest()?;
        self.run_ingest(&id, corpus, token)
    }

    /// Start an ingest job on a low-priority background thread.
    pub fn spawn_ingest(self: &Arc<Self>, corpus: PathBuf) -> Result<String> {
        let (id, token) = self.begin_ingest()?;
        let engine = Arc::clone(self);
        let job = id.clone();
        std::thread::Builder::new()
            .name(job.clone())
            .spawn(move || {
                lower_thread_priority();
                let _ = engine.run_ingest(&job, &corpus, token);
            })
            .at(&self.paths.dir)?;
        Ok(id)
    }

    /// Run an ingest job under an already held write token: stream the
    /// corpus into a delta store, append it, rebuild the sparse index, insert
    /// the new vectors into the hot tier (migrating overflow to cold),
    /// persist, then publish a new snapshot.
    pub fn run_ingest(&self, job: &str, corpus: &Path, token: WriteToken) -> Result<IngestJobReport> {
        let detail = serde_json::json!({ "corpus": corpus.display().to_string() });
        let started = self.journal.append(job, "ingest", "started", detail);
        let result = started.and_then(|_| self.ingest_inner(job, corpus));
        let status = match &result {
            Ok(r) => {
                let _ = self
                    .journal
                    .append(job, "ingest", "committed", serde_json::to_value(r).unwrap_or_default());
                JobStatus::Committed { report: r.clone() }
            }
            Err(e) => {
                log::error!("{job} failed: {e}");
                let dir = &self.paths.dir;
                let _ = fs::remove_file(with_suffix(&self.paths.store, "next"));
                let _ = fs::remove_file(with_suffix(&self.paths.sparse, "next"));
                let _ = fs::remove_file(dir.join(format!("{job}.delta.tks")));
                let _ = fs::remove_dir_all(dir.join(format!("{job}.shards")));
                let _ = self
                    .journal
                    .append(job, "ingest", "failed", serde_json::json!({ "error": e.to_string() }));
                JobStatus::Failed { error: e.to_string() }
            }
        };
        self.jobs.lock().insert(job.to_string(), status);
        drop(token);
        result
    }

    fn ingest_inner(&self, job: &str, corpus: &Path) -> Result<IngestJobReport> {
        let t0 = Instant::now();
        let dir = &self.paths.dir;
        let delta_path = dir.join(format!("{job}.delta.tks"));
        let cfg = IngestConfig {
            shard_dir: Some(dir.join(format!("{job}.shards"))),
            pressure: Some(Arc::clone(&self.pressure)),
            ..IngestConfig::default()
        };
        let delta = streaming_ingest(corpus, &delta_path, &cfg)?;
        let old = self.snapshot();
        let base = old.chunk_count();
        let next_store = with_suffix(&self.paths.store, "next");
        let store = match &old.store {
            Some(s) => concat_stores(&[s, &delta.store], &next_store)?,
            None => concat_stores(&[&delta.store], &next_store)?,
        };
        let added = delta.store.len();
        let _ = fs::remove_file(&delta_path);
        let _ = fs::remove_dir_all(dir.join(format!("{job}.shards")));

        let next_sparse = with_suffix(&self.paths.sparse, "next");
        build_sparse(&store, &next_sparse, &SparseBuildOptions::default())?;
        let sparse = SparseIndex::open(&next_sparse)?;

        let mut hot = match &old.hot {
            Some(h) => h.clone(),
            None => HotGraph::new(self.cfg.embedder.dimension, self.cfg.hot.clone())?,
        };
        let mut cold = old.cold.clone();
        let mut migrated = 0;
        let embedder = self.embedder()?;
        for ord in base..store.len() {
            let v = embedder.embed(store.get_ref(ord)?.text);
            if let Some(req) = hot.insert(ord as u32, &v)? {
                migrated += req.ids.len();
                self.migrate(&mut hot, &mut cold, &req)?;
            }
        }
        if let Some(req) = self.timed_migration(&hot, cold.is_some()) {
            migrated += req.ids.len();
            self.migrate(&mut hot, &mut cold, &req)?;
        }
        self.ledger.lock().touch(Component::Embedder, self.now());

        let next = Snapshot {
            generation: old.generation + 1,
            store: None,
            sparse: Some(sparse),
            hot: Some(hot),
            cold,
            calibration: old.calibration.clone(),
        };
        {
            let mut ledger = self.ledger.lock();
            let now = self.now();
            for (c, bytes) in next.component_bytes(&self.cfg) {
                if c.mandatory() {
                    ledger.resize(c, bytes, now)?;
                }
            }
        }

        fs::rename(&next_store, &self.paths.store).at(&self.paths.store)?;
        fs::rename(&next_sparse, &self.paths.sparse).at(&self.paths.sparse)?;
        if let Some(c) = &next.cold {
            c.persist(&self.paths.dense)?;
        }
        if let Some(h) = &next.hot {
            persist_hot(h, &self.paths.hot)?;
        }
        sync_dir(dir).at(dir)?;
        let snap = Snapshot::load(&self.paths, &self.cfg, next.generation, next.hot)?;
        let total = snap.chunk_count();
        *self.snapshot.write() = Arc::new(snap);
        self.cache.lock().clear();
        Ok(IngestJobReport {
            job: job.to_string(),
            chunks_added: added,
            total_chunks: total,
            migrated,
            generation: old.generation + 1,
            elapsed_ms: ms(t0.elapsed()),
        })
    }

    fn timed_migration(&self, hot: &HotGraph, have_cold: bool) -> Option<MigrationRequest> {
        let secs = self.cfg.migration_interval_secs?;
        let trainable = have_cold || hot.len() >= 1 << IvfParams::default().pq.nbits;
        (trainable && self.last_migration.lock().elapsed() >= Duration::from_secs(secs)).then(|| MigrationRequest {
            ids: hot.ids_in_order().take(self.cfg.hot.migration_batch).collect(),
        })
    }

    fn migrate(&self, hot: &mut HotGraph, cold: &mut Option<ColdIndex>, req: &MigrationRequest) -> Result<()> {
        *self.last_migration.lock() = Instant::now();
        if cold.is_none() {
            let d = hot.dimension();
            let mut sample = Vec::with_capacity(hot.len() * d);
            for id in hot.ids_in_order() {
                sample.extend_from_slice(hot.vector(id).expect("live id"));
            }
            let n = hot.len();
            let mut params = IvfParams {
                nprobe: self.cfg.nprobe,
                ..IvfParams::default()
            };
            params.nlist = params.nlist.min((n / 8).max(1));
            params.nprobe = params.nprobe.clamp(1, params.nlist);
            let mut c = ColdIndex::train(&sample, d, &params)?;
            c.set_nprobe(self.cfg.nprobe);
            *cold = Some(c);
        }
        migrate_to_cold(hot, cold.as_mut().expect("trained"), req)
    }

    pub fn stats(&self) -> serde_json::Value {
        let snap = self.snapshot();
        let ledger = self.ledger();
        let (cache_len, hits, misses) = self.cache_stats();
        let components: BTreeMap<&str, serde_json::Value> = Component::ALL
            .iter()
            .map(|c| {
                let st = ledger.state(*c);
                (
                    c.as_str(),
                    serde_json::json!({
                        "loaded": st.is_some_and(|s| s.loaded),
                        "bytes": st.map_or(0, |s| s.bytes),
                    }),
                )
            })
            .collect();
        serde_json::json!({
            "generation": snap.generation,
            "laptop_mode": self.cfg.laptop_mode,
            "chunks": snap.chunk_count(),
            "sparse_terms": snap.sparse.as_ref().map_or(0, |s| s.meta().term_count),
            "sparse_bytes": snap.sparse.as_ref().map_or(0, |s| s.file_size()),
            "hot_vectors": snap.hot.as_ref().map_or(0, |h| h.len()),
            "cold_vectors": snap.cold.as_ref().map_or(0, |c| c.len()),
            "cold_bytes": snap.cold.as_ref().map_or(0, |c| c.layout().total()),
            "calibrated": snap.calibration.is_some(),
            "ledger": {
                "ceiling_bytes": ledger.ceiling(),
                "loaded_bytes": ledger.loaded_bytes(),
                "components": components,
                "recent_events": ledger.events().iter().rev().take(20).collect::<Vec<_>>(),
            },
            "cache": { "entries": cache_len, "hits": hits, "misses": misses },
            "queries_served": self.served.load(Ordering::Relaxed),
            "resident_bytes": resident_bytes(),
            "write_lock": self.write_lock.holder(),
            "jobs": self.jobs(),
        })
    }
}

fn search_dense(snap: &Snapshot, q: &[f32], depth: usize) -> Vec<(u32, f64, Channel)> {
    let hot = snap.hot.as_ref().filter(|h| !h.is_empty());
    let cold = snap.cold.as_ref().filter(|c| !c.is_empty());
    let cold_search = |c: &ColdIndex| {
        let nprobe = if depth >= c.len() { c.nlist() } else { c.nprobe() };
        c.search_with(q, depth, nprobe)
    };
    let (h, c) = match (hot, cold) {
        (Some(h), Some(c)) => std::thread::scope(|s| {
            let ch = s.spawn(|| cold_search(c));
            let hh = h.search(q, depth);
            (hh, ch.join().expect("cold search panicked"))
        }),
        (Some(h), None) => (h.search(q, depth), Vec::new()),
        (None, Some(c)) => (Vec::new(), cold_search(c)),
        (None, None) => (Vec::new(), Vec::new()),
    };
    let mut out: Vec<(u32, f64, Channel)> = h
        .into_iter()
        .map(|x| (x.id, x.score as f64, Channel::DenseHot))
        .chain(c.into_iter().map(|x| (x.id, x.score as f64, Channel::DenseCold)))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut seen = std::collections::HashSet::new();
    out.retain(|x| seen.insert(x.0));
    out.truncate(depth);
    out
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

/// Ask the kernel to drop cached pages of `paths`. Returns the method used.
pub fn advise_dontneed(paths: &[&Path]) -> &'static str {
    #[cfg(target_os = "linux")]
    {
        use std::os::fd::AsRawFd;
        for p in paths {
            if let Ok(f) = fs::File::open(p) {
                unsafe {
                    libc::posix_fadvise(f.as_raw_fd(), 0, 0, libc::POSIX_FADV_DONTNEED);
                }
            }
        }
        "posix_fadvise(DONTNEED) + reopen"
    }
    #[cfg(not(target_os = "linux"))]
    {
        let _ = paths;
        "reopen only"
    }
}

/// Best-effort nice 10 for the calling thread.
pub fn lower_thread_priority() {
    #[cfg(target_os = "linux")]
    unsafe {
        let tid = libc::syscall(libc::SYS_gettid) as libc::id_t;
        libc::setpriority(libc::PRIO_PROCESS, tid, 10);
    }
}
