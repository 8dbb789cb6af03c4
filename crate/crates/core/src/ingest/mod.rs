//! Streaming corpus ingestion: bounded chunk buffer, durable shards, atomic
//! merge into the chunk store, and resident-memory profiling.

mod memory;
mod pipeline;
mod record;
mod shard;
mod store;

pub use memory::{
    memory_report, resident_bytes, trim_allocator, MemoryPhase, MemoryReport, MemorySample,
    MemorySampler, Verdict, DEFAULT_DELTA_BOUND,
};
pub use pipeline::{
    list_corpus_files, streaming_ingest, streaming_ingest_with, IngestConfig, IngestEvent,
    IngestOutcome, IngestStats, QueryPressure,
};
pub use shard::{flush_shard, read_manifests, read_shard, verify_shard, ShardManifest};
pub use store::{concat_stores, merge_shards, ChunkRef, ChunkStore, StoreWriter};
