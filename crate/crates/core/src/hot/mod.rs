//! Bounded in-memory HNSW hot tier and migration into the cold tier.

mod graph;
mod tiers;

pub use graph::{HotGraph, HotGraphConfig, MigrationRequest};
pub use tiers::{load_hot, merge_dense, migrate_to_cold, persist_hot, TieredDense};
