//! Hybrid sparse + quantized-dense retrieval.
//!
//! The crate is organized along the data path:
//!
//! * [`text`] parses documents, cuts token windows, stems and deduplicates.
//! * [`ingest`] streams a corpus into an on-disk chunk store through a
//!   bounded buffer and records resident-memory samples.
//! * [`sparse`] builds and searches a memory-mapped BM25 index.
//! * [`dense`] holds the embedder, k-means, product quantizer and the
//!   memory-mapped IVF-PQ cold tier.
//! * [`hot`] is the bounded in-memory HNSW hot tier and its migration path.
//! * [`fusion`] implements reciprocal rank fusion, quantization-aware score
//!   adjustment and the semantic cache.
//! * [`engine`] ties everything together: resource governor, write lock,
//!   query routing, HTTP service and the benchmark/evaluation harness.

pub mod dense;
pub mod engine;
pub mod error;
pub mod fusion;
pub mod hot;
pub mod ingest;
pub mod sparse;
pub mod synth;
pub mod text;
pub mod util;

pub use error::{Error, Result};
