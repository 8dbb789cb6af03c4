//! Dense retrieval: deterministic embedder, k-means, product quantizer,
//! the memory-mapped IVF-PQ cold tier and an exact fp32 flat index.

mod build;
mod embed;
mod flat;
mod ivf;
pub mod kmeans;
mod pq;

pub use build::{build_dense, DenseBuildOptions, DenseBuildReport};
pub use embed::{embed, Embedder, EmbedderSpec};
pub use flat::FlatIndex;
pub use ivf::{ColdIndex, ColdLayout, IvfParams};
pub use pq::{adc_score, pack, unpack, PqCodebook, PqParams};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenseHit {
    pub id: u32,
    pub score: f32,
}

/// Anything that answers cosine top-k over unit vectors.
pub trait DenseSearcher: Send + Sync {
    fn dimension(&self) -> usize;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Top-k by descending score, ties by ascending id.
    fn search(&self, query: &[f32], k: usize) -> Vec<DenseHit>;
}

pub(crate) fn hits_from(sorted: Vec<(u32, f32)>) -> Vec<DenseHit> {
    sorted.into_iter().map(|(id, score)| DenseHit { id, score }).collect()
}
