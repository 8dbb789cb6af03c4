//! Rank fusion, quantization-aware score adjustment and the semantic cache.

mod cache;
mod qar;
mod rrf;

pub use cache::{AlphaMode, CacheKey, SemanticCache};
pub use qar::{
    calibrate_qar, calibrate_with_labels, compute_adaptive_alpha, qar_adjust, qar_factor, CalibrateOptions,
    CalibrationRecord, DeltaMode, QarMode, ADAPTIVE_BETA, DEFAULT_BETA, FALLBACK_PENALTY,
};
pub use rrf::{fuse_rrf, fuse_rrf_weighted, rerank_stub, Channel, ChannelRanking, FusedHit, RankedHit, RRF_K};
