use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embed::{embed, EmbedderSpec};
use super::flat::FlatIndex;
use super::ivf::{ColdIndex, ColdLayout, IvfParams};
use crate::error::{Error, Result};
use crate::ingest::ChunkStore;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseBuildOptions {
    pub embedder: EmbedderSpec,
    pub ivf: IvfParams,
    /// Chunks embedded and encoded per batch.
    pub batch: usize,
    /// Shrink `nlist` to `n / 8` on small stores instead of failing.
    pub adapt_nlist: bool,
    /// Also write an exact fp32 index (used for calibration).
    pub flat_out: Option<PathBuf>,
}

impl Default for DenseBuildOptions {
    fn default() -> Self {
        DenseBuildOptions {
            embedder: EmbedderSpec::default(),
            ivf: IvfParams::default(),
            batch: 4096,
            adapt_nlist: true,
            flat_out: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseBuildReport {
    pub vectors: usize,
    pub nlist: usize,
    pub trained_on: usize,
    pub layout: ColdLayout,
}

fn embed_rows(store: &ChunkStore, ordinals: impl Iterator<Item = usize>, spec: &EmbedderSpec) -> Result<Vec<f32>> {
    let mut out = Vec::new();
    for o in ordinals {
        out.extend(embed(store.get_ref(o)?.text, spec));
    }
    Ok(out)
}

/// Embed every chunk of `store` (ids are chunk ordinals), train on a
/// seeded sample and write the cold index to `out`.
pub fn build_dense(store: &ChunkStore, out: &Path, opts: &DenseBuildOptions) -> Result<DenseBuildReport> {
    let n = store.len();
    let d = opts.embedder.dimension;
    let mut params = opts.ivf;
    if opts.adapt_nlist && n / 8 < params.nlist {
        params.nlist = (n / 8).max(1);
        params.nprobe = params.nprobe.min(params.nlist);
        log::warn!("store has {n} chunks; using nlist={}", params.nlist);
    }
    let need = params.nlist.max(1 << params.pq.nbits);
    if n < need {
        return Err(Error::Train(format!("need at least {need} chunks to train, store has {n}")));
    }
    let train_n = n.min(params.max_train.max(need));
    let mut picks: Vec<usize> = (0..n).collect();
    if train_n < n {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5A3B1E);
        for i in 0..train_n {
            let j = rng.gen_range(i..n);
            picks.swap(i, j);
        }
        picks.truncate(train_n);
        picks.sort_unstable();
    }
    let sample = embed_rows(store, picks.into_iter(), &opts.embedder)?;
    let mut idx = ColdIndex::train(&sample, d, &params)?;
    drop(sample);

    let mut flat = opts.flat_out.as_ref().map(|_| FlatIndex::new(d));
    let batch = opts.batch.max(1);
    for start in (0..n).step_by(batch) {
        let end = (start + batch).min(n);
        let vs = embed_rows(store, start..end, &opts.embedder)?;
        let ids: Vec<u32> = (start as u32..end as u32).collect();
        idx.add(&ids, &vs)?;
        if let Some(f) = flat.as_mut() {
            f.add(&ids, &vs)?;
        }
    }
    let layout = idx.persist(out)?;
    if let (Some(f), Some(p)) = (flat, &opts.flat_out) {
        f.persist(p)?;
    }
    Ok(DenseBuildReport {
        vectors: n,
        nlist: params.nlist,
        trained_on: idx.codebook().trained_on,
        layout,
    })
}
