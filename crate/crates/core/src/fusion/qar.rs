use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::rrf::{order_by, Channel, FusedHit};
use crate::dense::DenseSearcher;
use crate::error::{Error, IoContext, Result};

pub const DEFAULT_BETA: f64 = 0.2;
pub const ADAPTIVE_BETA: f64 = 1.75;
pub const FALLBACK_PENALTY: f64 = 0.15;

/// How a per-query recall drop is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMode {
    /// `(r32 − r8) / r32`
    #[default]
    Relative,
    /// `r32 − r8`
    Absolute,
}

/// Which online adjustment to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QarMode {
    /// Dense-cold contributions × (1 − β·Δ̄q).
    #[default]
    Dampen,
    /// Every fused score × (1 + β·Δ̄q).
    UniformBoost,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub corpus_id: String,
    pub mean_degradation: f64,
    pub per_query: Vec<f64>,
    pub beta: f64,
    pub created_at: String,
    #[serde(default)]
    pub delta_mode: DeltaMode,
}

impl CalibrationRecord {
    pub fn new(corpus_id: impl Into<String>, per_query: Vec<f64>, beta: f64, delta_mode: DeltaMode) -> Result<Self> {
        check_beta(beta)?;
        if per_query.is_empty() {
            return Err(Error::Calibration("no dev queries".into()));
        }
        let mean = per_query.iter().sum::<f64>() / per_query.len() as f64;
        Ok(CalibrationRecord {
            corpus_id: corpus_id.into(),
            mean_degradation: mean.clamp(0.0, 1.0),
            per_query,
            beta,
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            delta_mode,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(self)?).at(&tmp)?;
        std::fs::rename(&tmp, path).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rec: CalibrationRecord = serde_json::from_slice(&std::fs::read(path).at(path)?)?;
        check_beta(rec.beta)?;
        if !(0.0..=1.0).contains(&rec.mean_degradation) {
            return Err(Error::Calibration(format!(
                "mean degradation {} outside [0, 1]",
                rec.mean_degradation
            )));
        }
        Ok(rec)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if (0.1..=0.5).contains(&beta) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("beta {beta} outside [0.1, 0.5]")))
    }
}

#[derive(Debug, Clone)]
pub struct CalibrateOptions {
    pub corpus_id: String,
    pub k: usize,
    pub beta: f64,
    pub delta_mode: DeltaMode,
}

impl Default for CalibrateOptions {
    fn default() -> Self {
        CalibrateOptions {
            corpus_id: "default".into(),
            k: 10,
            beta: DEFAULT_BETA,
            delta_mode: DeltaMode::Relative,
        }
    }
}

fn recall(hits: &[u32], relevant: &HashSet<u32>) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    hits.iter().filter(|h| relevant.contains(h)).count() as f64 / relevant.len() as f64
}

fn drop_of(r32: f64, r8: f64, mode: DeltaMode) -> f64 {
    match mode {
        DeltaMode::Relative if r32 > 0.0 => ((r32 - r8) / r32).max(0.0),
        DeltaMode::Relative => 0.0,
        DeltaMode::Absolute => (r32 - r8).max(0.0),
    }
}

/// Calibrate with labeled dev queries.
pub fn calibrate_with_labels(
    fp32: &dyn DenseSearcher,
    q8: &dyn DenseSearcher,
    queries: &[Vec<f32>],
    labels: &[HashSet<u32>],
    opts: &CalibrateOptions,
) -> Result<CalibrationRecord> {
    if queries.is_empty() {
        return Err(Error::Calibration("no dev queries".into()));
    }
    if labels.len() != queries.len() {
        return Err(Error::Calibration(format!(
            "{} queries but {} label sets",
            queries.len(),
            labels.len()
        )));
    }
    let per_query = queries
        .iter()
        .zip(labels)
        .map(|(q, rel)| {
            let a: Vec<u32> = fp32.search(q, opts.k).iter().map(|h| h.id).collect();
            let b: Vec<u32> = q8.search(q, opts.k).iter().map(|h| h.id).collect();
            drop_of(recall(&a, rel), recall(&b, rel), opts.delta_mode)
        })
        .collect();
    CalibrationRecord::new(opts.corpus_id.clone(), per_query, opts.beta, opts.delta_mode)
}

/// Calibrate without labels: the fp32 top-k of each query is its relevant
/// set, so the fp32 recall is 1 whenever it returns anything.
pub fn calibrate_qar(
    fp32: &dyn DenseSearcher,
    q8: &dyn DenseSearcher,
    queries: &[Vec<f32>],
    opts: &CalibrateOptions,
) -> Result<CalibrationRecord> {
    let labels: Vec<HashSet<u32>> = queries
        .iter()
        .map(|q| fp32.search(q, opts.k).iter().map(|h| h.id).collect())
        .collect();
    calibrate_with_labels(fp32, q8, queries, &labels, opts)
}

/// `1 − β·Δ̄q`, rounded once.
pub fn qar_factor(beta: f64, delta: f64) -> f64 {
    (-beta).mul_add(delta, 1.0)
}

/// Re-score fused hits for quantization loss and re-sort.
pub fn qar_adjust(mut hits: Vec<FusedHit>, record: &CalibrationRecord, mode: QarMode) -> Vec<FusedHit> {
    match mode {
        QarMode::Off => {
            for h in &mut hits {
                h.qar_adjusted_score = h.rrf_score;
            }
        }
        QarMode::Dampen => {
            let f = qar_factor(record.beta, record.mean_degradation);
            for h in &mut hits {
                let dense = if h.dense_source == Some(Channel::DenseCold) {
                    h.dense_contribution * f
                } else {
                    h.dense_contribution
                };
                h.qar_adjusted_score = if h.dense_rank.is_none() {
                    h.rrf_score
                } else {
                    dense + h.sparse_contribution
                };
            }
        }
        QarMode::UniformBoost => {
            let f = record.beta.mul_add(record.mean_degradation, 1.0);
            for h in &mut hits {
                h.qar_adjusted_score = h.rrf_score * f;
            }
        }
    }
    hits.sort_by(order_by(|h| h.qar_adjusted_score));
    hits
}

/// `clamp(α_base − β·Δ̄q, 0, 1)`; without a record, `max(0, α_base − 0.15)`;
/// an unquantized dense tier keeps `α_base`.
pub fn compute_adaptive_alpha(
    record: Option<&CalibrationRecord>,
    alpha_base: f64,
    beta_adaptive: f64,
    quantized: bool,
) -> f64 {
    if !quantized {
        return alpha_base;
    }
    match record {
        Some(r) => (-beta_adaptive).mul_add(r.mean_degradation, alpha_base).clamp(0.0, 1.0),
        None => (alpha_base - FALLBACK_PENALTY).max(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::FlatIndex;
    use crate::fusion::{fuse_rrf, ChannelRanking};
    use crate::synth::random_unit_vectors;
    use proptest::prelude::*;

    fn record(delta: f64, beta: f64) -> CalibrationRecord {
        CalibrationRecord {
            corpus_id: "t".into(),
            mean_degradation: delta,
            per_query: vec![delta],
            beta,
            created_at: String::new(),
            delta_mode: DeltaMode::Relative,
        }
    }

    #[test]
    fn factor_and_alpha_values() {
        assert_eq!(qar_factor(0.2, 0.016), 0.9968);
        assert_eq!(0.5 * qar_factor(0.2, 0.016), 0.4984);
        assert_eq!(compute_adaptive_alpha(Some(&record(0.02, 0.2)), 0.5, 1.75, true), 0.465);
        assert_eq!(compute_adaptive_alpha(None, 0.5, 1.75, true), 0.35);
        assert_eq!(compute_adaptive_alpha(Some(&record(0.0, 0.2)), 0.5, 1.75, true), 0.5);
        assert_eq!(compute_adaptive_alpha(None, 0.5, 1.75, false), 0.5);
        assert_eq!(compute_adaptive_alpha(None, 0.1, 1.75, true), 0.0);
    }

    #[test]
    fn identical_indexes_have_zero_degradation() {
        let vs = random_unit_vectors(200, 16, 1);
        let mut f = FlatIndex::new(16);
        f.add(&(0..200).collect::<Vec<_>>(), &vs.concat()).unwrap();
        let g = f.clone();
        let r = calibrate_qar(&f, &g, &vs[..20], &CalibrateOptions::default()).unwrap();
        assert_eq!(r.mean_degradation, 0.0);
        assert!(calibrate_qar(&f, &g, &[], &CalibrateOptions::default()).is_err());
    }

    #[test]
    fn half_missing_gives_half_drop() {
        let vs = random_unit_vectors(100, 16, 2);
        let mut full = FlatIndex::new(16);
        full.add(&(0..100).collect::<Vec<_>>(), &vs.concat()).unwrap();
        let q = vs[0].clone();
        let top: Vec<u32> = full.search(&q, 10).iter().map(|h| h.id).collect();
        let mut partial = FlatIndex::new(16);
        for i in 0..100u32 {
            if !top[5..].contains(&i) {
                partial.add(&[i], &vs[i as usize]).unwrap();
            }
        }
        let r = calibrate_qar(&full, &partial, &[q], &CalibrateOptions::default()).unwrap();
        assert_eq!(r.per_query, vec![0.5]);
        let abs = calibrate_qar(
            &full,
            &partial,
            &[vs[0].clone()],
            &CalibrateOptions {
                delta_mode: DeltaMode::Absolute,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(abs.mean_degradation, 0.5);
    }

    #[test]
    fn dampens_only_cold_contributions() {
        let d = ChannelRanking::from_order(&[1, 2, 3], Channel::DenseCold);
        let s = ChannelRanking::from_order(&[9, 2], Channel::Sparse);
        let fused = fuse_rrf(&d, &s, 60, 10);
        let adj = qar_adjust(fused.clone(), &record(0.5, 0.2), QarMode::Dampen);
        let f = qar_factor(0.2, 0.5);
        for h in &adj {
            let orig = fused.iter().find(|o| o.doc_ref == h.doc_ref).unwrap();
            if h.dense_rank.is_none() {
                assert_eq!(h.qar_adjusted_score.to_bits(), orig.rrf_score.to_bits());
            } else {
                assert_eq!(h.qar_adjusted_score, orig.dense_contribution * f + orig.sparse_contribution);
            }
        }
        // Hot contributions are full precision and stay put.
        let hot = ChannelRanking::from_order(&[1], Channel::DenseHot);
        let h = qar_adjust(fuse_rrf(&hot, &ChannelRanking::default(), 60, 10), &record(0.5, 0.2), QarMode::Dampen);
        assert_eq!(h[0].qar_adjusted_score, 1.0 / 61.0);
        let z = qar_adjust(fused.clone(), &record(0.0, 0.2), QarMode::Dampen);
        assert_eq!(z, fused);
    }

    #[test]
    fn record_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cal.json");
        let r = CalibrationRecord::new("c", vec![0.0, 0.032], 0.2, DeltaMode::Relative).unwrap();
        assert_eq!(r.mean_degradation, 0.016);
        r.save(&p).unwrap();
        assert_eq!(CalibrationRecord::load(&p).unwrap(), r);
        assert!(std::fs::metadata(&p).unwrap().len() < 5 * 1024);
        assert!(CalibrationRecord::new("c", vec![0.1], 0.9, DeltaMode::Relative).is_err());
    }

    proptest! {
        #[test]
        fn alpha_stays_in_unit_interval(delta in 0.0f64..=1.0, beta in 0.0f64..=2.0, base in 0.0f64..=1.0) {
            let a = compute_adaptive_alpha(Some(&record(delta, 0.2)), base, beta, true);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn sparse_only_hits_never_drop(a in proptest::collection::vec(0u32..60, 0..40),
                                       b in proptest::collection::vec(0u32..60, 0..40),
                                       delta in 0.0f64..=1.0) {
            let dedup = |v: Vec<u32>| { let mut s = HashSet::new(); v.into_iter().filter(|x| s.insert(*x)).collect::<Vec<_>>() };
            let d = ChannelRanking::from_order(&dedup(a), Channel::DenseCold);
            let s = ChannelRanking::from_order(&dedup(b), Channel::Sparse);
            let fused = fuse_rrf(&d, &s, 60, 200);
            let adj = qar_adjust(fused.clone(), &record(delta, 0.2), QarMode::Dampen);
            for (i, h) in fused.iter().enumerate() {
                if h.dense_rank.is_none() {
                    let j = adj.iter().position(|x| x.doc_ref == h.doc_ref).unwrap();
                    prop_assert!(j <= i);
                }
            }
            // Cold-only lists keep their relative order under uniform scaling.
            let cold_only: Vec<u32> = fused.iter().filter(|h| h.sparse_rank.is_none()).map(|h| h.doc_ref).collect();
            let cold_after: Vec<u32> = adj.iter().filter(|h| h.sparse_rank.is_none()).map(|h| h.doc_ref).collect();
            prop_assert_eq!(cold_only, cold_after);
        }
    }
}
