use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const RRF_K: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    DenseHot,
    DenseCold,
    Sparse,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::DenseHot => "dense_hot",
            Channel::DenseCold => "dense_cold",
            Channel::Sparse => "sparse",
        }
    }

    pub fn is_dense(self) -> bool {
        !matches!(self, Channel::Sparse)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedHit {
    pub doc_ref: u32,
    pub raw_score: f64,
    /// 1-based.
    pub rank: u32,
    /// Tier the hit came from; differs per hit in a merged dense ranking.
    pub source: Channel,
}

/// One channel's ranking with contiguous 1-based ranks.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelRanking {
    pub hits: Vec<RankedHit>,
}

impl ChannelRanking {
    /// Rank `(doc_ref, score, source)` triples by descending score, ties by
    /// ascending doc_ref. Later duplicates of a doc_ref are dropped.
    pub fn from_scores(mut scored: Vec<(u32, f64, Channel)>) -> Self {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut seen = std::collections::HashSet::new();
        scored.retain(|s| seen.insert(s.0));
        ChannelRanking {
            hits: scored
                .into_iter()
                .enumerate()
                .map(|(i, (doc_ref, raw_score, source))| RankedHit {
                    doc_ref,
                    raw_score,
                    rank: i as u32 + 1,
                    source,
                })
                .collect(),
        }
    }

    /// A ranking already in order; scores are synthesized from ranks.
    pub fn from_order(docs: &[u32], source: Channel) -> Self {
        ChannelRanking {
            hits: docs
                .iter()
                .enumerate()
                .map(|(i, &doc_ref)| RankedHit {
                    doc_ref,
                    raw_score: -(i as f64),
                    rank: i as u32 + 1,
                    source,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedHit {
    pub doc_ref: u32,
    pub rrf_score: f64,
    pub dense_rank: Option<u32>,
    pub sparse_rank: Option<u32>,
    /// Tier of the dense contribution, when there is one.
    pub dense_source: Option<Channel>,
    pub dense_contribution: f64,
    pub sparse_contribution: f64,
    pub qar_adjusted_score: f64,
}

impl FusedHit {
    pub fn channels(&self) -> usize {
        self.dense_rank.is_some() as usize + self.sparse_rank.is_some() as usize
    }

    /// Channel to cite: the larger contribution, dense on ties.
    pub fn primary_channel(&self) -> Channel {
        match (self.dense_source, self.sparse_rank) {
            (Some(d), Some(_)) if self.dense_contribution >= self.sparse_contribution => d,
            (Some(d), None) => d,
            _ => Channel::Sparse,
        }
    }
}

pub(crate) fn order_by(score: impl Fn(&FusedHit) -> f64) -> impl Fn(&FusedHit, &FusedHit) -> Ordering {
    move |a, b| {
        score(b)
            .total_cmp(&score(a))
            .then(b.channels().cmp(&a.channels()))
            .then(a.doc_ref.cmp(&b.doc_ref))
    }
}

fn fuse(dense: &ChannelRanking, sparse: &ChannelRanking, k: u32, wd: f64, ws: f64, cutoff: usize) -> Vec<FusedHit> {
    let mut by_doc: HashMap<u32, FusedHit> = HashMap::with_capacity(dense.len() + sparse.len());
    let blank = |doc_ref| FusedHit {
        doc_ref,
        rrf_score: 0.0,
        dense_rank: None,
        sparse_rank: None,
        dense_source: None,
        dense_contribution: 0.0,
        sparse_contribution: 0.0,
        qar_adjusted_score: 0.0,
    };
    for h in &dense.hits {
        let e = by_doc.entry(h.doc_ref).or_insert_with(|| blank(h.doc_ref));
        if e.dense_rank.is_none() {
            e.dense_rank = Some(h.rank);
            e.dense_source = Some(h.source);
            e.dense_contribution = wd / (k as f64 + h.rank as f64);
        }
    }
    for h in &sparse.hits {
        let e = by_doc.entry(h.doc_ref).or_insert_with(|| blank(h.doc_ref));
        if e.sparse_rank.is_none() {
            e.sparse_rank = Some(h.rank);
            e.sparse_contribution = ws / (k as f64 + h.rank as f64);
        }
    }
    let mut out: Vec<FusedHit> = by_doc
        .into_values()
        .map(|mut h| {
            h.rrf_score = h.dense_contribution + h.sparse_contribution;
            h.qar_adjusted_score = h.rrf_score;
            h
        })
        .collect();
    out.sort_by(order_by(|h| h.rrf_score));
    out.truncate(cutoff);
    out
}

/// Reciprocal rank fusion: Σ 1/(k + rank) over the channels containing a
/// document. Ties go to documents found by more channels, then to the
/// smaller doc_ref.
pub fn fuse_rrf(dense: &ChannelRanking, sparse: &ChannelRanking, k: u32, cutoff: usize) -> Vec<FusedHit> {
    fuse(dense, sparse, k, 1.0, 1.0, cutoff)
}

/// `α·RRF_dense + (1−α)·RRF_sparse`.
pub fn fuse_rrf_weighted(
    dense: &ChannelRanking,
    sparse: &ChannelRanking,
    k: u32,
    alpha: f64,
    cutoff: usize,
) -> Vec<FusedHit> {
    let a = alpha.clamp(0.0, 1.0);
    fuse(dense, sparse, k, a, 1.0 - a, cutoff)
}

/// Cross-encoder reranking slot; disabled, returns its input.
pub fn rerank_stub(hits: Vec<FusedHit>) -> Vec<FusedHit> {
    hits
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(h: &[FusedHit]) -> Vec<u32> {
        h.iter().map(|x| x.doc_ref).collect()
    }

    #[test]
    fn textbook_example() {
        let (a, b, c) = (1, 2, 3);
        let d = ChannelRanking::from_order(&[a, b], Channel::DenseCold);
        let s = ChannelRanking::from_order(&[b, c], Channel::Sparse);
        let f = fuse_rrf(&d, &s, 60, 10);
        assert_eq!(ids(&f), vec![b, a, c]);
        assert_eq!(f[0].rrf_score, 1.0 / 61.0 + 1.0 / 62.0);
        assert_eq!(f[1].rrf_score, 1.0 / 61.0);
        assert_eq!(f[2].rrf_score, 1.0 / 62.0);
    }

    #[test]
    fn empty_and_identical() {
        let e = ChannelRanking::default();
        assert!(fuse_rrf(&e, &e, 60, 10).is_empty());
        let d = ChannelRanking::from_order(&[5, 3, 9], Channel::DenseHot);
        let s = ChannelRanking::from_order(&[5, 3, 9], Channel::Sparse);
        let one = fuse_rrf(&d, &e, 60, 10);
        let two = fuse_rrf(&d, &s, 60, 10);
        assert_eq!(ids(&one), ids(&two));
        for (x, y) in one.iter().zip(&two) {
            assert_eq!(y.rrf_score, 2.0 * x.rrf_score);
        }
    }

    #[test]
    fn degenerate_weights() {
        let d = ChannelRanking::from_order(&[1, 2, 3, 4], Channel::DenseCold);
        let s = ChannelRanking::from_order(&[4, 3, 2, 1], Channel::Sparse);
        assert_eq!(ids(&fuse_rrf_weighted(&d, &s, 60, 1.0, 10)), vec![1, 2, 3, 4]);
        assert_eq!(ids(&fuse_rrf_weighted(&d, &s, 60, 0.0, 10)), vec![4, 3, 2, 1]);
    }

    #[test]
    fn scores_bounded_by_channel_count() {
        let d = ChannelRanking::from_order(&[1], Channel::DenseCold);
        let s = ChannelRanking::from_order(&[1], Channel::Sparse);
        let f = fuse_rrf(&d, &s, 60, 10);
        assert_eq!(f[0].rrf_score, 2.0 / 61.0);
    }

    fn ranking(v: &[u8], source: Channel) -> ChannelRanking {
        let mut seen = std::collections::HashSet::new();
        let docs: Vec<u32> = v.iter().map(|&x| x as u32).filter(|x| seen.insert(*x)).collect();
        ChannelRanking::from_order(&docs, source)
    }

    proptest! {
        #[test]
        fn half_weight_is_scaled_rrf(a in proptest::collection::vec(any::<u8>(), 0..200),
                                     b in proptest::collection::vec(any::<u8>(), 0..200)) {
            let d = ranking(&a, Channel::DenseCold);
            let s = ranking(&b, Channel::Sparse);
            let plain = fuse_rrf(&d, &s, 60, 500);
            let half = fuse_rrf_weighted(&d, &s, 60, 0.5, 500);
            prop_assert_eq!(ids(&plain), ids(&half));
            for (p, h) in plain.iter().zip(&half) {
                prop_assert_eq!(p.rrf_score * 0.5, h.rrf_score);
                prop_assert!(p.rrf_score > 0.0 && p.rrf_score <= 2.0 / 61.0);
            }
        }
    }
}
