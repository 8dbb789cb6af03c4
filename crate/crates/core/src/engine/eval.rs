use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Graded judgments: query id → doc ref → grade.
pub type Qrels = BTreeMap<String, BTreeMap<String, u32>>;
/// Ranked doc refs per query, best first.
pub type Run = BTreeMap<String, Vec<String>>;

/// Parse tab or space separated `query_id doc_ref grade` lines. Four-column
/// TREC qrels (`qid iter doc grade`) are accepted too; a non-numeric header
/// line and `#` comments are skipped.
pub fn parse_qrels(text: &str) -> Result<Qrels> {
    let mut out = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let (q, d, g) = match cols.as_slice() {
            [q, d, g] => (*q, *d, *g),
            [q, _, d, g] => (*q, *d, *g),
            _ => return Err(Error::Format(format!("qrels line {}: expected 3 or 4 columns", i + 1))),
        };
        let grade: i64 = match g.parse() {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(_) => return Err(Error::Format(format!("qrels line {}: bad grade {g:?}", i + 1))),
        };
        out.entry(q.to_string()).or_default().insert(d.to_string(), grade.max(0) as u32);
    }
    Ok(out)
}

/// Parse a TREC run (`qid Q0 doc rank score tag`), ordering each query's
/// docs by ascending rank.
pub fn parse_trec_run(text: &str) -> Result<Run> {
    let mut ranked: BTreeMap<String, Vec<(u64, String)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() < 4 {
            return Err(Error::Format(format!("run line {}: expected at least 4 columns", i + 1)));
        }
        let rank: u64 = cols[3]
            .parse()
            .map_err(|_| Error::Format(format!("run line {}: bad rank {:?}", i + 1, cols[3])))?;
        ranked.entry(cols[0].to_string()).or_default().push((rank, cols[2].to_string()));
    }
    Ok(ranked
        .into_iter()
        .map(|(q, mut v)| {
            v.sort();
            (q, v.into_iter().map(|(_, d)| d).collect())
        })
        .collect())
}

/// Format scored results as a TREC run.
pub fn write_trec_run(results: &BTreeMap<String, Vec<(String, f64)>>, tag: &str) -> String {
    let mut out = String::new();
    for (q, docs) in results {
        for (i, (d, s)) in docs.iter().enumerate() {
            let _ = writeln!(out, "{q} Q0 {d} {} {s:.6} {tag}", i + 1);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub queries: usize,
    /// Run queries with no judgments (or no relevant doc) in the qrels.
    pub skipped: usize,
    pub recall: BTreeMap<usize, f64>,
    pub ndcg_at_10: f64,
    pub mrr: f64,
    pub per_query_ndcg: BTreeMap<String, f64>,
}

/// nDCG@`k` with linear gain and log2 discount.
pub fn ndcg_at(ranked: &[String], judged: &BTreeMap<String, u32>, k: usize) -> f64 {
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| judged.get(d).copied().unwrap_or(0) as f64 / (i as f64 + 2.0).log2())
        .sum();
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| g as f64 / (i as f64 + 2.0).log2())
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Mean recall@k for each `ks`, nDCG@10 and MRR over the run's queries.
pub fn eval_retrieval(qrels: &Qrels, run: &Run, ks: &[usize]) -> EvalReport {
    let mut recall: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let (mut ndcg, mut mrr, mut n, mut skipped) = (0.0, 0.0, 0usize, 0usize);
    let mut per_query_ndcg = BTreeMap::new();
    for (q, ranked) in run {
        let Some(judged) = qrels.get(q) else {
            skipped += 1;
            continue;
        };
        let relevant: HashSet<&str> = judged.iter().filter(|(_, &g)| g > 0).map(|(d, _)| d.as_str()).collect();
        if relevant.is_empty() {
            skipped += 1;
            continue;
        }
        n += 1;
        for (&k, r) in recall.iter_mut() {
            let found = ranked.iter().take(k).filter(|d| relevant.contains(d.as_str())).count();
            *r += found as f64 / relevant.len() as f64;
        }
        let nd = ndcg_at(ranked, judged, 10);
        per_query_ndcg.insert(q.clone(), nd);
        ndcg += nd;
        if let Some(pos) = ranked.iter().position(|d| relevant.contains(d.as_str())) {
            mrr += 1.0 / (pos as f64 + 1.0);
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} run queries had no relevance judgments and were skipped");
    }
    let denom = n.max(1) as f64;
    recall.values_mut().for_each(|r| *r /= denom);
    EvalReport {
        queries: n,
        skipped,
        recall,
        ndcg_at_10: ndcg / denom,
        mrr: mrr / denom,
        per_query_ndcg,
    }
}
