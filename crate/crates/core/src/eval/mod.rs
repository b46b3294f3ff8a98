//! Recall@N tables, baseline comparisons and the synthetic bundle generator.

mod synth;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bundle::io::write_atomic;
use crate::bundle::{CandidateList, GroundTruth, RetrievalBundle};
use crate::error::{invalid, Result};
use crate::rerank::RerankedList;

pub use synth::{synth_generate, SynthesisParams};

/// Query id -> database ids, best first.
pub type Rankings = BTreeMap<String, Vec<String>>;

pub const DEFAULT_NS: [usize; 4] = [1, 5, 10, 25];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallTable {
    pub method: String,
    /// `(N, recall %)`, ascending in N.
    pub recalls: Vec<(usize, f64)>,
    /// Queries that entered the denominator.
    pub query_count: usize,
    /// Queries skipped for lacking any positive.
    pub excluded: Vec<String>,
}

impl RecallTable {
    pub fn recall_at(&self, n: usize) -> Option<f64> {
        self.recalls.iter().find(|(k, _)| *k == n).map(|&(_, r)| r)
    }

    pub fn is_monotone(&self) -> bool {
        self.recalls.windows(2).all(|w| w[1].1 >= w[0].1)
    }
}

/// Percentage of queries with at least one positive among their first N
/// ranked ids. Queries without positives are excluded and listed.
pub fn recall_at_n(
    method: &str,
    rankings: &Rankings,
    gt: &GroundTruth,
    ns: &[usize],
) -> Result<RecallTable> {
    if ns.contains(&0) {
        return Err(invalid!("N must be at least 1"));
    }
    let mut ns = ns.to_vec();
    ns.sort_unstable();
    ns.dedup();

    let mut excluded = Vec::new();
    // rank of the first positive per evaluated query (None = not retrieved)
    let mut first_hit: Vec<Option<usize>> = Vec::new();
    for (qid, ranked) in rankings {
        match gt.positives(qid) {
            Some(pos) if !pos.is_empty() => {
                first_hit.push(ranked.iter().position(|id| pos.contains(id)));
            }
            _ => excluded.push(qid.clone()),
        }
    }
    let total = first_hit.len();
    let recalls = ns
        .iter()
        .map(|&n| {
            let hits = first_hit.iter().filter(|h| h.is_some_and(|r| r < n)).count();
            let recall = if total == 0 {
                0.0
            } else {
                100.0 * hits as f64 / total as f64
            };
            (n, recall)
        })
        .collect();
    Ok(RecallTable {
        method: method.to_string(),
        recalls,
        query_count: total,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: RecallTable,
    pub reranked: RecallTable,
    /// `(N, reranked - baseline)`.
    pub deltas: Vec<(usize, f64)>,
}

pub fn compare(
    baseline: &Rankings,
    reranked: &Rankings,
    gt: &GroundTruth,
    ns: &[usize],
) -> Result<Comparison> {
    if !baseline.keys().eq(reranked.keys()) {
        return Err(invalid!("baseline and re-ranked rankings cover different queries"));
    }
    let b = recall_at_n("baseline", baseline, gt, ns)?;
    let r = recall_at_n("reranked", reranked, gt, ns)?;
    let deltas = b
        .recalls
        .iter()
        .zip(&r.recalls)
        .map(|(&(n, rb), &(_, rr))| (n, rr - rb))
        .collect();
    Ok(Comparison {
        baseline: b,
        reranked: r,
        deltas,
    })
}

pub fn rankings_from_candidates<'a>(
    bundle: &RetrievalBundle,
    lists: impl IntoIterator<Item = &'a CandidateList>,
) -> Rankings {
    lists
        .into_iter()
        .map(|l| {
            let ids = l
                .candidates()
                .iter()
                .map(|c| bundle.database[c.db].id.clone())
                .collect();
            (l.query_id().to_string(), ids)
        })
        .collect()
}

pub fn rankings_from_reranked<'a>(
    bundle: &RetrievalBundle,
    lists: impl IntoIterator<Item = &'a RerankedList>,
) -> Rankings {
    lists
        .into_iter()
        .map(|l| {
            let ids = l
                .entries
                .iter()
                .map(|e| bundle.database[e.db].id.clone())
                .collect();
            (l.query_id.clone(), ids)
        })
        .collect()
}

/// `method,N,recall,query_count` rows, one per table and N.
pub fn recall_csv(tables: &[&RecallTable]) -> String {
    let mut out = String::from("method,N,recall,query_count\n");
    for t in tables {
        for (n, r) in &t.recalls {
            let _ = writeln!(out, "{},{},{},{}", t.method, n, r, t.query_count);
        }
    }
    out
}

/// `N,delta` rows.
pub fn delta_csv(c: &Comparison) -> String {
    let mut out = String::from("N,delta\n");
    for (n, d) in &c.deltas {
        let _ = writeln!(out, "{n},{d}");
    }
    out
}

/// Recall curve data: one `N` column and one column per method.
pub fn plot_csv(tables: &[&RecallTable]) -> Result<String> {
    let Some(first) = tables.first() else {
        return Ok("N\n".into());
    };
    let ns: Vec<usize> = first.recalls.iter().map(|&(n, _)| n).collect();
    if tables
        .iter()
        .any(|t| !t.recalls.iter().map(|&(n, _)| n).eq(ns.iter().copied()))
    {
        return Err(invalid!("tables use different N grids"));
    }
    let mut out = String::from("N");
    for t in tables {
        out.push(',');
        out.push_str(&t.method);
    }
    out.push('\n');
    for (i, n) in ns.iter().enumerate() {
        let _ = write!(out, "{n}");
        for t in tables {
            let _ = write!(out, ",{}", t.recalls[i].1);
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    write_atomic(path.as_ref(), text.as_bytes())
}
