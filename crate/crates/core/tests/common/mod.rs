#![allow(dead_code)]

use std::collections::BTreeMap;

use placerank::bundle::{retrieve_topk, CandidateList, RetrievalBundle};
use placerank::eval::{synth_generate, SynthesisParams};
use placerank::pdl::{Node, PdlModel, Tree};
use placerank::rerank;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Retrieves top-`k` candidates for every query of the bundle.
pub fn with_candidates(bundle: RetrievalBundle, k: usize) -> RetrievalBundle {
    let db = bundle.db_globals();
    let lists: BTreeMap<String, CandidateList> = bundle
        .queries
        .iter()
        .map(|q| {
            let list = retrieve_topk(&q.id, &q.global, &db, k).unwrap();
            (q.id.clone(), list)
        })
        .collect();
    bundle.with_candidates(lists).unwrap()
}

/// A small synthetic bundle with candidates attached.
pub fn small_bundle(seed: u64, queries: usize, db: usize, regions: usize, k: usize) -> RetrievalBundle {
    let params = SynthesisParams {
        seed,
        queries,
        db,
        dim: 8,
        regions,
        ..SynthesisParams::default()
    };
    with_candidates(synth_generate(&params).unwrap(), k)
}

fn random_tree(rng: &mut ChaCha8Rng, feature_len: usize, depth: usize, nodes: &mut Vec<Node>) -> usize {
    let here = nodes.len();
    if depth == 0 || rng.random_bool(0.3) {
        nodes.push(Node::Leaf {
            label: rng.random_range(1..=2),
        });
        return here;
    }
    nodes.push(Node::Leaf { label: 1 });
    let feature = rng.random_range(0..feature_len);
    let threshold = rng.random_range(-1.0..2.0);
    let left = random_tree(rng, feature_len, depth - 1, nodes);
    let right = random_tree(rng, feature_len, depth - 1, nodes);
    nodes[here] = Node::Split {
        feature,
        threshold,
        left,
        right,
    };
    here
}

/// A bagged model of random trees over the layout for `m` regions.
pub fn random_model(rng: &mut ChaCha8Rng, m: usize, trees: usize) -> PdlModel {
    let len = rerank::feature_len(m);
    let trees = (0..trees)
        .map(|_| {
            let mut nodes = Vec::new();
            random_tree(rng, len, 4, &mut nodes);
            Tree { nodes }
        })
        .collect();
    PdlModel::from_trees(trees, len, rng.random()).unwrap()
}

// ---- exhaustive tree oracle ------------------------------------------------

pub enum OracleNode {
    Leaf(u8),
    Split(usize, f64, Box<OracleNode>, Box<OracleNode>),
}

fn gini_weighted(labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let n = labels.len() as f64;
    let p2 = labels.iter().filter(|&&l| l == 2).count() as f64 / n;
    n * (1.0 - p2 * p2 - (1.0 - p2) * (1.0 - p2))
}

/// Enumerates every (feature, candidate threshold) pair, picks the lowest
/// weighted Gini (first on ties within 1e-12) and recurses.
pub fn oracle_tree(x: &[Vec<f64>], y: &[u8]) -> OracleNode {
    let twos = y.iter().filter(|&&l| l == 2).count();
    if twos == 0 || twos == y.len() {
        return OracleNode::Leaf(y[0]);
    }
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..x[0].len() {
        let mut values: Vec<f64> = x.iter().map(|r| r[f]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        for w in values.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let left: Vec<u8> = x.iter().zip(y).filter(|(r, _)| r[f] <= t).map(|(_, &l)| l).collect();
            let right: Vec<u8> = x.iter().zip(y).filter(|(r, _)| r[f] > t).map(|(_, &l)| l).collect();
            let imp = gini_weighted(&left) + gini_weighted(&right);
            if best.is_none_or(|(b, _, _)| imp < b - 1e-12) {
                best = Some((imp, f, t));
            }
        }
    }
    let Some((_, f, t)) = best else {
        return OracleNode::Leaf(if 2 * twos > y.len() { 2 } else { 1 });
    };
    let (mut lx, mut ly, mut rx, mut ry) = (vec![], vec![], vec![], vec![]);
    for (r, &l) in x.iter().zip(y) {
        if r[f] <= t {
            lx.push(r.clone());
            ly.push(l);
        } else {
            rx.push(r.clone());
            ry.push(l);
        }
    }
    OracleNode::Split(f, t, Box::new(oracle_tree(&lx, &ly)), Box::new(oracle_tree(&rx, &ry)))
}

pub fn oracle_predict(node: &OracleNode, x: &[f64]) -> u8 {
    match node {
        OracleNode::Leaf(l) => *l,
        OracleNode::Split(f, t, l, r) => {
            if x[*f] <= *t {
                oracle_predict(l, x)
            } else {
                oracle_predict(r, x)
            }
        }
    }
}
