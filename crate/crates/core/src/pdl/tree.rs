//! CART classification trees for labels {1, 2}.
//!
//! Splits search every feature and every midpoint between consecutive
//! distinct values, minimizing the weighted Gini impurity of the children.
//! Impurities are compared exactly in integer arithmetic; ties go to the
//! lower feature index, then the lower threshold. Samples with
//! `x[feature] <= threshold` go left.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        label: u8,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Nodes in pre-order; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(label: u8) -> Self {
        Tree {
            nodes: vec![Node::Leaf { label }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { label } => return label,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 1,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Children must point strictly forward, so every walk reaches a leaf.
    pub fn validate(&self, feature_len: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(invalid!("tree has no nodes"));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match *node {
                Node::Leaf { label } => {
                    if label != 1 && label != 2 {
                        return Err(invalid!("leaf {i} has label {label}, expected 1 or 2"));
                    }
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= feature_len {
                        return Err(invalid!("node {i} splits on feature {feature} >= {feature_len}"));
                    }
                    if !threshold.is_finite() {
                        return Err(invalid!("node {i} has a non-finite threshold"));
                    }
                    for child in [left, right] {
                        if child <= i || child >= self.nodes.len() {
                            return Err(invalid!("node {i} has invalid child {child}"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Row-major feature storage used while growing trees.
pub(crate) struct Samples<'a> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [u8],
}

/// Grows one tree on the rows listed in `indices` (repeats allowed).
pub(crate) fn grow(samples: &Samples<'_>, indices: Vec<usize>, min_leaf: usize) -> Tree {
    let mut nodes = Vec::new();
    grow_node(samples, indices, min_leaf.max(1), &mut nodes);
    Tree { nodes }
}

fn counts(samples: &Samples<'_>, idx: &[usize]) -> (u64, u64) {
    let twos = idx.iter().filter(|&&i| samples.y[i] == 2).count() as u64;
    (idx.len() as u64 - twos, twos)
}

fn grow_node(samples: &Samples<'_>, idx: Vec<usize>, min_leaf: usize, nodes: &mut Vec<Node>) -> usize {
    let here = nodes.len();
    let (ones, twos) = counts(samples, &idx);
    let majority = if twos > ones { 2 } else { 1 };
    if ones == 0 || twos == 0 {
        nodes.push(Node::Leaf { label: majority });
        return here;
    }
    let Some(split) = best_split(samples, &idx, min_leaf) else {
        nodes.push(Node::Leaf { label: majority });
        return here;
    };
    nodes.push(Node::Leaf { label: majority });
    let (left, right): (Vec<usize>, Vec<usize>) = idx
        .into_iter()
        .partition(|&i| samples.x[i][split.feature] <= split.threshold);
    let l = grow_node(samples, left, min_leaf, nodes);
    let r = grow_node(samples, right, min_leaf, nodes);
    nodes[here] = Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: l,
        right: r,
    };
    here
}

struct Split {
    feature: usize,
    threshold: f64,
}

/// Purity score `(a_l^2 + b_l^2)/n_l + (a_r^2 + b_r^2)/n_r` as a fraction;
/// maximizing it minimizes the weighted Gini impurity.
#[derive(Clone, Copy)]
struct Purity {
    num: u128,
    den: u128,
}

impl Purity {
    fn new(l: (u64, u64), r: (u64, u64)) -> Self {
        let (nl, nr) = ((l.0 + l.1) as u128, (r.0 + r.1) as u128);
        let sl = (l.0 as u128).pow(2) + (l.1 as u128).pow(2);
        let sr = (r.0 as u128).pow(2) + (r.1 as u128).pow(2);
        Purity {
            num: sl * nr + sr * nl,
            den: nl * nr,
        }
    }

    fn beats(&self, other: &Purity) -> bool {
        self.num * other.den > other.num * self.den
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= a && m < b {
        m
    } else {
        a
    }
}

fn best_split(samples: &Samples<'_>, idx: &[usize], min_leaf: usize) -> Option<Split> {
    let n = idx.len();
    if n < 2 * min_leaf {
        return None;
    }
    let feature_len = samples.x[idx[0]].len();
    let (ones, twos) = counts(samples, idx);
    let mut best: Option<(Purity, Split)> = None;
    let mut order = idx.to_vec();
    for f in 0..feature_len {
        order.sort_by(|&a, &b| samples.x[a][f].total_cmp(&samples.x[b][f]));
        let (mut l1, mut l2) = (0u64, 0u64);
        for i in 0..n - 1 {
            if samples.y[order[i]] == 2 {
                l2 += 1;
            } else {
                l1 += 1;
            }
            let (lo, hi) = (samples.x[order[i]][f], samples.x[order[i + 1]][f]);
            if lo == hi {
                continue;
            }
            let left_n = i + 1;
            if left_n < min_leaf || n - left_n < min_leaf {
                continue;
            }
            let p = Purity::new((l1, l2), (ones - l1, twos - l2));
            if best.as_ref().is_none_or(|(bp, _)| p.beats(bp)) {
                best = Some((
                    p,
                    Split {
                        feature: f,
                        threshold: midpoint(lo, hi),
                    },
                ));
            }
        }
    }
    best.map(|(_, s)| s)
}
