//! The decision layer: maps a pair's feature vector to `P_M` in `[1, 2]`.
//!
//! Two model kinds share one file format:
//!
//! - bagged CART trees, each grown on a bootstrap resample; `P_M` is
//!   `1 + (trees voting 2) / T`,
//! - per-class diagonal Gaussians (naive Bayes); `P_M` is
//!   `1 + posterior(label 2)`.
//!
//! Bootstrap draws come from ChaCha8 seeded with the master seed; tree `t`
//! uses stream `t` of that generator, so results do not depend on thread
//! scheduling.

mod gaussian;
mod tree;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::io::{read_json, write_json};
use crate::bundle::RetrievalBundle;
use crate::error::{dim_err, invalid, Error, Result};
use crate::rerank::{self, MatchProbability, RerankParams};

pub use gaussian::{ClassStats, GaussianNb, VARIANCE_FLOOR};
pub use tree::{Node, Tree};

const MODEL_FORMAT: &str = "placerank-pdl";
const MODEL_VERSION: u32 = 1;

/// Labelled feature rows; label 2 marks a true match, 1 anything else.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    x: Vec<Vec<f64>>,
    y: Vec<u8>,
}

impl TrainingSet {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<u8>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(dim_err!("{} rows with {} labels", x.len(), y.len()));
        }
        if let Some(first) = x.first() {
            let d = first.len();
            if x.iter().any(|r| r.len() != d) {
                return Err(dim_err!("ragged feature rows"));
            }
        }
        if x.iter().flatten().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("NaN feature in training set".into()));
        }
        if let Some(l) = y.iter().find(|&&l| l != 1 && l != 2) {
            return Err(invalid!("label {l} is not 1 or 2"));
        }
        Ok(TrainingSet { x, y })
    }

    pub fn rows(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn feature_len(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn labels(&self) -> &[u8] {
        &self.y
    }

    pub fn label_counts(&self) -> (usize, usize) {
        let twos = self.y.iter().filter(|&&l| l == 2).count();
        (self.y.len() - twos, twos)
    }

    fn samples(&self) -> tree::Samples<'_> {
        tree::Samples {
            x: &self.x,
            y: &self.y,
        }
    }
}

/// Describes the layout `[d_c, r', qd_cr[m], M[m x m] row-major]`.
pub fn feature_order_tag(m: usize) -> String {
    format!("dc,rprime,qd_cr[{m}],M[{m}x{m}]")
}

/// Inverse of [`feature_order_tag`].
pub fn parse_feature_order_tag(tag: &str) -> Option<usize> {
    let rest = tag.strip_prefix("dc,rprime,qd_cr[")?;
    let (m, rest) = rest.split_once("],M[")?;
    let m: usize = m.parse().ok()?;
    (rest == format!("{m}x{m}]")).then_some(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelBody {
    BaggedTrees { tree_count: usize, trees: Vec<Tree> },
    Gaussian { classes: GaussianNb },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdlModel {
    format: String,
    version: u32,
    feature_order: String,
    feature_len: usize,
    seed: u64,
    #[serde(flatten)]
    body: ModelBody,
}

impl PdlModel {
    fn from_body(feature_len: usize, seed: u64, body: ModelBody) -> Self {
        let m = (0..=feature_len).find(|&m| rerank::feature_len(m) == feature_len);
        PdlModel {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            feature_order: m.map_or_else(|| format!("raw[{feature_len}]"), feature_order_tag),
            feature_len,
            seed,
            body,
        }
    }

    /// Bagged model whose every tree is a single leaf with `label`.
    pub fn constant(label: u8, feature_len: usize, tree_count: usize) -> Result<Self> {
        if label != 1 && label != 2 {
            return Err(invalid!("label must be 1 or 2"));
        }
        let trees = vec![Tree::leaf(label); tree_count.max(1)];
        Ok(Self::from_body(
            feature_len,
            0,
            ModelBody::BaggedTrees {
                tree_count: trees.len(),
                trees,
            },
        ))
    }

    /// Bagged model from explicit trees (validated).
    pub fn from_trees(trees: Vec<Tree>, feature_len: usize, seed: u64) -> Result<Self> {
        let model = Self::from_body(
            feature_len,
            seed,
            ModelBody::BaggedTrees {
                tree_count: trees.len(),
                trees,
            },
        );
        model.validate()?;
        Ok(model)
    }

    pub fn body(&self) -> &ModelBody {
        &self.body
    }

    pub fn kind(&self) -> &'static str {
        match self.body {
            ModelBody::BaggedTrees { .. } => "bagged_trees",
            ModelBody::Gaussian { .. } => "gaussian",
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn feature_order(&self) -> &str {
        &self.feature_order
    }

    /// Top-region count encoded in the feature order, if it is the standard
    /// layout.
    pub fn top_regions_m(&self) -> Option<usize> {
        parse_feature_order_tag(&self.feature_order)
    }

    pub fn tree_count(&self) -> usize {
        match &self.body {
            ModelBody::BaggedTrees { trees, .. } => trees.len(),
            ModelBody::Gaussian { .. } => 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(invalid!("unknown model format {:?}", self.format));
        }
        if self.version != MODEL_VERSION {
            return Err(invalid!("unsupported model version {}", self.version));
        }
        match parse_feature_order_tag(&self.feature_order) {
            Some(m) if rerank::feature_len(m) == self.feature_len => {}
            _ => {
                return Err(invalid!(
                    "feature_order {:?} does not describe {} features",
                    self.feature_order,
                    self.feature_len
                ))
            }
        }
        match &self.body {
            ModelBody::BaggedTrees { tree_count, trees } => {
                if trees.is_empty() {
                    return Err(invalid!("model has no trees"));
                }
                if *tree_count != trees.len() {
                    return Err(invalid!("tree_count {tree_count} but {} trees", trees.len()));
                }
                for (i, t) in trees.iter().enumerate() {
                    t.validate(self.feature_len)
                        .map_err(|e| invalid!("tree {i}: {e}"))?;
                }
            }
            ModelBody::Gaussian { classes } => {
                if classes.class1.is_none() && classes.class2.is_none() {
                    return Err(invalid!("gaussian model has no classes"));
                }
                for c in [&classes.class1, &classes.class2].into_iter().flatten() {
                    if c.mean.len() != self.feature_len || c.variance.len() != self.feature_len {
                        return Err(invalid!("gaussian class statistics have wrong length"));
                    }
                    if c.variance.iter().any(|v| !(*v > 0.0)) {
                        return Err(invalid!("gaussian variances must be positive"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let model: PdlModel = read_json(path)?;
        model
            .validate()
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok(model)
    }
}

impl MatchProbability for PdlModel {
    fn feature_len(&self) -> usize {
        self.feature_len
    }

    fn predict(&self, features: &[f64]) -> Result<f64> {
        predict(self, features)
    }
}

/// `P_M` in `[1, 2]`.
pub fn predict(model: &PdlModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.feature_len {
        return Err(dim_err!(
            "feature vector has {} entries, model expects {}",
            x.len(),
            model.feature_len
        ));
    }
    let p = match &model.body {
        ModelBody::BaggedTrees { trees, .. } => {
            let votes = trees.iter().filter(|t| t.predict(x) == 2).count();
            1.0 + votes as f64 / trees.len() as f64
        }
        ModelBody::Gaussian { classes } => 1.0 + classes.posterior2(x),
    };
    Ok(p.clamp(1.0, 2.0))
}

pub const DEFAULT_MIN_LEAF: usize = 1;

/// A single tree on the full training set, no resampling.
pub fn train_tree(data: &TrainingSet, min_leaf: usize) -> Result<Tree> {
    if data.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    Ok(tree::grow(&data.samples(), (0..data.rows()).collect(), min_leaf))
}

pub fn train_bagged(
    data: &TrainingSet,
    tree_count: usize,
    seed: u64,
    min_leaf: usize,
) -> Result<PdlModel> {
    if data.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if tree_count == 0 {
        return Err(invalid!("tree_count must be at least 1"));
    }
    let n = data.rows();
    let samples = data.samples();
    let trees: Vec<Tree> = (0..tree_count)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let draw: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            tree::grow(&samples, draw, min_leaf)
        })
        .collect();
    Ok(PdlModel::from_body(
        data.feature_len(),
        seed,
        ModelBody::BaggedTrees { tree_count, trees },
    ))
}

pub fn train_gaussian(data: &TrainingSet) -> Result<PdlModel> {
    let classes = GaussianNb::fit(&data.x, &data.y)?;
    Ok(PdlModel::from_body(
        data.feature_len(),
        0,
        ModelBody::Gaussian { classes },
    ))
}

/// One row per (query, candidate) of the listed queries, labelled 2 when
/// the candidate is among the query's positives.
pub fn build_training_set(
    bundle: &RetrievalBundle,
    query_ids: &[String],
    params: &RerankParams,
) -> Result<TrainingSet> {
    let gt = bundle
        .ground_truth
        .as_ref()
        .ok_or_else(|| invalid!("bundle has no ground truth"))?;
    let per_query: Vec<(Vec<Vec<f64>>, Vec<u8>)> = query_ids
        .par_iter()
        .map(|qid| {
            let list = bundle
                .candidates
                .get(qid)
                .ok_or_else(|| invalid!("query {qid} has no candidates"))?;
            let feats = rerank::candidate_features(bundle, list, params)?;
            let labels = list
                .candidates()
                .iter()
                .map(|c| {
                    if gt.is_positive(qid, &bundle.database[c.db].id) {
                        2
                    } else {
                        1
                    }
                })
                .collect();
            Ok((feats, labels))
        })
        .collect::<Result<_>>()?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (f, l) in per_query {
        x.extend(f);
        y.extend(l);
    }
    TrainingSet::new(x, y)
}
