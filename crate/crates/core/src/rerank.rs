//! Landmark-correspondence re-ranking.
//!
//! For a query and each of its retrieved candidates the per-region
//! descriptor matrices `Fq` and `Fc` (row 0 = whole image, rows `1..=n` =
//! regions by objectness) are related through a correlation matrix `C`.
//! Entries at or beyond the farthest candidate distance are dropped, the
//! survivors are weighted by box-size priors and candidate distance terms,
//! gathered into an `m x m` summary and combined with the region-to-query
//! distances into a fixed-length feature vector. A [`MatchProbability`]
//! model maps that vector to `P_M` in `[1, 2]`, and the candidate distance
//! becomes `|d_c - alpha * ln(P_M)|`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{CandidateList, ImageRecord, RegionBox, RetrievalBundle};
use crate::error::{dim_err, invalid, Error, Result};
use crate::linalg::{self, Mat};

pub const DEFAULT_BETA: f64 = 10.0;
/// Distance-update weight for 512-D descriptors.
pub const ALPHA_512: f64 = 1.15;
/// Distance-update weight for 4096-D descriptors.
pub const ALPHA_4096: f64 = 0.31;
pub const DEFAULT_TOP_REGIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMode {
    /// `C = Fq * Fc^T`.
    Literal,
    /// `C[x][y] = ||Fq[x] - Fc[y]||`.
    Distance,
}

impl CorrelationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CorrelationMode::Literal => "literal",
            CorrelationMode::Distance => "distance",
        }
    }
}

impl std::str::FromStr for CorrelationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" | "literal-product" => Ok(CorrelationMode::Literal),
            "distance" | "pairwise-distance" => Ok(CorrelationMode::Distance),
            other => Err(invalid!("unknown correlation mode {other:?} (literal|distance)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankParams {
    pub beta: f64,
    pub alpha: f64,
    pub top_regions_m: usize,
    pub candidates_k: usize,
    pub correlation_mode: CorrelationMode,
    /// L2-normalize every row of `Fq`/`Fc` before building `C`.
    pub normalize_rows: bool,
}

impl Default for RerankParams {
    fn default() -> Self {
        RerankParams {
            beta: DEFAULT_BETA,
            alpha: ALPHA_512,
            top_regions_m: DEFAULT_TOP_REGIONS,
            candidates_k: crate::bundle::DEFAULT_K,
            correlation_mode: CorrelationMode::Literal,
            normalize_rows: true,
        }
    }
}

impl RerankParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(invalid!("beta must be positive, got {}", self.beta));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid!("alpha must be non-negative, got {}", self.alpha));
        }
        if self.top_regions_m == 0 {
            return Err(invalid!("top_regions_m must be at least 1"));
        }
        if self.candidates_k == 0 {
            return Err(invalid!("candidates_k must be at least 1"));
        }
        Ok(())
    }

    pub fn feature_len(&self) -> usize {
        feature_len(self.top_regions_m)
    }
}

/// Length of the assembled feature vector for `m` top regions.
pub fn feature_len(m: usize) -> usize {
    2 + m + m * m
}

pub fn correlation_matrix(fq: &Mat, fc: &Mat, mode: CorrelationMode) -> Result<Mat> {
    if fq.cols() != fc.cols() {
        return Err(dim_err!(
            "query rows have dimension {}, candidate rows {}",
            fq.cols(),
            fc.cols()
        ));
    }
    let f = match mode {
        CorrelationMode::Literal => linalg::dot,
        CorrelationMode::Distance => linalg::dist,
    };
    Ok(Mat::from_fn(fq.rows(), fc.rows(), |x, y| f(fq.row(x), fc.row(y))))
}

/// Result of dropping correlation entries at or beyond `d_c_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredCorrelation {
    /// `C - d_c_max`.
    pub shifted: Mat,
    /// `-1` where the shifted entry is negative, else `0`.
    pub sign_mask: Mat,
    /// `|sign_mask| ⊙ C`.
    pub filtered: Mat,
}

pub fn filter_correlation(c: &Mat, d_c_max: f64) -> FilteredCorrelation {
    let shifted = c.map(|v| v - d_c_max);
    let sign_mask = shifted.map(|v| if v < 0.0 { -1.0 } else { 0.0 });
    let filtered = Mat::from_fn(c.rows(), c.cols(), |x, y| {
        if sign_mask.get(x, y) != 0.0 {
            c.get(x, y)
        } else {
            0.0
        }
    });
    FilteredCorrelation {
        shifted,
        sign_mask,
        filtered,
    }
}

/// `exp(-(b_w b_h) / (image_w image_h))`.
pub fn box_prior(b: &RegionBox, image_w: u32, image_h: u32) -> Result<f64> {
    let area = f64::from(image_w) * f64::from(image_h);
    if area <= 0.0 {
        return Err(invalid!("zero image area"));
    }
    Ok((-(b.w * b.h) / area).exp())
}

/// `s_xy = beta Pq[x] Pc[y] exp(-(d_c_min + C[x][y])) exp(-r')`.
pub fn information_matrix(
    c: &Mat,
    d_c_min: f64,
    r_prime_j: f64,
    pb_q: &[f64],
    pb_c: &[f64],
    beta: f64,
) -> Result<Mat> {
    if pb_q.len() != c.rows() || pb_c.len() != c.cols() {
        return Err(dim_err!(
            "priors of length {}/{} for a {}x{} correlation matrix",
            pb_q.len(),
            pb_c.len(),
            c.rows(),
            c.cols()
        ));
    }
    let scalars_ok = [d_c_min, r_prime_j, beta].iter().all(|v| v.is_finite());
    if !scalars_ok
        || pb_q.iter().chain(pb_c).any(|v| !v.is_finite())
        || c.as_slice().iter().any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("information matrix input".into()));
    }
    let tail = (-r_prime_j).exp();
    Ok(Mat::from_fn(c.rows(), c.cols(), |x, y| {
        beta * pb_q[x] * pb_c[y] * (-(d_c_min + c.get(x, y))).exp() * tail
    }))
}

/// Entrywise `S ⊙ C_f`.
pub fn probabilistic_correlation(s: &Mat, c_shifted: &Mat) -> Result<Mat> {
    if s.shape() != c_shifted.shape() {
        return Err(dim_err!("{:?} vs {:?}", s.shape(), c_shifted.shape()));
    }
    Ok(Mat::from_fn(s.rows(), s.cols(), |x, y| {
        s.get(x, y) * c_shifted.get(x, y)
    }))
}

/// For each of the first `m` columns, gathers the `P_SC` entries at the rows
/// of the `m` smallest `C` values of that column, smallest first (lower row
/// on ties). `out[r][col] = P_SC[order_col[r]][col]`.
pub fn shrink_psc(c: &Mat, psc: &Mat, m: usize) -> Result<Mat> {
    if m == 0 {
        return Err(invalid!("shrink size must be at least 1"));
    }
    if c.shape() != psc.shape() {
        return Err(dim_err!("{:?} vs {:?}", c.shape(), psc.shape()));
    }
    if m > c.rows() || m > c.cols() {
        return Err(dim_err!("cannot shrink a {:?} matrix to {m}x{m}", c.shape()));
    }
    let mut out = Mat::zeros(m, m);
    let mut order: Vec<usize> = (0..c.rows()).collect();
    for col in 0..m {
        order.sort_by(|&a, &b| c.get(a, col).total_cmp(&c.get(b, col)).then(a.cmp(&b)));
        for (r, &row) in order.iter().take(m).enumerate() {
            out.set(r, col, psc.get(row, col));
        }
    }
    Ok(out)
}

/// `exp(-c_min) * exp(-d_c[j]) / sum_i exp(-d_c[i])`.
pub fn candidate_softmax(d_c: &[f64], j: usize, c_min_j: f64) -> Result<f64> {
    if d_c.is_empty() {
        return Err(Error::Empty("candidate distances".into()));
    }
    if j >= d_c.len() {
        return Err(invalid!("candidate index {j} out of range ({})", d_c.len()));
    }
    let shift = d_c.iter().copied().fold(f64::INFINITY, f64::min);
    let total: f64 = d_c.iter().map(|d| (shift - d).exp()).sum();
    Ok((-c_min_j).exp() * (shift - d_c[j]).exp() / total)
}

pub fn elevation_matrix(p_sm: f64, psc_small: &Mat) -> Mat {
    psc_small.map(|v| p_sm * v)
}

/// Distances from the query's global descriptor to the candidate's `m`
/// highest-objectness regions (rows `1..=m`), in objectness order.
pub fn region_query_distances(query_global: &[f64], fc: &Mat, m: usize) -> Result<Vec<f64>> {
    if query_global.len() != fc.cols() {
        return Err(dim_err!(
            "query global has dimension {}, regions have {}",
            query_global.len(),
            fc.cols()
        ));
    }
    if m + 1 > fc.rows() {
        return Err(dim_err!(
            "need {m} regions, candidate has {}",
            fc.rows().saturating_sub(1)
        ));
    }
    Ok((1..=m).map(|r| linalg::dist(query_global, fc.row(r))).collect())
}

/// `[d_c, r', qd_cr[0..m], M row-major]`.
pub fn assemble_features(d_c_j: f64, r_prime_j: f64, qd_cr: &[f64], m: &Mat) -> Result<Vec<f64>> {
    let k = qd_cr.len();
    if m.shape() != (k, k) {
        return Err(dim_err!("{k} region distances with a {:?} elevation matrix", m.shape()));
    }
    let mut out = Vec::with_capacity(feature_len(k));
    out.push(d_c_j);
    out.push(r_prime_j);
    out.extend_from_slice(qd_cr);
    out.extend_from_slice(m.as_slice());
    Ok(out)
}

/// `|d_c - alpha * ln(P_M)|` for `P_M` in `[1, 2]`.
pub fn update_distance(d_c_j: f64, p_m: f64, alpha: f64) -> Result<f64> {
    if !(1.0..=2.0).contains(&p_m) {
        return Err(invalid!("P_M = {p_m} outside [1, 2]"));
    }
    Ok((d_c_j - alpha * p_m.ln()).abs())
}

/// Maps a feature vector to `P_M` in `[1, 2]`.
pub trait MatchProbability: Sync {
    fn feature_len(&self) -> usize;
    fn predict(&self, features: &[f64]) -> Result<f64>;
}

/// Everything computed for one query/candidate pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairContext {
    pub c: Mat,
    pub c_shifted: Mat,
    pub sign_mask: Mat,
    pub s: Mat,
    pub p_sc: Mat,
    pub m_small: Mat,
    pub p_sm: f64,
    pub c_min: f64,
    pub qd_cr: Vec<f64>,
}

impl PairContext {
    pub fn features(&self, d_c_j: f64, r_prime_j: f64) -> Result<Vec<f64>> {
        assemble_features(d_c_j, r_prime_j, &self.qd_cr, &self.m_small)
    }
}

fn region_matrix(rec: &ImageRecord, normalize: bool) -> Mat {
    let mut f = rec.region_descriptors.to_mat();
    if normalize {
        let (rows, cols) = f.shape();
        let mut data = f.into_vec();
        for row in data.chunks_mut(cols) {
            linalg::normalize(row);
        }
        f = Mat::from_vec(rows, cols, data);
    }
    f
}

fn row_priors(rec: &ImageRecord) -> Result<Vec<f64>> {
    let (w, h) = (rec.regions.image_w(), rec.regions.image_h());
    rec.regions
        .boxes_with_full_image()
        .iter()
        .map(|b| box_prior(b, w, h))
        .collect()
}

/// Prepared per-image inputs shared by all pairs of a query.
struct ImageInputs {
    f: Mat,
    raw: Mat,
    priors: Vec<f64>,
}

impl ImageInputs {
    fn new(rec: &ImageRecord, params: &RerankParams) -> Result<Self> {
        Ok(ImageInputs {
            f: region_matrix(rec, params.normalize_rows),
            raw: rec.region_descriptors.to_mat(),
            priors: row_priors(rec)?,
        })
    }
}

fn build_pair(
    query: &ImageInputs,
    query_global: &[f64],
    cand: &ImageInputs,
    list: &CandidateList,
    distances: &[f64],
    j: usize,
    params: &RerankParams,
) -> Result<PairContext> {
    let m = params.top_regions_m;
    let c_raw = correlation_matrix(&query.f, &cand.f, params.correlation_mode)?;
    let FilteredCorrelation {
        shifted,
        sign_mask,
        filtered,
    } = filter_correlation(&c_raw, list.d_c_max());
    let r_prime_j = list.r_prime()[j];
    let s = information_matrix(
        &filtered,
        list.d_c_min(),
        r_prime_j,
        &query.priors,
        &cand.priors,
        params.beta,
    )?;
    let p_sc = probabilistic_correlation(&s, &shifted)?;
    let small = shrink_psc(&filtered, &p_sc, m)?;
    let c_min = filtered.min();
    let p_sm = candidate_softmax(distances, j, c_min)?;
    let m_small = elevation_matrix(p_sm, &small);
    let qd_cr = region_query_distances(query_global, &cand.raw, m)?;
    Ok(PairContext {
        c: filtered,
        c_shifted: shifted,
        sign_mask,
        s,
        p_sc,
        m_small,
        p_sm,
        c_min,
        qd_cr,
    })
}

/// Pair contexts of every candidate of `list`, in rank order.
pub fn pair_contexts(
    bundle: &RetrievalBundle,
    list: &CandidateList,
    params: &RerankParams,
) -> Result<Vec<PairContext>> {
    params.validate()?;
    let qi = bundle
        .query_index(list.query_id())
        .ok_or_else(|| invalid!("unknown query {}", list.query_id()))?;
    let query_rec = &bundle.queries[qi];
    let query = ImageInputs::new(query_rec, params)?;
    let query_global = linalg::to_f64(&query_rec.global);
    let distances = list.distances();
    list.candidates()
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let rec = bundle
                .database
                .get(c.db)
                .ok_or_else(|| invalid!("candidate index {} out of range", c.db))?;
            let cand = ImageInputs::new(rec, params)?;
            build_pair(&query, &query_global, &cand, list, &distances, j, params)
        })
        .collect()
}

/// Feature vectors of every candidate of `list`, in rank order.
pub fn candidate_features(
    bundle: &RetrievalBundle,
    list: &CandidateList,
    params: &RerankParams,
) -> Result<Vec<Vec<f64>>> {
    let contexts = pair_contexts(bundle, list, params)?;
    contexts
        .iter()
        .zip(list.candidates())
        .enumerate()
        .map(|(j, (ctx, c))| ctx.features(c.distance, list.r_prime()[j]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankedEntry {
    pub db: usize,
    pub original_rank: usize,
    pub d_c: f64,
    pub p_m: f64,
    pub d_new: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankedList {
    pub query_id: String,
    pub entries: Vec<RerankedEntry>,
}

impl RerankedList {
    pub fn db_indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.db).collect()
    }
}

/// Re-ranks one candidate list by the updated distances; ties keep the
/// original rank order.
pub fn rerank_query<M: MatchProbability + ?Sized>(
    bundle: &RetrievalBundle,
    list: &CandidateList,
    model: &M,
    params: &RerankParams,
) -> Result<RerankedList> {
    if model.feature_len() != params.feature_len() {
        return Err(dim_err!(
            "model expects {} features, parameters produce {}",
            model.feature_len(),
            params.feature_len()
        ));
    }
    let features = candidate_features(bundle, list, params)?;
    let mut entries = features
        .iter()
        .zip(list.candidates())
        .enumerate()
        .map(|(rank, (x, c))| {
            let p_m = model.predict(x)?;
            Ok(RerankedEntry {
                db: c.db,
                original_rank: rank,
                d_c: c.distance,
                p_m,
                d_new: update_distance(c.distance, p_m, params.alpha)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| {
        a.d_new
            .total_cmp(&b.d_new)
            .then(a.original_rank.cmp(&b.original_rank))
    });
    Ok(RerankedList {
        query_id: list.query_id().to_string(),
        entries,
    })
}

/// Re-ranks every list in parallel; output follows the input order.
pub fn rerank_all<M: MatchProbability + ?Sized>(
    bundle: &RetrievalBundle,
    lists: &[&CandidateList],
    model: &M,
    params: &RerankParams,
) -> Result<Vec<RerankedList>> {
    lists
        .par_iter()
        .map(|list| rerank_query(bundle, list, model, params))
        .collect()
}
