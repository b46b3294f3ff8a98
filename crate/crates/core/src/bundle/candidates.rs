use crate::error::{dim_err, invalid, Error, Result};
use crate::linalg;

use super::DescriptorMatrix;

/// One retrieved database image: its row index in the database and its
/// global-descriptor L2 distance to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub db: usize,
    pub distance: f64,
}

/// Ranked top-K candidates of one query plus the derived distance span.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateList {
    query_id: String,
    candidates: Vec<Candidate>,
    r_prime: Vec<f64>,
}

impl CandidateList {
    /// Candidates must be non-empty, finite and sorted by non-decreasing
    /// distance.
    pub fn new(query_id: impl Into<String>, candidates: Vec<Candidate>) -> Result<Self> {
        let query_id = query_id.into();
        if candidates.is_empty() {
            return Err(Error::Empty(format!("candidate list of query {query_id}")));
        }
        if candidates.iter().any(|c| !c.distance.is_finite() || c.distance < 0.0) {
            return Err(invalid!("query {query_id}: candidate distances must be finite and >= 0"));
        }
        if candidates.windows(2).any(|w| w[1].distance < w[0].distance) {
            return Err(invalid!("query {query_id}: candidates not sorted by distance"));
        }
        let r_prime = relative_distances(&candidates);
        Ok(CandidateList {
            query_id,
            candidates,
            r_prime,
        })
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.distance).collect()
    }

    pub fn d_c_min(&self) -> f64 {
        self.candidates[0].distance
    }

    pub fn d_c_max(&self) -> f64 {
        self.candidates[self.candidates.len() - 1].distance
    }

    pub fn r_prime(&self) -> &[f64] {
        &self.r_prime
    }

    pub fn db_indices(&self) -> Vec<usize> {
        self.candidates.iter().map(|c| c.db).collect()
    }
}

/// Forward differences of the sorted distances, last entry repeated so the
/// result has one value per candidate. A single candidate gets 0.
fn relative_distances(candidates: &[Candidate]) -> Vec<f64> {
    let k = candidates.len();
    if k == 1 {
        return vec![0.0];
    }
    let mut r: Vec<f64> = candidates
        .windows(2)
        .map(|w| w[1].distance - w[0].distance)
        .collect();
    r.push(r[k - 2]);
    r
}

/// Exhaustive L2 top-`k` search. Ties go to the lower database row.
pub fn retrieve_topk(
    query_id: &str,
    query: &[f32],
    db: &DescriptorMatrix,
    k: usize,
) -> Result<CandidateList> {
    if k == 0 {
        return Err(invalid!("k must be at least 1"));
    }
    if query.len() != db.cols() {
        return Err(dim_err!(
            "query has dimension {}, database has {}",
            query.len(),
            db.cols()
        ));
    }
    if k > db.rows() {
        return Err(invalid!("k = {k} exceeds database size {}", db.rows()));
    }
    let q = linalg::to_f64(query);
    let mut scored: Vec<Candidate> = (0..db.rows())
        .map(|r| {
            let d: f64 = db
                .row(r)
                .iter()
                .zip(&q)
                .map(|(&a, &b)| {
                    let t = f64::from(a) - b;
                    t * t
                })
                .sum();
            Candidate {
                db: r,
                distance: d.sqrt(),
            }
        })
        .collect();
    let by_distance =
        |a: &Candidate, b: &Candidate| a.distance.total_cmp(&b.distance).then(a.db.cmp(&b.db));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, by_distance);
        scored.truncate(k);
    }
    scored.sort_by(by_distance);
    CandidateList::new(query_id, scored)
}
