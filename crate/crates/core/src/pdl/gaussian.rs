//! Naive-Bayes alternative to the bagged trees.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const VARIANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub prior: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl ClassStats {
    fn fit(rows: &[&Vec<f64>], total: usize) -> Self {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut variance = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in variance.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        variance
            .iter_mut()
            .for_each(|s| *s = (*s / n).max(VARIANCE_FLOOR));
        ClassStats {
            prior: n / total as f64,
            mean,
            variance,
        }
    }

    fn log_joint(&self, x: &[f64]) -> f64 {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        self.prior.ln()
            + x.iter()
                .zip(&self.mean)
                .zip(&self.variance)
                .map(|((v, m), s)| -0.5 * (ln_2pi + s.ln() + (v - m) * (v - m) / s))
                .sum::<f64>()
    }
}

/// Per-class diagonal Gaussians. A class absent from training has no stats,
/// which reduces prediction to the prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    pub class1: Option<ClassStats>,
    pub class2: Option<ClassStats>,
}

impl GaussianNb {
    pub fn fit(x: &[Vec<f64>], y: &[u8]) -> Result<Self> {
        if x.is_empty() {
            return Err(invalid!("empty training set"));
        }
        let pick = |label: u8| -> Vec<&Vec<f64>> {
            x.iter().zip(y).filter(|(_, &l)| l == label).map(|(r, _)| r).collect()
        };
        let (r1, r2) = (pick(1), pick(2));
        Ok(GaussianNb {
            class1: (!r1.is_empty()).then(|| ClassStats::fit(&r1, x.len())),
            class2: (!r2.is_empty()).then(|| ClassStats::fit(&r2, x.len())),
        })
    }

    /// Posterior probability of label 2.
    pub fn posterior2(&self, x: &[f64]) -> f64 {
        match (&self.class1, &self.class2) {
            (Some(c1), Some(c2)) => {
                let diff = c1.log_joint(x) - c2.log_joint(x);
                // logistic of -(l1 - l2), stable on both tails
                if diff >= 0.0 {
                    let e = (-diff).exp();
                    e / (1.0 + e)
                } else {
                    1.0 / (1.0 + diff.exp())
                }
            }
            (None, Some(_)) => 1.0,
            _ => 0.0,
        }
    }

    pub fn feature_len(&self) -> Option<usize> {
        self.class1
            .as_ref()
            .or(self.class2.as_ref())
            .map(|c| c.mean.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_midpoint_is_half() {
        let x = vec![vec![-1.0], vec![-3.0], vec![1.0], vec![3.0]];
        let y = vec![1, 1, 2, 2];
        let nb = GaussianNb::fit(&x, &y).unwrap();
        assert!((nb.posterior2(&[0.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn far_into_class_two() {
        let x = vec![vec![-1.0], vec![-3.0], vec![1.0], vec![3.0]];
        let y = vec![1, 1, 2, 2];
        let nb = GaussianNb::fit(&x, &y).unwrap();
        // closed form: both variances 1, means -2 and 2 -> log-odds = 4x
        let x0 = 3.0;
        let expect = 1.0 / (1.0 + (-4.0f64 * x0).exp());
        assert!((nb.posterior2(&[x0]) - expect).abs() < 1e-12);
        assert!(nb.posterior2(&[3.0]) > 1.0 - 1e-3);
    }

    #[test]
    fn constant_feature_is_floored() {
        let x = vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 5.0], vec![1.0, 6.0]];
        let y = vec![1, 1, 2, 2];
        let nb = GaussianNb::fit(&x, &y).unwrap();
        assert_eq!(nb.class1.as_ref().unwrap().variance[0], VARIANCE_FLOOR);
        let p = nb.posterior2(&[1.0, 5.5]);
        assert!(p.is_finite() && p > 0.5);
        assert!(nb.posterior2(&[2.0, 3.0]).is_finite());
    }

    #[test]
    fn single_class_is_prior_only() {
        let nb = GaussianNb::fit(&[vec![0.0], vec![1.0]], &[1, 1]).unwrap();
        assert_eq!(nb.posterior2(&[100.0]), 0.0);
        let nb = GaussianNb::fit(&[vec![0.0]], &[2]).unwrap();
        assert_eq!(nb.posterior2(&[-100.0]), 1.0);
    }
}
