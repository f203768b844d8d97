//! The direct covariance and correlation estimator.
//!
//! `σ̂_ll` averages the cross-products between distinct unique members of
//! `l`; `σ̂_lk` averages the cross-products between unique members of `l`
//! and of `k`. Measurement noise is uncorrelated across lower-level
//! variables, so neither average picks up a noise variance.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::{PairSet, SampleMatrix, UniqueSets};
use crate::error::Result;
use crate::linalg::to_correlation;
use crate::moments::{cross_products, pair_sum, CrossProducts};

/// Direct estimate of the higher-level covariance and correlation.
#[derive(Debug, Clone, Serialize)]
pub struct CovEstimate {
    #[serde(skip)]
    pub sigma_hat: DMatrix<f64>,
    #[serde(skip)]
    pub r_hat: DMatrix<f64>,
    pub n: usize,
    /// `σ̂_ll > 0`; rows/columns of `r_hat` are NaN where this is false.
    pub diag_valid: Vec<bool>,
    /// Pairs `l < k` with `|r̂_lk| > 1`, reported raw.
    pub out_of_range: Vec<(usize, usize)>,
}

impl CovEstimate {
    pub fn from_sigma(sigma_hat: DMatrix<f64>, n: usize) -> CovEstimate {
        let (r_hat, diag_valid) = estimate_correlation(&sigma_hat);
        let p = r_hat.nrows();
        let mut out_of_range = Vec::new();
        for l in 0..p {
            for k in (l + 1)..p {
                if r_hat[(l, k)].abs() > 1.0 {
                    out_of_range.push((l, k));
                }
            }
        }
        CovEstimate {
            sigma_hat,
            r_hat,
            n,
            diag_valid,
            out_of_range,
        }
    }

    pub fn p(&self) -> usize {
        self.sigma_hat.nrows()
    }

    pub fn all_valid(&self) -> bool {
        self.diag_valid.iter().all(|&v| v)
    }

    /// Higher-level indices with a non-positive variance estimate.
    pub fn invalid(&self) -> Vec<usize> {
        (0..self.p()).filter(|&l| !self.diag_valid[l]).collect()
    }
}

pub fn estimate_sigma(c: &CrossProducts, sets: &UniqueSets) -> Result<DMatrix<f64>> {
    sets.require_uvc()?;
    let p = sets.p();
    let mut sigma = DMatrix::zeros(p, p);
    for l in 0..p {
        let d = PairSet::Diag(l);
        sigma[(l, l)] = pair_sum(c, sets, d) / d.cardinality(sets) as f64;
        for k in (l + 1)..p {
            let o = PairSet::Offdiag(l, k);
            let v = pair_sum(c, sets, o) / o.cardinality(sets) as f64;
            sigma[(l, k)] = v;
            sigma[(k, l)] = v;
        }
    }
    Ok(sigma)
}

pub fn estimate_correlation(sigma: &DMatrix<f64>) -> (DMatrix<f64>, Vec<bool>) {
    to_correlation(sigma)
}

/// Cross-products plus direct estimate in one call.
pub fn estimate(z: &SampleMatrix, sets: &UniqueSets) -> Result<(CrossProducts, CovEstimate)> {
    let c = cross_products(z);
    let sigma = estimate_sigma(&c, sets)?;
    Ok((c, CovEstimate::from_sigma(sigma, z.n())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    fn sets2() -> UniqueSets {
        UniqueSets {
            sets: vec![vec![0, 1], vec![2, 3]],
            shared: vec![],
        }
    }

    #[test]
    fn all_equal_rows() {
        let z = SampleMatrix::new(
            DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0]),
            false,
        )
        .unwrap();
        let (_, est) = estimate(&z, &sets2()).unwrap();
        assert_eq!(est.sigma_hat, DMatrix::from_element(2, 2, 2.0));
        assert_eq!(est.r_hat, DMatrix::from_element(2, 2, 1.0));
        assert!(est.out_of_range.is_empty());
    }

    #[test]
    fn zero_unique_columns() {
        let z = SampleMatrix::new(
            DMatrix::from_row_slice(
                3,
                4,
                &[0.0, 0.0, 1.0, 2.0, 0.0, 0.0, -1.0, 0.5, 0.0, 0.0, 3.0, 1.0],
            ),
            false,
        )
        .unwrap();
        let (_, est) = estimate(&z, &sets2()).unwrap();
        assert_eq!(est.sigma_hat[(0, 0)], 0.0);
        assert_eq!(est.sigma_hat[(0, 1)], 0.0);
        assert_eq!(est.diag_valid, vec![false, true]);
        assert!(est.r_hat[(0, 1)].is_nan());
    }

    #[test]
    fn single_pair_set() {
        let c = CrossProducts {
            c_hat: DMatrix::from_row_slice(2, 2, &[3.0, 0.7, 0.7, 5.0]),
            n: 10,
        };
        let s = UniqueSets {
            sets: vec![vec![0, 1]],
            shared: vec![],
        };
        assert_eq!(estimate_sigma(&c, &s).unwrap()[(0, 0)], 0.7);
    }

    #[test]
    fn uvc_required() {
        let c = CrossProducts {
            c_hat: DMatrix::identity(3, 3),
            n: 10,
        };
        let s = UniqueSets {
            sets: vec![vec![0, 1], vec![2]],
            shared: vec![],
        };
        assert!(matches!(estimate_sigma(&c, &s), Err(Error::Uvc(_))));
    }

    #[test]
    fn correlation_cases() {
        let (r, v) =
            estimate_correlation(&DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                2.0, 3.0,
            ])));
        assert_eq!(r, DMatrix::identity(2, 2));
        assert_eq!(v, vec![true, true]);
        let s = DMatrix::from_row_slice(2, 2, &[-0.1, 0.2, 0.2, 1.0]);
        let (r, v) = estimate_correlation(&s);
        assert_eq!(v, vec![false, true]);
        assert!(r[(0, 0)].is_nan() && r[(0, 1)].is_nan() && r[(1, 0)].is_nan());
        assert_eq!(r[(1, 1)], 1.0);
    }

    #[test]
    fn raw_values_beyond_one_flagged() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.5, 1.5, 1.0]);
        let est = CovEstimate::from_sigma(s, 5);
        assert_eq!(est.r_hat[(0, 1)], 1.5);
        assert_eq!(est.out_of_range, vec![(0, 1)]);
    }
}
