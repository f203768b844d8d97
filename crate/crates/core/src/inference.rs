//! Asymptotic variance of the direct correlation estimator and the
//! threshold test `H₀: |r_lk| ≤ ξ` vs `H₁: |r_lk| > ξ`.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::PairSet;
use crate::error::{Error, Result};
use crate::estimator::CovEstimate;
use crate::moments::{MomentEngine, QuadFormKey};

/// p-values below this are reported as 0 and flagged.
pub const P_UNDERFLOW: f64 = 1e-300;

/// Upper tail `P(Z > x)` of the standard normal.
pub fn normal_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Two-sided p-value `2·P(Z > |x|)`, capped at 1.
pub fn two_sided_p(x: f64) -> f64 {
    (2.0 * normal_tail(x.abs())).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairFlag {
    /// `δ̂² = 0` with `|r̂| > ξ`.
    DegenerateVariance,
    /// Negative `δ̂²` from rounding, clamped to 0.
    ClampedVariance,
    PValueUnderflow,
    /// `|r̂| > 1`; the p-value is an extrapolation.
    OutOfRange,
    /// A variance estimate of the pair is non-positive; nothing was tested.
    InvalidDiagonal,
}

impl PairFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            PairFlag::DegenerateVariance => "degenerate-variance",
            PairFlag::ClampedVariance => "clamped-variance",
            PairFlag::PValueUnderflow => "p-underflow",
            PairFlag::OutOfRange => "out-of-range",
            PairFlag::InvalidDiagonal => "invalid-diagonal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairInference {
    pub l: usize,
    pub k: usize,
    pub r_hat: f64,
    pub delta2_hat: f64,
    pub t_plus: f64,
    pub t_minus: f64,
    pub p_value: f64,
    /// Benjamini–Hochberg adjusted p-value across the table; NaN until filled.
    pub p_bh: f64,
    pub xi: f64,
    pub flags: Vec<PairFlag>,
}

/// Scale factor `1/|I|` turning a pair sum into a covariance entry.
fn inv_card(engine: &MomentEngine<'_>, set: PairSet) -> f64 {
    1.0 / set.cardinality(engine.sets()) as f64
}

/// Plug-in `Υ̂_lk`: asymptotic covariance of `(σ̂_lk, σ̂_ll, σ̂_kk)`.
pub fn upsilon(engine: &MomentEngine<'_>, l: usize, k: usize) -> Result<Matrix3<f64>> {
    if l == k {
        return Err(Error::InvalidArgument("upsilon needs l != k".into()));
    }
    engine.sets().require_uvc()?;
    let keys = [PairSet::Offdiag(l, k), PairSet::Diag(l), PairSet::Diag(k)];
    let centers = keys.map(|s| engine.center(s));
    let scales = keys.map(|s| inv_card(engine, s));
    let mut u = Matrix3::zeros();
    for a in 0..3 {
        for b in a..3 {
            let v = engine.quad_form_centered(
                QuadFormKey::new(keys[a], keys[b]),
                centers[a],
                centers[b],
            ) * scales[a]
                * scales[b];
            u[(a, b)] = v;
            u[(b, a)] = v;
        }
    }
    Ok(u)
}

/// Gradient of `r_lk = σ_lk / √(σ_ll σ_kk)` in `(σ_lk, σ_ll, σ_kk)`.
pub fn gradient(sigma_ll: f64, sigma_kk: f64, r_lk: f64) -> Vector3<f64> {
    Vector3::new(
        1.0 / (sigma_ll.sqrt() * sigma_kk.sqrt()),
        -r_lk / (2.0 * sigma_ll),
        -r_lk / (2.0 * sigma_kk),
    )
}

/// `δ̂²_lk = f̂ᵀ Υ̂ f̂`. Returns `None` when either variance estimate is
/// non-positive; the flag is `true` if a negative value was clamped to 0.
pub fn delta2(l: usize, k: usize, cov: &CovEstimate, ups: &Matrix3<f64>) -> Option<(f64, bool)> {
    let (sll, skk) = (cov.sigma_hat[(l, l)], cov.sigma_hat[(k, k)]);
    if !(sll > 0.0 && skk > 0.0) {
        return None;
    }
    let f = gradient(sll, skk, cov.r_hat[(l, k)]);
    let d = (f.transpose() * ups * f)[(0, 0)];
    if d < 0.0 {
        Some((0.0, true))
    } else {
        Some((d, false))
    }
}

/// Test statistics and p-value for one pair.
pub fn test_pair(
    l: usize,
    k: usize,
    r_hat: f64,
    delta2_hat: f64,
    n: usize,
    xi: f64,
) -> PairInference {
    let mut flags = Vec::new();
    if r_hat.abs() > 1.0 {
        flags.push(PairFlag::OutOfRange);
    }
    let up = (r_hat - xi).max(0.0);
    let down = (r_hat + xi).min(0.0);
    let (t_plus, t_minus, p_value) = if delta2_hat > 0.0 {
        let scale = (n as f64).sqrt() / delta2_hat.sqrt();
        let (tp, tm) = (scale * up, scale * down);
        (tp, tm, two_sided_p(tp.abs().max(tm.abs())))
    } else if up > 0.0 || down < 0.0 {
        flags.push(PairFlag::DegenerateVariance);
        let tp = if up > 0.0 { f64::INFINITY } else { 0.0 };
        let tm = if down < 0.0 { f64::NEG_INFINITY } else { 0.0 };
        (tp, tm, 0.0)
    } else {
        (0.0, 0.0, 1.0)
    };
    let degenerate = flags.contains(&PairFlag::DegenerateVariance);
    let p_value = if !degenerate && p_value < P_UNDERFLOW {
        flags.push(PairFlag::PValueUnderflow);
        0.0
    } else {
        p_value
    };
    PairInference {
        l,
        k,
        r_hat,
        delta2_hat,
        t_plus,
        t_minus,
        p_value,
        p_bh: f64::NAN,
        xi,
        flags,
    }
}

/// Element `θ_rs` of the asymptotic covariance of `√n vec(Σ̂)`, addressed
/// by covariance entries `(l1, k1)` and `(l2, k2)`.
pub fn theta(
    engine: &MomentEngine<'_>,
    (l1, k1): (usize, usize),
    (l2, k2): (usize, usize),
) -> Result<f64> {
    engine.sets().require_uvc()?;
    let a = PairSet::for_entry(l1, k1);
    let b = PairSet::for_entry(l2, k2);
    Ok(engine.quad_form(QuadFormKey::new(a, b)) * inv_card(engine, a) * inv_card(engine, b))
}

/// `θ_rs` by 0-based column-major `vec` indices `r = l1 + k1·p`, `s = l2 + k2·p`.
pub fn theta_entry(engine: &MomentEngine<'_>, r: usize, s: usize) -> Result<f64> {
    let p = engine.sets().p();
    if r >= p * p || s >= p * p {
        return Err(Error::InvalidArgument(format!(
            "theta index out of range for p = {p}"
        )));
    }
    theta(engine, (r % p, r / p), (s % p, s / p))
}

/// Step-up Benjamini–Hochberg adjustment. NaN inputs stay NaN and do not
/// count towards the number of tests.
pub fn benjamini_hochberg(p: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..p.len()).filter(|&i| !p[i].is_nan()).collect();
    let m = idx.len();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut out = vec![f64::NAN; p.len()];
    let mut running = 1.0f64;
    for (rank, &i) in idx.iter().enumerate().rev() {
        running = running.min(p[i] * m as f64 / (rank + 1) as f64);
        out[i] = running.min(1.0);
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct InferenceTable {
    pub pairs: Vec<PairInference>,
    /// Pairs with a non-positive variance estimate. They carry p = 1 and
    /// the `InvalidDiagonal` flag and take no part in the BH adjustment.
    pub skipped: Vec<PairInference>,
}

/// Tests every pair `l < k` in lexicographic order.
pub fn infer_all(engine: &MomentEngine<'_>, cov: &CovEstimate, xi: f64) -> Result<InferenceTable> {
    if !(xi >= 0.0) {
        return Err(Error::InvalidArgument(format!("xi must be >= 0, got {xi}")));
    }
    engine.sets().require_uvc()?;
    let p = cov.p();
    let n = engine.n();
    let pairs: Vec<(usize, usize)> = (0..p)
        .flat_map(|l| ((l + 1)..p).map(move |k| (l, k)))
        .collect();
    let results: Vec<Option<PairInference>> = pairs
        .par_iter()
        .map(|&(l, k)| {
            let ups = upsilon(engine, l, k).ok()?;
            let (d2, clamped) = delta2(l, k, cov, &ups)?;
            let mut rec = test_pair(l, k, cov.r_hat[(l, k)], d2, n, xi);
            if clamped {
                rec.flags.insert(0, PairFlag::ClampedVariance);
            }
            Some(rec)
        })
        .collect();
    let mut table = InferenceTable {
        pairs: Vec::new(),
        skipped: Vec::new(),
    };
    for (pair, res) in pairs.into_iter().zip(results) {
        match res {
            Some(r) => table.pairs.push(r),
            None => table.skipped.push(PairInference {
                l: pair.0,
                k: pair.1,
                r_hat: cov.r_hat[pair],
                delta2_hat: f64::NAN,
                t_plus: 0.0,
                t_minus: 0.0,
                p_value: 1.0,
                p_bh: f64::NAN,
                xi,
                flags: vec![PairFlag::InvalidDiagonal],
            }),
        }
    }
    let raw: Vec<f64> = table.pairs.iter().map(|r| r.p_value).collect();
    for (rec, adj) in table.pairs.iter_mut().zip(benjamini_hochberg(&raw)) {
        rec.p_bh = adj;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SampleMatrix, UniqueSets};
    use crate::estimator::estimate;
    use crate::moments::VDenominator;
    use nalgebra::DMatrix;

    #[test]
    fn tail_values() {
        // 2·P(Z > 4) = erfc(4/√2)
        assert!((two_sided_p(4.0) - 6.334_248_366_623_984e-5).abs() < 1e-17);
        assert_eq!(two_sided_p(0.0), 1.0);
        assert!((two_sided_p(1.959_963_984_540_054) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn test_pair_example() {
        let r = test_pair(0, 1, 0.5, 1.0, 100, 0.1);
        assert!((r.t_plus - 4.0).abs() < 1e-12);
        assert_eq!(r.t_minus, 0.0);
        assert!((r.p_value - 6.334_248_366_623_984e-5).abs() < 1e-15);
        let m = test_pair(0, 1, -0.5, 1.0, 100, 0.1);
        assert_eq!(m.p_value, r.p_value);
        assert_eq!(m.t_plus, 0.0);
        assert!((m.t_minus + 4.0).abs() < 1e-12);
    }

    #[test]
    fn inside_threshold_is_one() {
        for xi in [0.0, 0.1, 0.5] {
            let r = test_pair(0, 1, 0.0, 0.3, 50, xi);
            assert_eq!((r.t_plus, r.t_minus, r.p_value), (0.0, 0.0, 1.0));
        }
        let r = test_pair(0, 1, 0.05, 0.0, 50, 0.1);
        assert_eq!(r.p_value, 1.0);
        assert!(r.flags.is_empty());
    }

    #[test]
    fn degenerate_variance() {
        let r = test_pair(0, 1, 0.3, 0.0, 50, 0.1);
        assert_eq!(r.p_value, 0.0);
        assert_eq!(r.flags, vec![PairFlag::DegenerateVariance]);
    }

    #[test]
    fn xi_zero_is_conventional() {
        let r = test_pair(0, 1, 0.21, 2.0, 80, 0.0);
        let t = (80.0f64).sqrt() * 0.21 / 2.0f64.sqrt();
        assert_eq!(r.t_minus, 0.0);
        assert_eq!(r.p_value, two_sided_p(t));
        let m = test_pair(0, 1, -0.21, 2.0, 80, 0.0);
        assert_eq!(m.t_plus, 0.0);
        assert_eq!(m.p_value, two_sided_p(t));
    }

    #[test]
    fn underflow_flagged() {
        let r = test_pair(0, 1, 0.9, 1e-6, 1000, 0.0);
        assert_eq!(r.p_value, 0.0);
        assert!(r.flags.contains(&PairFlag::PValueUnderflow));
    }

    #[test]
    fn delta2_reductions() {
        let cov = CovEstimate::from_sigma(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]), 10);
        let ups = Matrix3::new(0.7, 0.1, 0.2, 0.1, 0.5, 0.3, 0.2, 0.3, 0.9);
        let (d, clamped) = delta2(0, 1, &cov, &ups).unwrap();
        assert!(!clamped);
        assert!((d - 0.7 / 6.0).abs() < 1e-15);
        assert_eq!(delta2(0, 1, &cov, &Matrix3::zeros()), Some((0.0, false)));
        let bad =
            CovEstimate::from_sigma(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 3.0]), 10);
        assert_eq!(delta2(0, 1, &bad, &ups), None);
    }

    #[test]
    fn bh_adjustment() {
        let adj = benjamini_hochberg(&[0.01, 0.04, 0.03, f64::NAN]);
        assert!((adj[0] - 0.03).abs() < 1e-15);
        assert!((adj[1] - 0.04).abs() < 1e-15);
        assert!((adj[2] - 0.04).abs() < 1e-15);
        assert!(adj[3].is_nan());
    }

    fn sets() -> UniqueSets {
        UniqueSets {
            sets: vec![vec![0, 1], vec![2, 3], vec![4, 5]],
            shared: vec![],
        }
    }

    #[test]
    fn zero_data() {
        let z = SampleMatrix::new(DMatrix::zeros(6, 6), false).unwrap();
        let s = sets();
        let (c, cov) = estimate(&z, &s).unwrap();
        let e = MomentEngine::new(&z, &c, &s, VDenominator::Mixed);
        assert_eq!(upsilon(&e, 0, 1).unwrap(), Matrix3::zeros());
        assert_eq!(theta_entry(&e, 0, 4).unwrap(), 0.0);
        let t = infer_all(&e, &cov, 0.0).unwrap();
        assert!(t.pairs.is_empty());
        assert_eq!(t.skipped.len(), 3);
        assert!(t.skipped.iter().all(|r| r.p_value == 1.0));
    }

    #[test]
    fn upsilon_symmetric_and_theta_consistent() {
        let v: Vec<f64> = (0..60)
            .map(|i| ((i * 37 % 23) as f64 - 11.0) / 7.0)
            .collect();
        let z = SampleMatrix::new(DMatrix::from_row_slice(10, 6, &v), false).unwrap();
        let s = sets();
        let (c, _) = estimate(&z, &s).unwrap();
        let e = MomentEngine::new(&z, &c, &s, VDenominator::Mixed);
        let u = upsilon(&e, 0, 2).unwrap();
        assert_eq!(u, u.transpose());
        // Υ_lk[1][1] is θ for (l,l),(l,l); index r = l + l·p.
        let th = theta_entry(&e, 0, 0).unwrap();
        assert!((u[(1, 1)] - th).abs() <= 1e-15 * th.abs().max(1.0));
        let th = theta(&e, (0, 2), (2, 2)).unwrap();
        assert!((u[(0, 2)] - th).abs() <= 1e-15 * th.abs().max(1.0));
    }

    #[test]
    fn one_record_per_pair_for_two_variables() {
        let v: Vec<f64> = (0..40)
            .map(|i| ((i * 13 % 17) as f64 - 8.0) / 3.0)
            .collect();
        let z = SampleMatrix::new(DMatrix::from_row_slice(10, 4, &v), true).unwrap();
        let s = UniqueSets {
            sets: vec![vec![0, 1], vec![2, 3]],
            shared: vec![],
        };
        let (c, cov) = estimate(&z, &s).unwrap();
        if cov.all_valid() {
            let e = MomentEngine::new(&z, &c, &s, VDenominator::Mixed);
            let t = infer_all(&e, &cov, 0.1).unwrap();
            assert_eq!(t.pairs.len(), 1);
            assert!(t.pairs[0].p_value >= 0.0 && t.pairs[0].p_value <= 1.0);
        }
    }
}
