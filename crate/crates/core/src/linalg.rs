use nalgebra::{DMatrix, SymmetricEigen};

/// Eigenvalues in (−PSD_TOL, 0] are treated as zero.
pub const PSD_TOL: f64 = 1e-10;

/// Smallest eigenvalue of a symmetric matrix (NaN if any entry is NaN).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.iter().any(|x| !x.is_finite()) {
        return f64::NAN;
    }
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

pub fn frobenius_sq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    frobenius_sq(a, b).sqrt()
}

/// `diag(S)^{-1/2} S diag(S)^{-1/2}`; entries touching a non-positive
/// diagonal become NaN.
pub fn to_correlation(sigma: &DMatrix<f64>) -> (DMatrix<f64>, Vec<bool>) {
    let p = sigma.nrows();
    let valid: Vec<bool> = (0..p).map(|l| sigma[(l, l)] > 0.0).collect();
    let r = DMatrix::from_fn(p, p, |l, k| {
        if !(valid[l] && valid[k]) {
            f64::NAN
        } else if l == k {
            1.0
        } else {
            sigma[(l, k)] / (sigma[(l, l)] * sigma[(k, k)]).sqrt()
        }
    });
    (r, valid)
}
