//! Brute-force reference computations. Nothing here calls into the
//! streaming engine: `V̂` is built as an explicit `q² x q²` matrix from
//! per-sample outer products.
#![allow(dead_code)]

use hicorr_core::{DMatrix, PairSet, UniqueSets};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `(n−1)⁻¹ Σ_i z_i z_iᵀ` by explicit loops.
pub fn naive_c(z: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, q) = z.shape();
    let mut c = DMatrix::zeros(q, q);
    for i in 0..n {
        for a in 0..q {
            for b in 0..q {
                c[(a, b)] += z[(i, a)] * z[(i, b)];
            }
        }
    }
    c / (n - 1) as f64
}

/// Column-major `vec` of a square matrix.
pub fn vec_of(m: &DMatrix<f64>) -> Vec<f64> {
    m.as_slice().to_vec()
}

/// `V̂ = n⁻¹ Σ_i z_i z_iᵀ ⊗ z_i z_iᵀ − vec(Ĉ) vec(Ĉ)ᵀ`, materialized.
/// With `uniform_n`, `Ĉ` in the second term uses denominator `n`.
pub fn naive_v(z: &DMatrix<f64>, uniform_n: bool) -> DMatrix<f64> {
    let (n, q) = z.shape();
    let qq = q * q;
    let mut v = DMatrix::zeros(qq, qq);
    for i in 0..n {
        let zi: Vec<f64> = (0..q).map(|j| z[(i, j)]).collect();
        // vec(z zᵀ) = z ⊗ z
        let mut w = vec![0.0; qq];
        for b in 0..q {
            for a in 0..q {
                w[a + b * q] = zi[a] * zi[b];
            }
        }
        for r in 0..qq {
            for s in 0..qq {
                v[(r, s)] += w[r] * w[s];
            }
        }
    }
    v /= n as f64;
    let mut c = naive_c(z);
    if uniform_n {
        c *= (n - 1) as f64 / n as f64;
    }
    let vc = vec_of(&c);
    for r in 0..qq {
        for s in 0..qq {
            v[(r, s)] -= vc[r] * vc[s];
        }
    }
    v
}

/// The 0/1 indicator `m` of a set of ordered pairs, as a `q²` vector.
pub fn indicator(q: usize, pairs: &[(usize, usize)]) -> Vec<f64> {
    let mut m = vec![0.0; q * q];
    for &(i, j) in pairs {
        m[i + j * q] = 1.0;
    }
    m
}

pub fn pairs_of(sets: &UniqueSets, set: PairSet) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    match set {
        PairSet::Diag(l) => {
            for &i in &sets.sets[l] {
                for &j in &sets.sets[l] {
                    if i != j {
                        out.push((i, j));
                    }
                }
            }
        }
        PairSet::Offdiag(l, k) => {
            for &i in &sets.sets[l] {
                for &j in &sets.sets[k] {
                    out.push((i, j));
                }
            }
        }
    }
    out
}

pub fn bilinear(a: &[f64], v: &DMatrix<f64>, b: &[f64]) -> f64 {
    let mut total = 0.0;
    for r in 0..a.len() {
        if a[r] == 0.0 {
            continue;
        }
        for s in 0..b.len() {
            total += a[r] * v[(r, s)] * b[s];
        }
    }
    total
}

pub fn naive_quad(z: &DMatrix<f64>, sets: &UniqueSets, a: PairSet, b: PairSet) -> f64 {
    let q = z.ncols();
    let v = naive_v(z, false);
    bilinear(
        &indicator(q, &pairs_of(sets, a)),
        &v,
        &indicator(q, &pairs_of(sets, b)),
    )
}

/// Row `(l, k)` of the linear map `vec(Ĉ) -> vec(Σ̂)`.
pub fn sigma_row(q: usize, sets: &UniqueSets, l: usize, k: usize) -> Vec<f64> {
    let set = if l == k {
        PairSet::Diag(l)
    } else {
        PairSet::Offdiag(l, k)
    };
    let pairs = pairs_of(sets, set);
    let w = 1.0 / pairs.len() as f64;
    indicator(q, &pairs).into_iter().map(|x| x * w).collect()
}

/// `Θ̂ = M V̂ Mᵀ` for the requested covariance entries.
pub fn naive_theta(
    z: &DMatrix<f64>,
    sets: &UniqueSets,
    entries: &[(usize, usize)],
) -> DMatrix<f64> {
    let q = z.ncols();
    let v = naive_v(z, false);
    let rows: Vec<Vec<f64>> = entries
        .iter()
        .map(|&(l, k)| sigma_row(q, sets, l, k))
        .collect();
    DMatrix::from_fn(entries.len(), entries.len(), |a, b| {
        bilinear(&rows[a], &v, &rows[b])
    })
}

/// `Σ̂` straight from the estimating equations on a given `C`.
pub fn naive_sigma(c: &DMatrix<f64>, sets: &UniqueSets) -> DMatrix<f64> {
    let p = sets.sets.len();
    let q = c.nrows();
    DMatrix::from_fn(p, p, |l, k| {
        let row = sigma_row(q, sets, l, k);
        vec_of(c).iter().zip(&row).map(|(x, w)| x * w).sum()
    })
}

/// Delta-method variance of `r_lk` with a finite-difference gradient of
/// `(s_lk, s_ll, s_kk) -> s_lk / √(s_ll s_kk)`.
pub fn naive_delta2(z: &DMatrix<f64>, sets: &UniqueSets, l: usize, k: usize) -> f64 {
    let sigma = naive_sigma(&naive_c(z), sets);
    let x = [sigma[(l, k)], sigma[(l, l)], sigma[(k, k)]];
    let r = |x: [f64; 3]| x[0] / (x[1] * x[2]).sqrt();
    let mut grad = [0.0; 3];
    for d in 0..3 {
        let h = 1e-6 * x[d].abs().max(1e-3);
        let (mut up, mut down) = (x, x);
        up[d] += h;
        down[d] -= h;
        grad[d] = (r(up) - r(down)) / (2.0 * h);
    }
    let theta = naive_theta(z, sets, &[(l, k), (l, l), (k, k)]);
    let mut total = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            total += grad[a] * theta[(a, b)] * grad[b];
        }
    }
    total
}

/// A random instance: `p` unique sets of size >= 2 inside `q <= 6`
/// lower-level variables, some of which may be left shared.
pub struct Instance {
    pub z: DMatrix<f64>,
    pub sets: UniqueSets,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let q = rng.random_range(2..=6);
    let p_max = q / 2;
    let p = rng.random_range(1..=p_max);
    let n = rng.random_range(2..=20);
    let mut order: Vec<usize> = (0..q).collect();
    for i in (1..q).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut sets = vec![Vec::new(); p];
    let mut it = order.into_iter();
    for s in sets.iter_mut() {
        s.push(it.next().unwrap());
        s.push(it.next().unwrap());
    }
    let mut shared = Vec::new();
    for j in it {
        if rng.random_bool(0.5) {
            shared.push(j);
        } else {
            let l = rng.random_range(0..p);
            sets[l].push(j);
        }
    }
    for s in sets.iter_mut() {
        s.sort_unstable();
    }
    shared.sort_unstable();
    let scale = rng.random_range(0.1..3.0);
    let z = DMatrix::from_fn(n, q, |_, _| scale * (rng.random::<f64>() * 2.0 - 1.0) + 0.3);
    Instance {
        z,
        sets: UniqueSets { sets, shared },
    }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn all_keys(p: usize) -> Vec<PairSet> {
    let mut v = Vec::new();
    for l in 0..p {
        v.push(PairSet::Diag(l));
        for k in 0..p {
            if k != l {
                v.push(PairSet::Offdiag(l, k));
            }
        }
    }
    v
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}
