//! Sample cross-products and fourth-moment quadratic forms.
//!
//! Every quantity the inference and shrinkage code needs from the
//! `q² x q²` fourth-moment matrix is a quadratic form `m_aᵀ V̂ m_b` where
//! `m_a`, `m_b` are indicators of a [`PairSet`]. Such a form equals
//!
//! ```text
//! n⁻¹ Σ_i g_a(z_i) g_b(z_i) − G_a G_b
//! ```
//!
//! with `g_a(z) = Σ_{(i,j)∈a} z_i z_j` and `G_a = m_aᵀ vec(Ĉ)`. For the
//! pair families used here `g` collapses to products of per-sample group
//! sums, so each form costs O(n) once the group sums are cached.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{PairSet, SampleMatrix, UniqueSets};

/// `Ĉ` with `ĉ_jk = (n−1)⁻¹ Σ_i z_ij z_ik`.
#[derive(Debug, Clone)]
pub struct CrossProducts {
    pub c_hat: DMatrix<f64>,
    pub n: usize,
}

pub fn cross_products(z: &SampleMatrix) -> CrossProducts {
    let n = z.n();
    let mut c = z.values().tr_mul(z.values());
    c /= (n - 1) as f64;
    let q = c.nrows();
    for j in 0..q {
        for k in (j + 1)..q {
            c[(k, j)] = c[(j, k)];
        }
    }
    CrossProducts { c_hat: c, n }
}

/// `m_aᵀ vec(Ĉ)`: the sum of `ĉ_ij` over the pairs in `set`.
pub fn pair_sum(c: &CrossProducts, sets: &UniqueSets, set: PairSet) -> f64 {
    let c = &c.c_hat;
    match set {
        PairSet::Diag(l) => {
            let s = &sets.sets[l];
            let mut total = 0.0;
            for &i in s {
                for &j in s {
                    if i != j {
                        total += c[(i, j)];
                    }
                }
            }
            total
        }
        PairSet::Offdiag(l, k) => {
            let mut total = 0.0;
            for &i in &sets.sets[l] {
                for &j in &sets.sets[k] {
                    total += c[(i, j)];
                }
            }
            total
        }
    }
}

/// Denominator convention for the centering term of `V̂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VDenominator {
    /// First term over `n`, subtracted `vec(Ĉ)vec(Ĉ)ᵀ` with `Ĉ` over `n−1`.
    #[default]
    Mixed,
    /// Both terms over `n`.
    UniformN,
}

impl std::str::FromStr for VDenominator {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "mixed" => Ok(VDenominator::Mixed),
            "uniform-n" => Ok(VDenominator::UniformN),
            _ => Err(crate::Error::InvalidArgument(format!(
                "unknown v-denominator {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuadFormKey {
    pub a: PairSet,
    pub b: PairSet,
}

impl QuadFormKey {
    pub fn new(a: PairSet, b: PairSet) -> Self {
        QuadFormKey { a, b }
    }
}

/// Cached per-sample group sums for one data set.
///
/// `t[(i, l)] = Σ_{j∈S_l} z_ij`, `sq[(i, l)] = Σ_{j∈S_l} z_ij²`.
pub struct MomentEngine<'a> {
    sets: &'a UniqueSets,
    c: &'a CrossProducts,
    n: usize,
    t: DMatrix<f64>,
    sq: DMatrix<f64>,
    denom: VDenominator,
}

impl<'a> MomentEngine<'a> {
    pub fn new(
        z: &SampleMatrix,
        c: &'a CrossProducts,
        sets: &'a UniqueSets,
        denom: VDenominator,
    ) -> Self {
        let n = z.n();
        let p = sets.p();
        let v = z.values();
        let mut t = DMatrix::zeros(n, p);
        let mut sq = DMatrix::zeros(n, p);
        for (l, s) in sets.sets.iter().enumerate() {
            for &j in s {
                let col = v.column(j);
                for i in 0..n {
                    let x = col[i];
                    t[(i, l)] += x;
                    sq[(i, l)] += x * x;
                }
            }
        }
        MomentEngine {
            sets,
            c,
            n,
            t,
            sq,
            denom,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sets(&self) -> &UniqueSets {
        self.sets
    }

    pub fn cross_products(&self) -> &CrossProducts {
        self.c
    }

    #[inline]
    fn g(&self, i: usize, set: PairSet) -> f64 {
        match set {
            PairSet::Diag(l) => {
                let t = self.t[(i, l)];
                t * t - self.sq[(i, l)]
            }
            PairSet::Offdiag(l, k) => self.t[(i, l)] * self.t[(i, k)],
        }
    }

    /// `m_aᵀ vec(Ĉ)` under the configured denominator convention.
    pub fn center(&self, set: PairSet) -> f64 {
        let g = pair_sum(self.c, self.sets, set);
        match self.denom {
            VDenominator::Mixed => g,
            VDenominator::UniformN => g * (self.n - 1) as f64 / self.n as f64,
        }
    }

    /// `m_aᵀ V̂ m_b`.
    pub fn quad_form(&self, key: QuadFormKey) -> f64 {
        let ga = self.center(key.a);
        let gb = if key.b == key.a {
            ga
        } else {
            self.center(key.b)
        };
        self.quad_form_centered(key, ga, gb)
    }

    /// Same as [`quad_form`](Self::quad_form) with the `G` terms supplied.
    pub fn quad_form_centered(&self, key: QuadFormKey, ga: f64, gb: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            acc += self.g(i, key.a) * self.g(i, key.b);
        }
        acc / self.n as f64 - ga * gb
    }

    pub fn quad_form_batch(&self, keys: &[QuadFormKey]) -> Vec<f64> {
        keys.par_iter().map(|&k| self.quad_form(k)).collect()
    }
}

/// One-off quadratic form; builds the group-sum cache internally.
pub fn quad_form(
    z: &SampleMatrix,
    c: &CrossProducts,
    sets: &UniqueSets,
    key: QuadFormKey,
    denom: VDenominator,
) -> f64 {
    MomentEngine::new(z, c, sets, denom).quad_form(key)
}

pub fn quad_form_batch(
    z: &SampleMatrix,
    c: &CrossProducts,
    sets: &UniqueSets,
    keys: &[QuadFormKey],
    denom: VDenominator,
) -> Vec<f64> {
    MomentEngine::new(z, c, sets, denom).quad_form_batch(keys)
}
