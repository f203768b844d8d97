//! Shrinkage of the direct estimate toward its diagonal.
//!
//! `Σ̂_sh = ρ diag(Σ̂) + (1 − ρ) Σ̂`. The weight is the larger of the
//! plug-in risk minimizer and the smallest weight that keeps `R̂_sh`
//! positive definite with margin `κ`. Because the diagonal is unchanged,
//! every off-diagonal correlation is multiplied by the same `1 − ρ`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{PairSet, SampleMatrix, UniqueSets};
use crate::error::{Error, Result};
use crate::estimator::{estimate, CovEstimate};
use crate::linalg::{frobenius_sq, min_eigenvalue, to_correlation, PSD_TOL};
use crate::moments::{MomentEngine, QuadFormKey, VDenominator};

pub const DEFAULT_KAPPA_GRID: [f64; 7] = [0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0];
pub const DEFAULT_CV_SPLITS: usize = 20;
pub const DEFAULT_SPLIT_RATIO: f64 = 0.5;

/// Upper bound applied to the risk branch when the plug-ins put it at or past 1.
const RHO_CEILING: f64 = 1.0 - 1e-12;

/// Plug-in estimates of the three risk terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskComponents {
    /// `E‖Σ − diag(Σ̂)‖²_F`
    pub alpha2: f64,
    /// `Σ_l E(σ̂_ll − σ_ll)²`
    pub beta2: f64,
    /// `E‖Σ̂ − Σ‖²_F`
    pub gamma2: f64,
}

pub fn risk_components(engine: &MomentEngine<'_>, cov: &CovEstimate) -> Result<RiskComponents> {
    let sets = engine.sets();
    sets.require_uvc()?;
    let n = engine.n() as f64;
    let p = sets.p();
    let sigma = &cov.sigma_hat;

    let self_form = |set: PairSet| {
        let card = set.cardinality(sets) as f64;
        engine.quad_form(QuadFormKey::new(set, set)) / (card * card)
    };
    let diag_terms: Vec<f64> = (0..p)
        .into_par_iter()
        .map(|l| self_form(PairSet::Diag(l)))
        .collect();
    let pairs: Vec<(usize, usize)> = (0..p)
        .flat_map(|l| ((l + 1)..p).map(move |k| (l, k)))
        .collect();
    let off_terms: Vec<f64> = pairs
        .par_iter()
        .map(|&(l, k)| self_form(PairSet::Offdiag(l, k)))
        .collect();

    let beta2 = diag_terms.iter().sum::<f64>() / n;
    // Ordered pairs l != k: each unordered pair counts twice.
    let gamma2 = (diag_terms.iter().sum::<f64>() + 2.0 * off_terms.iter().sum::<f64>()) / n;

    let frob = sigma.iter().map(|x| x * x).sum::<f64>();
    let diag_sq = (0..p).map(|l| sigma[(l, l)] * sigma[(l, l)]).sum::<f64>();
    // tr(Σ̂ diag(Σ̂)) = Σ_l σ̂_ll²
    let alpha2 = frob - 2.0 * diag_sq + diag_sq + beta2;
    Ok(RiskComponents {
        alpha2,
        beta2,
        gamma2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// The unconstrained risk minimizer.
    Risk,
    /// The positive-definiteness constraint.
    Eigenvalue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RhoChoice {
    pub rho: f64,
    pub branch: Branch,
    pub risk_rho: f64,
    pub eigen_rho: f64,
    /// The risk branch fell outside [0, 1) and was clamped.
    pub clamped: bool,
}

pub fn rho_of_kappa(rc: &RiskComponents, lambda_min: f64, kappa: f64) -> Result<RhoChoice> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "kappa must be > 0, got {kappa}"
        )));
    }
    let denom = rc.alpha2 + rc.gamma2 - 2.0 * rc.beta2;
    let raw = (rc.gamma2 - rc.beta2) / denom;
    let (risk_rho, clamped) = if !raw.is_finite() || raw < 0.0 {
        (0.0, true)
    } else if raw > RHO_CEILING {
        (RHO_CEILING, true)
    } else {
        (raw, false)
    };
    let eigen_rho = if lambda_min < -PSD_TOL {
        let a = (1.0 + kappa) * lambda_min.abs();
        a / (1.0 + a)
    } else {
        0.0
    };
    let (rho, branch) = if eigen_rho > risk_rho {
        (eigen_rho, Branch::Eigenvalue)
    } else {
        (risk_rho, Branch::Risk)
    };
    Ok(RhoChoice {
        rho,
        branch,
        risk_rho,
        eigen_rho,
        clamped,
    })
}

/// Convex combination of `Σ̂` with its diagonal and the implied correlation.
pub fn shrink(cov: &CovEstimate, rho: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!(
            "rho must lie in [0, 1), got {rho}"
        )));
    }
    if !cov.all_valid() {
        return Err(Error::NonPositiveDiagonal(cov.invalid()));
    }
    let sigma_sh = shrink_sigma(&cov.sigma_hat, rho);
    let (r_sh, _) = to_correlation(&sigma_sh);
    Ok((sigma_sh, r_sh))
}

fn shrink_sigma(sigma: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(sigma.nrows(), sigma.ncols(), |l, k| {
        if l == k {
            sigma[(l, l)]
        } else {
            (1.0 - rho) * sigma[(l, k)]
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ShrinkageResult {
    pub kappa: f64,
    pub rho: f64,
    pub branch: Branch,
    pub risk_clamped: bool,
    pub alpha2: f64,
    pub beta2: f64,
    pub gamma2: f64,
    pub lambda_min_dir: f64,
    pub lambda_min_sh: f64,
    #[serde(skip)]
    pub sigma_sh: DMatrix<f64>,
    #[serde(skip)]
    pub r_sh: DMatrix<f64>,
}

/// Smallest eigenvalue of `R̂_dir`, or an error if it is undefined.
pub fn lambda_min_dir(cov: &CovEstimate) -> Result<f64> {
    if !cov.all_valid() {
        return Err(Error::NonPositiveDiagonal(cov.invalid()));
    }
    Ok(min_eigenvalue(&cov.r_hat))
}

/// Shrinkage with precomputed risk terms and eigenvalue.
pub fn shrink_with(
    cov: &CovEstimate,
    rc: &RiskComponents,
    lambda_min: f64,
    kappa: f64,
) -> Result<ShrinkageResult> {
    let choice = rho_of_kappa(rc, lambda_min, kappa)?;
    let (sigma_sh, r_sh) = shrink(cov, choice.rho)?;
    Ok(ShrinkageResult {
        kappa,
        rho: choice.rho,
        branch: choice.branch,
        risk_clamped: choice.clamped,
        alpha2: rc.alpha2,
        beta2: rc.beta2,
        gamma2: rc.gamma2,
        lambda_min_dir: lambda_min,
        lambda_min_sh: min_eigenvalue(&r_sh),
        sigma_sh,
        r_sh,
    })
}

pub fn shrinkage_estimate(
    engine: &MomentEngine<'_>,
    cov: &CovEstimate,
    kappa: f64,
) -> Result<ShrinkageResult> {
    let lambda = lambda_min_dir(cov)?;
    let rc = risk_components(engine, cov)?;
    shrink_with(cov, &rc, lambda, kappa)
}

#[derive(Debug, Clone, Serialize)]
pub struct CvConfig {
    pub grid: Vec<f64>,
    pub splits: usize,
    /// Fraction of samples in the first (shrunken) part.
    pub split_ratio: f64,
    pub seed: u64,
    pub denom: VDenominator,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            grid: DEFAULT_KAPPA_GRID.to_vec(),
            splits: DEFAULT_CV_SPLITS,
            split_ratio: DEFAULT_SPLIT_RATIO,
            seed: 0,
            denom: VDenominator::Mixed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CvReport {
    pub grid: Vec<f64>,
    pub scores: Vec<f64>,
    pub splits: usize,
    pub n1: usize,
    pub n2: usize,
    pub chosen_kappa: f64,
    /// Random partitions redrawn because the first part had a
    /// non-positive variance estimate.
    pub redrawn: usize,
}

/// Index of the minimum score; ties go to the smaller `κ`.
pub fn choose_kappa(grid: &[f64], scores: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..grid.len() {
        let better =
            scores[i] < scores[best] || (scores[i] == scores[best] && grid[i] < grid[best]);
        if better {
            best = i;
        }
    }
    best
}

const MAX_REDRAWS: u64 = 50;

fn split_scores(
    z: &SampleMatrix,
    sets: &UniqueSets,
    cfg: &CvConfig,
    n1: usize,
    b: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = z.n();
    for attempt in 0..MAX_REDRAWS {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(((b as u64) << 16) | attempt);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let (first, second) = idx.split_at(n1);
        let mut first = first.to_vec();
        let mut second = second.to_vec();
        first.sort_unstable();
        second.sort_unstable();

        let z1 = z.select_rows(&first)?;
        let (c1, cov1) = estimate(&z1, sets)?;
        if !cov1.all_valid() {
            continue;
        }
        let z2 = z.select_rows(&second)?;
        let (_, cov2) = estimate(&z2, sets)?;
        let engine = MomentEngine::new(&z1, &c1, sets, cfg.denom);
        let rc = risk_components(&engine, &cov1)?;
        let lambda = min_eigenvalue(&cov1.r_hat);
        let scores = cfg
            .grid
            .iter()
            .map(|&kappa| {
                let choice = rho_of_kappa(&rc, lambda, kappa)?;
                Ok(frobenius_sq(
                    &shrink_sigma(&cov1.sigma_hat, choice.rho),
                    &cov2.sigma_hat,
                ))
            })
            .collect::<Result<Vec<f64>>>()?;
        return Ok((scores, attempt as usize));
    }
    Err(Error::NonPositiveDiagonal(Vec::new()))
}

/// Chooses `κ` by repeated random two-way splits.
pub fn cross_validate_kappa(
    z: &SampleMatrix,
    sets: &UniqueSets,
    cfg: &CvConfig,
) -> Result<CvReport> {
    if cfg.grid.is_empty() {
        return Err(Error::InvalidArgument("empty kappa grid".into()));
    }
    if let Some(bad) = cfg.grid.iter().find(|&&k| !(k > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "kappa must be > 0, got {bad}"
        )));
    }
    if cfg.splits == 0 {
        return Err(Error::InvalidArgument("need at least one split".into()));
    }
    if !(cfg.split_ratio > 0.0 && cfg.split_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must lie in (0, 1), got {}",
            cfg.split_ratio
        )));
    }
    let n = z.n();
    let n1 = (n as f64 * cfg.split_ratio).round() as usize;
    let n2 = n.saturating_sub(n1);
    if n1 < 2 || n2 < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: n1.min(n2),
        });
    }
    sets.require_uvc()?;

    let per_split: Vec<(Vec<f64>, usize)> = (0..cfg.splits)
        .into_par_iter()
        .map(|b| split_scores(z, sets, cfg, n1, b))
        .collect::<Result<_>>()?;

    let mut scores = vec![0.0; cfg.grid.len()];
    let mut redrawn = 0;
    for (s, r) in &per_split {
        for (acc, v) in scores.iter_mut().zip(s) {
            *acc += v;
        }
        redrawn += r;
    }
    for s in &mut scores {
        *s /= cfg.splits as f64;
    }
    let best = choose_kappa(&cfg.grid, &scores);
    Ok(CvReport {
        grid: cfg.grid.clone(),
        chosen_kappa: cfg.grid[best],
        scores,
        splits: cfg.splits,
        n1,
        n2,
        redrawn,
    })
}
