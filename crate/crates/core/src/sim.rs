//! Simulation harness: ground-truth generation, data generation, and
//! replicated studies comparing the direct estimator with the aggregation
//! baselines.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::aggregate::{aggregate, baseline_correlation, fisher_test, median, Method};
use crate::data::{BindingMap, SampleMatrix, UniqueSets};
use crate::error::{Error, Result};
use crate::estimator::estimate;
use crate::inference::infer_all;
use crate::linalg::{frobenius, frobenius_sq, min_eigenvalue, to_correlation};
use crate::moments::{MomentEngine, VDenominator};
use crate::shrinkage::{
    cross_validate_kappa, lambda_min_dir, rho_of_kappa, risk_components, shrink, shrink_with,
    Branch, CvConfig, DEFAULT_CV_SPLITS, DEFAULT_KAPPA_GRID, DEFAULT_SPLIT_RATIO,
};

const MAX_TRUTH_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthConfig {
    pub p: usize,
    pub q: usize,
    pub unique_per_higher: usize,
    /// Probability that an off-diagonal covariance is nonzero.
    pub density: f64,
    pub corr_lo: f64,
    pub corr_hi: f64,
    pub diag: f64,
    /// Noise variance of every lower-level variable.
    pub noise: f64,
    /// Each shared lower-level variable gets a uniform number of parents in
    /// `shared_min..=shared_max`.
    pub shared_min: usize,
    pub shared_max: usize,
}

impl Default for TruthConfig {
    fn default() -> Self {
        TruthConfig {
            p: 20,
            q: 150,
            unique_per_higher: 5,
            density: 0.7,
            corr_lo: 0.2,
            corr_hi: 0.5,
            diag: 1.5,
            noise: 0.3,
            shared_min: 2,
            shared_max: 3,
        }
    }
}

impl TruthConfig {
    /// The two simulation settings: `p = 20` (q = 150, diagonal 1.5) and
    /// `p = 50` (q = 300, diagonal 2.5).
    pub fn setting(p: usize) -> TruthConfig {
        match p {
            50 => TruthConfig {
                p: 50,
                q: 300,
                diag: 2.5,
                ..TruthConfig::default()
            },
            _ => TruthConfig {
                p,
                q: if p == 20 { 150 } else { 5 * p + p / 2 + 2 },
                ..TruthConfig::default()
            },
        }
    }
}

/// True model parameters for a simulation study.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub sigma: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub map: BindingMap,
    pub gamma_diag: Vec<f64>,
    /// `factor · factorᵀ = sigma`.
    factor: DMatrix<f64>,
}

impl GroundTruth {
    /// Builds a truth from explicit parameters. `sigma` must be symmetric
    /// positive semidefinite.
    pub fn new(sigma: DMatrix<f64>, map: BindingMap, gamma_diag: Vec<f64>) -> Result<GroundTruth> {
        if sigma.nrows() != map.p() || sigma.ncols() != map.p() || gamma_diag.len() != map.q() {
            return Err(Error::InvalidArgument(
                "truth dimensions do not match the binding map".into(),
            ));
        }
        if gamma_diag.iter().any(|&g| !(g >= 0.0)) {
            return Err(Error::InvalidArgument(
                "noise variances must be >= 0".into(),
            ));
        }
        let factor = match Cholesky::new(sigma.clone()) {
            Some(ch) => ch.l(),
            None => {
                let eig = SymmetricEigen::new(sigma.clone());
                if eig.eigenvalues.min() < -1e-10 * eig.eigenvalues.amax().max(1.0) {
                    return Err(Error::NotPositiveDefinite(1));
                }
                let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
                &eig.eigenvectors * DMatrix::from_diagonal(&root)
            }
        };
        let (r, _) = to_correlation(&sigma);
        Ok(GroundTruth {
            sigma,
            r,
            map,
            gamma_diag,
            factor,
        })
    }

    pub fn p(&self) -> usize {
        self.map.p()
    }

    pub fn q(&self) -> usize {
        self.map.q()
    }

    /// Largest off-diagonal `|r_lk|`.
    pub fn max_abs_correlation(&self) -> f64 {
        let p = self.p();
        let mut m: f64 = 0.0;
        for l in 0..p {
            for k in (l + 1)..p {
                m = m.max(self.r[(l, k)].abs());
            }
        }
        m
    }

    /// Population `C = AΣAᵀ + Γ`.
    pub fn population_cov(&self) -> DMatrix<f64> {
        let a = self.map.to_matrix();
        let mut c = &a * &self.sigma * a.transpose();
        for (j, g) in self.gamma_diag.iter().enumerate() {
            c[(j, j)] += g;
        }
        c
    }
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Draws a sparse covariance with constant diagonal (redrawn until
/// positive definite) and a binding map with `unique_per_higher` unique
/// members per higher-level variable, the remaining lower-level variables
/// shared among random parents.
pub fn generate_truth(cfg: &TruthConfig, seed: u64) -> Result<GroundTruth> {
    let TruthConfig {
        p,
        q,
        unique_per_higher: u,
        density,
        corr_lo,
        corr_hi,
        diag,
        noise,
        shared_min,
        shared_max,
    } = *cfg;
    if p == 0 || u == 0 {
        return Err(Error::InvalidArgument(
            "p and unique_per_higher must be positive".into(),
        ));
    }
    if q < u * p {
        return Err(Error::InvalidArgument(format!(
            "q = {q} < unique_per_higher * p = {}",
            u * p
        )));
    }
    if !(0.0..=1.0).contains(&density) || corr_lo > corr_hi || !(diag > 0.0) || !(noise >= 0.0) {
        return Err(Error::InvalidArgument("invalid covariance settings".into()));
    }
    let n_shared = q - u * p;
    if n_shared > 0 && (shared_min < 2 || shared_min > shared_max || shared_max > p) {
        return Err(Error::InvalidArgument(format!(
            "shared parents {shared_min}..={shared_max} impossible with p = {p}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sigma = None;
    for _ in 0..MAX_TRUTH_ATTEMPTS {
        let mut s = DMatrix::from_diagonal_element(p, p, diag);
        for l in 0..p {
            for k in (l + 1)..p {
                if rng.random::<f64>() < density {
                    let v = rng.random_range(corr_lo..=corr_hi);
                    s[(l, k)] = v;
                    s[(k, l)] = v;
                }
            }
        }
        if min_eigenvalue(&s) > 0.0 {
            sigma = Some(s);
            break;
        }
    }
    let sigma = sigma.ok_or(Error::NotPositiveDefinite(MAX_TRUTH_ATTEMPTS))?;

    let mut rows: Vec<Vec<usize>> = (0..p)
        .flat_map(|l| std::iter::repeat_n(vec![l], u))
        .collect();
    for _ in 0..n_shared {
        let count = rng.random_range(shared_min..=shared_max);
        rows.push(sample(&mut rng, p, count).into_vec());
    }
    let map = BindingMap::new(names("z", q), names("X", p), rows)?;
    GroundTruth::new(sigma, map, vec![noise; q])
}

/// Draws `n` samples of `z = A x + ε` with `x ~ N(0, Σ)`, `ε ~ N(0, Γ)`.
pub fn generate_data_with<R: Rng + ?Sized>(
    truth: &GroundTruth,
    n: usize,
    rng: &mut R,
) -> Result<SampleMatrix> {
    let (p, q) = (truth.p(), truth.q());
    let noise_sd: Vec<f64> = truth.gamma_diag.iter().map(|g| g.sqrt()).collect();
    let mut values = DMatrix::zeros(n, q);
    let mut e = DVector::zeros(p);
    for i in 0..n {
        for v in e.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let x = &truth.factor * &e;
        for j in 0..q {
            let signal: f64 = truth.map.row(j).iter().map(|&l| x[l]).sum();
            let eps: f64 = rng.sample(StandardNormal);
            values[(i, j)] = signal + noise_sd[j] * eps;
        }
    }
    SampleMatrix::new(values, false)
}

pub fn generate_data(truth: &GroundTruth, n: usize, seed: u64) -> Result<SampleMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_data_with(truth, n, &mut rng)
}

/// Per-replication generator: stream `rep + 1` of the master seed (stream
/// 0 draws the truth).
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64 + 1);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum StudyMethod {
    Direct,
    DirectShrink,
    Baseline(Method),
}

impl StudyMethod {
    pub fn all() -> Vec<StudyMethod> {
        let mut v = vec![StudyMethod::Direct, StudyMethod::DirectShrink];
        v.extend(Method::ALL.into_iter().map(StudyMethod::Baseline));
        v
    }

    pub fn name(&self) -> &'static str {
        match self {
            StudyMethod::Direct => "DIR",
            StudyMethod::DirectShrink => "DIR_sh",
            StudyMethod::Baseline(m) => m.name(),
        }
    }
}

impl fmt::Display for StudyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StudyMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "dir" | "direct" => Ok(StudyMethod::Direct),
            "dir_sh" | "direct_sh" => Ok(StudyMethod::DirectShrink),
            _ => Ok(StudyMethod::Baseline(s.parse()?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum KappaMode {
    Fixed(f64),
    CrossValidated,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyConfig {
    pub truth: TruthConfig,
    pub n: usize,
    pub reps: usize,
    pub xi: f64,
    pub alpha: f64,
    pub methods: Vec<StudyMethod>,
    pub seed: u64,
    pub kappa: KappaMode,
    pub cv_grid: Vec<f64>,
    pub cv_splits: usize,
    pub split_ratio: f64,
    /// Run the pairwise tests (type-I error and power).
    pub tests: bool,
    pub denom: VDenominator,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            truth: TruthConfig::default(),
            n: 200,
            reps: 100,
            xi: 0.1,
            alpha: 0.05,
            methods: StudyMethod::all(),
            seed: 1,
            kappa: KappaMode::CrossValidated,
            cv_grid: DEFAULT_KAPPA_GRID.to_vec(),
            cv_splits: DEFAULT_CV_SPLITS,
            split_ratio: DEFAULT_SPLIT_RATIO,
            tests: true,
            denom: VDenominator::Mixed,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str, line: usize) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad value {v:?} for {key}"),
    })
}

fn parse_list(key: &str, v: &str, line: usize) -> Result<Vec<f64>> {
    v.split(',')
        .map(|x| parse_num(key, x.trim(), line))
        .collect()
}

impl StudyConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unlisted keys keep
    /// their defaults. Setting `p` first selects the matching preset for
    /// `q` and `diag`.
    pub fn parse(text: &str) -> Result<StudyConfig> {
        let mut cfg = StudyConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .or_else(|| content.split_once(':'))
                .ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("expected key = value, got {content:?}"),
                })?;
            let (key, v) = (key.trim(), value.trim());
            match key {
                "p" => {
                    let p: usize = parse_num(key, v, line)?;
                    cfg.truth = TruthConfig {
                        ..TruthConfig::setting(p)
                    };
                }
                "q" => cfg.truth.q = parse_num(key, v, line)?,
                "n" => cfg.n = parse_num(key, v, line)?,
                "reps" => cfg.reps = parse_num(key, v, line)?,
                "xi" => cfg.xi = parse_num(key, v, line)?,
                "alpha" => cfg.alpha = parse_num(key, v, line)?,
                "density" => cfg.truth.density = parse_num(key, v, line)?,
                "corr_lo" => cfg.truth.corr_lo = parse_num(key, v, line)?,
                "corr_hi" => cfg.truth.corr_hi = parse_num(key, v, line)?,
                "diag" => cfg.truth.diag = parse_num(key, v, line)?,
                "noise" => cfg.truth.noise = parse_num(key, v, line)?,
                "unique" => cfg.truth.unique_per_higher = parse_num(key, v, line)?,
                "shared_min" => cfg.truth.shared_min = parse_num(key, v, line)?,
                "shared_max" => cfg.truth.shared_max = parse_num(key, v, line)?,
                "seed" => cfg.seed = parse_num(key, v, line)?,
                "methods" => {
                    cfg.methods = if v.eq_ignore_ascii_case("all") {
                        StudyMethod::all()
                    } else {
                        v.split(',')
                            .map(|m| m.trim().parse())
                            .collect::<Result<_>>()
                            .map_err(|e| Error::Parse {
                                line,
                                msg: e.to_string(),
                            })?
                    }
                }
                "kappa" => {
                    cfg.kappa = if v.eq_ignore_ascii_case("cv") {
                        KappaMode::CrossValidated
                    } else {
                        KappaMode::Fixed(parse_num(key, v, line)?)
                    }
                }
                "cv_grid" => cfg.cv_grid = parse_list(key, v, line)?,
                "cv_splits" => cfg.cv_splits = parse_num(key, v, line)?,
                "split_ratio" => cfg.split_ratio = parse_num(key, v, line)?,
                "tests" => cfg.tests = parse_num(key, v, line)?,
                "v_denominator" => {
                    cfg.denom = v.parse().map_err(|e: Error| Error::Parse {
                        line,
                        msg: e.to_string(),
                    })?
                }
                _ => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::TooFewSamples {
                need: 4,
                got: self.n,
            });
        }
        if !(self.xi >= 0.0 && self.xi < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "xi must lie in [0, 1), got {}",
                self.xi
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods selected".into()));
        }
        if let KappaMode::Fixed(k) = self.kappa {
            if !(k > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "kappa must be > 0, got {k}"
                )));
            }
        }
        Ok(())
    }

    fn cv_config(&self, rep: usize) -> CvConfig {
        CvConfig {
            grid: self.cv_grid.clone(),
            splits: self.cv_splits,
            split_ratio: self.split_ratio,
            seed: self.seed ^ (rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            denom: self.denom,
        }
    }
}

/// Outcome of one method in one replication.
#[derive(Debug, Clone, Serialize)]
pub struct MethodOutcome {
    pub method: StudyMethod,
    pub fne: Option<f64>,
    /// Rejection indicator per pair `l < k` (lexicographic); `None` where no
    /// test was run.
    pub rejections: Vec<Option<bool>>,
    pub error: Option<String>,
}

/// Shrinkage diagnostics for one replication.
#[derive(Debug, Clone, Serialize)]
pub struct ShrinkDiagnostics {
    pub kappa: f64,
    pub rho: f64,
    pub branch: Branch,
    pub lambda_min_dir: f64,
    /// `λ_min(R̂_sh(κ))` for each value of the CV grid.
    pub lambda_min_sh_grid: Vec<f64>,
    pub sigma_sq_err_dir: f64,
    pub sigma_sq_err_sh: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RepRecord {
    pub rep: usize,
    pub outcomes: Vec<MethodOutcome>,
    pub shrink: Option<ShrinkDiagnostics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: StudyMethod,
    pub fne_median: f64,
    pub fne_mean: f64,
    pub fne_count: usize,
    pub failures: usize,
    pub type1: Option<f64>,
    pub power: Option<f64>,
    pub null_tests: usize,
    pub alt_tests: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub config: StudyConfig,
    pub max_abs_correlation: f64,
    pub pairs: Vec<(usize, usize)>,
    /// `|r_lk| ≤ ξ` under the true correlation, per pair.
    pub null_pair: Vec<bool>,
    pub summaries: Vec<MethodSummary>,
    pub reps: Vec<RepRecord>,
}

impl SimReport {
    pub fn summary(&self, method: StudyMethod) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }
}

pub fn fne(r_hat: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    frobenius(r_hat, r)
}

fn pair_list(p: usize) -> Vec<(usize, usize)> {
    (0..p)
        .flat_map(|l| ((l + 1)..p).map(move |k| (l, k)))
        .collect()
}

fn failed(method: StudyMethod, npairs: usize, e: impl ToString) -> MethodOutcome {
    MethodOutcome {
        method,
        fne: None,
        rejections: vec![None; npairs],
        error: Some(e.to_string()),
    }
}

/// Runs every configured method on one fresh data set.
pub fn run_replication(cfg: &StudyConfig, truth: &GroundTruth, rep: usize) -> Result<RepRecord> {
    let mut rng = replication_rng(cfg.seed, rep);
    let z = generate_data_with(truth, cfg.n, &mut rng)?;
    let sets = UniqueSets::derive(&truth.map);
    let pairs = pair_list(truth.p());
    let (c, cov) = estimate(&z, &sets)?;
    let engine = MomentEngine::new(&z, &c, &sets, cfg.denom);

    let mut outcomes = Vec::with_capacity(cfg.methods.len());
    let mut shrink_diag = None;
    for &method in &cfg.methods {
        let outcome = match method {
            StudyMethod::Direct => {
                let fne_val = cov.all_valid().then(|| fne(&cov.r_hat, &truth.r));
                let mut rejections = vec![None; pairs.len()];
                if cfg.tests {
                    let table = infer_all(&engine, &cov, cfg.xi)?;
                    let index = |l: usize, k: usize| l * truth.p() - l * (l + 1) / 2 + (k - l - 1);
                    for rec in &table.pairs {
                        rejections[index(rec.l, rec.k)] = Some(rec.p_value < cfg.alpha);
                    }
                }
                MethodOutcome {
                    method,
                    fne: fne_val,
                    rejections,
                    error: (!cov.all_valid())
                        .then(|| format!("non-positive variance for {:?}", cov.invalid())),
                }
            }
            StudyMethod::DirectShrink => {
                match direct_shrink(cfg, truth, &z, &sets, &engine, &cov, rep) {
                    Ok((f, diag)) => {
                        shrink_diag = Some(diag);
                        MethodOutcome {
                            method,
                            fne: Some(f),
                            rejections: vec![None; pairs.len()],
                            error: None,
                        }
                    }
                    Err(e) => failed(method, pairs.len(), e),
                }
            }
            StudyMethod::Baseline(m) => baseline_outcome(cfg, truth, &z, &sets, m, &pairs),
        };
        outcomes.push(outcome);
    }
    Ok(RepRecord {
        rep,
        outcomes,
        shrink: shrink_diag,
    })
}

fn direct_shrink(
    cfg: &StudyConfig,
    truth: &GroundTruth,
    z: &SampleMatrix,
    sets: &UniqueSets,
    engine: &MomentEngine<'_>,
    cov: &crate::estimator::CovEstimate,
    rep: usize,
) -> Result<(f64, ShrinkDiagnostics)> {
    let lambda = lambda_min_dir(cov)?;
    let kappa = match cfg.kappa {
        KappaMode::Fixed(k) => k,
        KappaMode::CrossValidated => {
            cross_validate_kappa(z, sets, &cfg.cv_config(rep))?.chosen_kappa
        }
    };
    let rc = risk_components(engine, cov)?;
    let res = shrink_with(cov, &rc, lambda, kappa)?;
    let lambda_min_sh_grid = cfg
        .cv_grid
        .iter()
        .map(|&k| {
            let choice = rho_of_kappa(&rc, lambda, k)?;
            Ok(min_eigenvalue(&shrink(cov, choice.rho)?.1))
        })
        .collect::<Result<Vec<_>>>()?;
    let diag = ShrinkDiagnostics {
        kappa,
        rho: res.rho,
        branch: res.branch,
        lambda_min_dir: lambda,
        lambda_min_sh_grid,
        sigma_sq_err_dir: frobenius_sq(&cov.sigma_hat, &truth.sigma),
        sigma_sq_err_sh: frobenius_sq(&res.sigma_sh, &truth.sigma),
    };
    Ok((fne(&res.r_sh, &truth.r), diag))
}

fn baseline_outcome(
    cfg: &StudyConfig,
    truth: &GroundTruth,
    z: &SampleMatrix,
    sets: &UniqueSets,
    m: Method,
    pairs: &[(usize, usize)],
) -> MethodOutcome {
    let method = StudyMethod::Baseline(m);
    let scores = aggregate(z, &truth.map, sets, m);
    let (r, undefined) = baseline_correlation(&scores.scores);
    let p = truth.p();
    let mut position = vec![None; p];
    for (i, &l) in scores.columns.iter().enumerate() {
        if !undefined.contains(&i) {
            position[l] = Some(i);
        }
    }
    let complete = position.iter().all(Option::is_some);
    let fne_val = complete.then(|| {
        let full = DMatrix::from_fn(p, p, |a, b| r[(position[a].unwrap(), position[b].unwrap())]);
        fne(&full, &truth.r)
    });
    let rejections = pairs
        .iter()
        .map(|&(l, k)| {
            if !cfg.tests {
                return None;
            }
            let (a, b) = (position[l]?, position[k]?);
            fisher_test(r[(a, b)], cfg.n, cfg.xi)
                .ok()
                .map(|f| f.p_value < cfg.alpha)
        })
        .collect();
    MethodOutcome {
        method,
        fne: fne_val,
        rejections,
        error: (!complete).then(|| {
            format!(
                "{} variable(s) without a usable score",
                p - scores.columns.len() + undefined.len()
            )
        }),
    }
}

/// Draws the truth once, then runs `reps` independent replications.
pub fn run_study(cfg: &StudyConfig) -> Result<SimReport> {
    cfg.validate()?;
    let truth = generate_truth(&cfg.truth, cfg.seed)?;
    run_study_with_truth(cfg, &truth)
}

pub fn run_study_with_truth(cfg: &StudyConfig, truth: &GroundTruth) -> Result<SimReport> {
    cfg.validate()?;
    let pairs = pair_list(truth.p());
    let null_pair: Vec<bool> = pairs
        .iter()
        .map(|&(l, k)| truth.r[(l, k)].abs() <= cfg.xi)
        .collect();
    let reps: Vec<RepRecord> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_replication(cfg, truth, rep))
        .collect::<Result<_>>()?;

    let summaries = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(mi, &method)| {
            let mut fnes: Vec<f64> = reps.iter().filter_map(|r| r.outcomes[mi].fne).collect();
            let failures = reps.len() - fnes.len();
            let fne_mean = fnes.iter().sum::<f64>() / fnes.len() as f64;
            let fne_median = median(&mut fnes);
            let (mut null_rej, mut null_tests, mut alt_rej, mut alt_tests) =
                (0usize, 0usize, 0usize, 0usize);
            for r in &reps {
                for (j, rej) in r.outcomes[mi].rejections.iter().enumerate() {
                    if let Some(rej) = rej {
                        if null_pair[j] {
                            null_tests += 1;
                            null_rej += usize::from(*rej);
                        } else {
                            alt_tests += 1;
                            alt_rej += usize::from(*rej);
                        }
                    }
                }
            }
            MethodSummary {
                method,
                fne_median,
                fne_mean,
                fne_count: fnes.len(),
                failures,
                type1: (null_tests > 0).then(|| null_rej as f64 / null_tests as f64),
                power: (alt_tests > 0).then(|| alt_rej as f64 / alt_tests as f64),
                null_tests,
                alt_tests,
            }
        })
        .collect();

    Ok(SimReport {
        config: cfg.clone(),
        max_abs_correlation: truth.max_abs_correlation(),
        pairs,
        null_pair,
        summaries,
        reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_zero_gives_identity_correlation() {
        let cfg = TruthConfig {
            density: 0.0,
            p: 4,
            q: 24,
            ..TruthConfig::default()
        };
        let t = generate_truth(&cfg, 3).unwrap();
        assert_eq!(t.r, DMatrix::identity(4, 4));
        assert_eq!(t.sigma, DMatrix::from_diagonal_element(4, 4, 1.5));
    }

    #[test]
    fn truth_structure() {
        let t = generate_truth(&TruthConfig::setting(20), 11).unwrap();
        assert_eq!((t.p(), t.q()), (20, 150));
        let sets = UniqueSets::derive(&t.map);
        assert!(sets.sets.iter().all(|s| s.len() == 5));
        assert_eq!(sets.shared.len(), 50);
        for &j in &sets.shared {
            assert!((2..=3).contains(&t.map.row(j).len()));
        }
        assert!(min_eigenvalue(&t.sigma) > 0.0);
        for l in 0..20 {
            assert_eq!(t.r[(l, l)], 1.0);
        }
        assert!(t.max_abs_correlation() <= 0.5 / 1.5 + 1e-15);
    }

    #[test]
    fn zero_model_zero_data() {
        let map = BindingMap::new(
            names("z", 4),
            names("X", 2),
            vec![vec![0], vec![0], vec![1], vec![1]],
        )
        .unwrap();
        let t = GroundTruth::new(DMatrix::zeros(2, 2), map, vec![0.0; 4]).unwrap();
        let z = generate_data(&t, 5, 1).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn data_is_deterministic() {
        let t = generate_truth(&TruthConfig::setting(5), 2).unwrap();
        let a = generate_data(&t, 30, 9).unwrap();
        let b = generate_data(&t, 30, 9).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn fne_of_truth_is_zero() {
        let t = generate_truth(&TruthConfig::setting(5), 2).unwrap();
        assert_eq!(fne(&t.r, &t.r), 0.0);
    }

    #[test]
    fn config_parsing() {
        let cfg = StudyConfig::parse(
            "# small-n study\np = 50\nn = 30\nreps = 10\nmethods = DIR, DIR_sh, MUV, TMP-all\nkappa = cv\nseed = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.truth.q, 300);
        assert_eq!(cfg.truth.diag, 2.5);
        assert_eq!(cfg.methods.len(), 4);
        assert_eq!(cfg.methods[3], StudyMethod::Baseline(Method::TmpAll));
        assert!(matches!(
            StudyConfig::parse("bogus = 1").unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
        assert!(StudyConfig::parse("alpha = 2").is_err());
    }

    #[test]
    fn small_study_is_reproducible() {
        let cfg = StudyConfig {
            truth: TruthConfig::setting(5),
            n: 60,
            reps: 4,
            cv_splits: 3,
            ..StudyConfig::default()
        };
        let a = run_study(&cfg).unwrap();
        let b = run_study(&cfg).unwrap();
        for (x, y) in a.summaries.iter().zip(&b.summaries) {
            assert_eq!(x.fne_median.to_bits(), y.fne_median.to_bits());
            assert_eq!(x.type1, y.type1);
        }
        for s in &a.summaries {
            if let Some(t) = s.type1 {
                assert!((0.0..=1.0).contains(&t));
            }
            assert!(s.fne_median >= 0.0);
        }
    }
}
