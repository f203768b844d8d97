//! Aggregation baselines: compress each higher-level variable's members
//! into one score per sample, then correlate the scores.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::data::{BindingMap, SampleMatrix, UniqueSets};
use crate::error::{Error, Result};
use crate::inference::normal_tail;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Method {
    Suv,
    Muv,
    Sav,
    Mav,
    TmpAll,
    TmpUni,
    SvdAll,
    SvdUni,
    Sti,
    Mt50,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Suv,
        Method::Muv,
        Method::Sav,
        Method::Mav,
        Method::TmpAll,
        Method::TmpUni,
        Method::SvdAll,
        Method::SvdUni,
        Method::Sti,
        Method::Mt50,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Suv => "SUV",
            Method::Muv => "MUV",
            Method::Sav => "SAV",
            Method::Mav => "MAV",
            Method::TmpAll => "TMP-all",
            Method::TmpUni => "TMP-uni",
            Method::SvdAll => "SVD-all",
            Method::SvdUni => "SVD-uni",
            Method::Sti => "STI",
            Method::Mt50 => "MT50",
        }
    }

    /// Whether the method looks at unique members only.
    pub fn unique_only(&self) -> bool {
        matches!(
            self,
            Method::Suv | Method::Muv | Method::TmpUni | Method::SvdUni | Method::Sti
        )
    }

    fn min_members(&self) -> usize {
        if *self == Method::Sti {
            3
        } else {
            1
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Method> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.name().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown aggregation method {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct AggregateScores {
    pub method: Method,
    /// `n x columns.len()` scores.
    pub scores: DMatrix<f64>,
    /// Higher-level indices of the score columns.
    pub columns: Vec<usize>,
    /// Higher-level variables without a score, with the reason.
    pub skipped: Vec<(usize, String)>,
}

pub fn aggregate(
    z: &SampleMatrix,
    map: &BindingMap,
    sets: &UniqueSets,
    method: Method,
) -> AggregateScores {
    let n = z.n();
    let mut columns = Vec::new();
    let mut skipped = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    for l in 0..map.p() {
        let members = if method.unique_only() {
            sets.sets[l].clone()
        } else {
            map.members(l)
        };
        if members.len() < method.min_members() {
            skipped.push((
                l,
                format!(
                    "{} {} member(s), {} needs {}",
                    members.len(),
                    if method.unique_only() { "unique" } else { "" },
                    method,
                    method.min_members()
                )
                .replace("  ", " "),
            ));
            continue;
        }
        let col = score_column(z, &members, method);
        columns.push(l);
        data.extend(col.iter());
    }
    AggregateScores {
        method,
        scores: DMatrix::from_vec(n, columns.len(), data),
        columns,
        skipped,
    }
}

fn score_column(z: &SampleMatrix, members: &[usize], method: Method) -> DVector<f64> {
    let v = z.values();
    let sub = v.select_columns(members);
    match method {
        Method::Suv | Method::Sav => row_sums(&sub),
        Method::Muv | Method::Mav => row_sums(&sub) / members.len() as f64,
        Method::TmpAll | Method::TmpUni => {
            let mp = median_polish(&sub.transpose(), MEDIAN_POLISH_SWEEPS, MEDIAN_POLISH_TOL);
            mp.col_effects.add_scalar(mp.overall)
        }
        Method::SvdAll | Method::SvdUni => first_principal_scores(&sub),
        Method::Sti => {
            let top = most_intense(z.raw_means(), members, 3);
            row_sums(&v.select_columns(&top))
        }
        Method::Mt50 => {
            let keep = members.len().div_ceil(2);
            let top = most_intense(z.raw_means(), members, keep);
            row_sums(&v.select_columns(&top)) / keep as f64
        }
    }
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.sum()))
}

/// The `count` members with the largest raw column means, ties to the
/// lower column index.
fn most_intense(raw_means: &[f64], members: &[usize], count: usize) -> Vec<usize> {
    let mut ranked = members.to_vec();
    ranked.sort_by(|&a, &b| raw_means[b].total_cmp(&raw_means[a]).then(a.cmp(&b)));
    ranked.truncate(count);
    ranked
}

/// Sample projections onto the leading principal direction of the
/// column-centered `n x m` matrix. The loading vector is signed to have a
/// nonnegative sum; a zero sum makes the first nonzero loading positive.
pub fn first_principal_scores(sub: &DMatrix<f64>) -> DVector<f64> {
    let mut x = sub.clone();
    for mut col in x.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let gram = x.tr_mul(&x);
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.imax();
    let mut loading: DVector<f64> = eig.eigenvectors.column(top).into_owned();
    let sum = loading.sum();
    let flip = if sum.abs() > 1e-12 {
        sum < 0.0
    } else {
        loading
            .iter()
            .find(|v| v.abs() > 1e-12)
            .is_some_and(|&v| v < 0.0)
    };
    if flip {
        loading.neg_mut();
    }
    x * loading
}

pub const MEDIAN_POLISH_SWEEPS: usize = 10;
pub const MEDIAN_POLISH_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct MedianPolish {
    pub overall: f64,
    pub row_effects: DVector<f64>,
    pub col_effects: DVector<f64>,
    pub residuals: DMatrix<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

pub fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Tukey's two-way median polish, row sweep then column sweep, until the
/// largest adjustment in a sweep is below `tol` or `max_sweeps` is reached.
pub fn median_polish(m: &DMatrix<f64>, max_sweeps: usize, tol: f64) -> MedianPolish {
    let (nr, nc) = m.shape();
    let mut z = m.clone();
    let mut overall = 0.0;
    let mut row = DVector::zeros(nr);
    let mut col = DVector::zeros(nc);
    let mut converged = false;
    let mut sweeps = 0;
    let mut buf = Vec::with_capacity(nr.max(nc));
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut change: f64 = 0.0;

        for i in 0..nr {
            buf.clear();
            buf.extend(z.row(i).iter());
            let d = median(&mut buf);
            z.row_mut(i).add_scalar_mut(-d);
            row[i] += d;
            change = change.max(d.abs());
        }
        buf.clear();
        buf.extend(col.iter());
        let d = median(&mut buf);
        col.add_scalar_mut(-d);
        overall += d;

        for j in 0..nc {
            buf.clear();
            buf.extend(z.column(j).iter());
            let d = median(&mut buf);
            z.column_mut(j).add_scalar_mut(-d);
            col[j] += d;
            change = change.max(d.abs());
        }
        buf.clear();
        buf.extend(row.iter());
        let d = median(&mut buf);
        row.add_scalar_mut(-d);
        overall += d;

        if change < tol {
            converged = true;
            break;
        }
    }
    MedianPolish {
        overall,
        row_effects: row,
        col_effects: col,
        residuals: z,
        sweeps,
        converged,
    }
}

/// Pearson correlation of the score columns. Zero-variance columns give
/// NaN rows/columns and are listed in the second return value.
pub fn baseline_correlation(scores: &DMatrix<f64>) -> (DMatrix<f64>, Vec<usize>) {
    let (n, p) = scores.shape();
    let mut centered = scores.clone();
    for mut c in centered.column_iter_mut() {
        let mean = c.sum() / n as f64;
        c.add_scalar_mut(-mean);
    }
    let cross = centered.tr_mul(&centered);
    let undefined: Vec<usize> = (0..p).filter(|&j| !(cross[(j, j)] > 0.0)).collect();
    let sd: Vec<f64> = (0..p).map(|j| cross[(j, j)].sqrt()).collect();
    let r = DMatrix::from_fn(p, p, |a, b| {
        if undefined.contains(&a) || undefined.contains(&b) {
            f64::NAN
        } else if a == b {
            1.0
        } else {
            let (lo, hi) = (a.min(b), a.max(b));
            cross[(lo, hi)] / (sd[lo] * sd[hi])
        }
    });
    (r, undefined)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FisherOutcome {
    pub p_value: f64,
    /// `|r̂| = 1`: p set to 0.
    pub boundary: bool,
}

/// Fisher-transform test of `|r| ≤ ξ`, calibrated at `|r| = ξ`.
pub fn fisher_test(r_hat: f64, n: usize, xi: f64) -> Result<FisherOutcome> {
    if n < 4 {
        return Err(Error::TooFewSamples { need: 4, got: n });
    }
    if !(0.0..1.0).contains(&xi) {
        return Err(Error::InvalidArgument(format!(
            "xi must lie in [0, 1), got {xi}"
        )));
    }
    if r_hat.is_nan() {
        return Err(Error::InvalidArgument("correlation is undefined".into()));
    }
    if r_hat.abs() >= 1.0 {
        return Ok(FisherOutcome {
            p_value: 0.0,
            boundary: true,
        });
    }
    let excess = (r_hat.abs().atanh() - xi.atanh()).max(0.0);
    let stat = ((n - 3) as f64).sqrt() * excess;
    Ok(FisherOutcome {
        p_value: (2.0 * normal_tail(stat)).min(1.0),
        boundary: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (SampleMatrix, BindingMap, UniqueSets) {
        let names = |p: &str, n: usize| (1..=n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        let map = BindingMap::new(
            names("v", 4),
            names("H", 2),
            vec![vec![0], vec![0], vec![1], vec![1]],
        )
        .unwrap();
        let sets = UniqueSets::derive(&map);
        let z = SampleMatrix::new(
            DMatrix::from_row_slice(
                3,
                4,
                &[1.0, 2.0, 3.0, 4.0, 2.0, 0.0, 1.0, 1.0, 0.0, 5.0, 2.0, -1.0],
            ),
            false,
        )
        .unwrap();
        (z, map, sets)
    }

    #[test]
    fn sum_and_mean() {
        let (z, map, sets) = toy();
        let suv = aggregate(&z, &map, &sets, Method::Suv);
        let muv = aggregate(&z, &map, &sets, Method::Muv);
        assert_eq!(suv.scores[(0, 0)], 3.0);
        assert_eq!(muv.scores[(0, 0)], 1.5);
        assert_eq!(suv.columns, vec![0, 1]);
    }

    #[test]
    fn median_polish_two_by_two() {
        let mp = median_polish(
            &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            10,
            1e-6,
        );
        assert_eq!(mp.overall, 2.5);
        assert_eq!(mp.col_effects, DVector::from_vec(vec![-0.5, 0.5]));
        assert_eq!(
            mp.col_effects.add_scalar(mp.overall),
            DVector::from_vec(vec![2.0, 3.0])
        );
        assert!(mp.converged);
    }

    #[test]
    fn median_polish_residual_medians_vanish() {
        let v: Vec<f64> = (0..35)
            .map(|i| ((i * 17 % 11) as f64).sin() * 3.0 + (i % 5) as f64)
            .collect();
        let mp = median_polish(&DMatrix::from_row_slice(5, 7, &v), 50, 1e-9);
        assert!(mp.converged);
        for r in mp.residuals.row_iter() {
            assert!(median(&mut r.iter().copied().collect::<Vec<_>>()).abs() <= 1e-6);
        }
        for c in mp.residuals.column_iter() {
            assert!(median(&mut c.iter().copied().collect::<Vec<_>>()).abs() <= 1e-6);
        }
    }

    #[test]
    fn sti_picks_three_most_intense() {
        let names = (1..=4).map(|i| format!("v{i}")).collect::<Vec<_>>();
        let map = BindingMap::new(names, vec!["H".into()], vec![vec![0]; 4]).unwrap();
        let sets = UniqueSets::derive(&map);
        // column means (5, 1, 3, 4)
        let z = SampleMatrix::new(
            DMatrix::from_row_slice(2, 4, &[4.0, 0.0, 2.0, 3.0, 6.0, 2.0, 4.0, 5.0]),
            true,
        )
        .unwrap();
        let s = aggregate(&z, &map, &sets, Method::Sti);
        let v = z.values();
        assert_eq!(s.scores[(0, 0)], v[(0, 0)] + v[(0, 3)] + v[(0, 2)]);
        let mt = aggregate(&z, &map, &sets, Method::Mt50);
        assert_eq!(mt.scores[(1, 0)], (v[(1, 0)] + v[(1, 3)]) / 2.0);
    }

    #[test]
    fn sti_skips_small_sets() {
        let (z, map, sets) = toy();
        let s = aggregate(&z, &map, &sets, Method::Sti);
        assert!(s.columns.is_empty());
        assert_eq!(s.skipped.len(), 2);
    }

    #[test]
    fn svd_sign_and_permutation() {
        let (z, map, sets) = toy();
        let a = aggregate(&z, &map, &sets, Method::SvdUni);
        let sub = z.values().select_columns(&[1, 0]);
        let b = first_principal_scores(&sub);
        for i in 0..3 {
            assert!((a.scores[(i, 0)] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_identities() {
        let scores = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, 0.5, 0.5, 3.0, 3.0]);
        let (r, u) = baseline_correlation(&scores);
        assert!(u.is_empty());
        assert!((r[(0, 1)] - 1.0).abs() < 1e-15);
        let flat = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 2.0, 1.0, 1.0]);
        let (r, u) = baseline_correlation(&flat);
        assert_eq!(u, vec![0]);
        assert!(r[(0, 1)].is_nan());
    }

    #[test]
    fn fisher_values() {
        assert_eq!(fisher_test(0.0, 10, 0.0).unwrap().p_value, 1.0);
        assert_eq!(fisher_test(0.3, 10, 0.3).unwrap().p_value, 1.0);
        let p = fisher_test(0.5, 103, 0.0).unwrap().p_value;
        // 2·P(Z > 10·atanh(0.5)), evaluated independently with mpmath
        assert!((p - 3.950_252_784_999_222e-8).abs() < 1e-18, "{p:e}");
        assert!(fisher_test(1.0, 10, 0.0).unwrap().boundary);
        assert!(fisher_test(0.2, 3, 0.0).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("tmp_uni".parse::<Method>().unwrap(), Method::TmpUni);
    }
}
