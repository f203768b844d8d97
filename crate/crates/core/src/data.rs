//! Binding map, unique-variable sets, and the lower-level sample matrix.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::table::Table;

/// Binary membership map from `q` lower-level variables to `p`
/// higher-level variables.
///
/// Equality compares memberships by name, so two maps listing the same
/// (lower, higher) pairs are equal regardless of row or column order.
#[derive(Debug, Clone)]
pub struct BindingMap {
    lower_names: Vec<String>,
    higher_names: Vec<String>,
    /// For each lower-level variable, the sorted higher-level indices it belongs to.
    rows: Vec<Vec<usize>>,
}

impl PartialEq for BindingMap {
    fn eq(&self, other: &Self) -> bool {
        self.q() == other.q() && self.p() == other.p() && self.pairs() == other.pairs()
    }
}

impl BindingMap {
    /// Builds a validated map from per-row membership lists.
    pub fn new(
        lower_names: Vec<String>,
        higher_names: Vec<String>,
        rows: Vec<Vec<usize>>,
    ) -> Result<BindingMap> {
        if rows.len() != lower_names.len() {
            return Err(Error::InvalidArgument(format!(
                "{} membership rows for {} lower-level names",
                rows.len(),
                lower_names.len()
            )));
        }
        check_unique_names(&lower_names)?;
        check_unique_names(&higher_names)?;
        let p = higher_names.len();
        let mut rows = rows;
        let mut col_count = vec![0usize; p];
        let mut orphans = Vec::new();
        for (k, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if let Some(&bad) = row.iter().find(|&&j| j >= p) {
                return Err(Error::InvalidArgument(format!(
                    "lower-level variable {:?} refers to higher-level index {bad} (p = {p})",
                    lower_names[k]
                )));
            }
            if row.is_empty() {
                orphans.push(lower_names[k].clone());
            }
            for &j in row.iter() {
                col_count[j] += 1;
            }
        }
        if !orphans.is_empty() {
            return Err(Error::OrphanLower(orphans));
        }
        let empty: Vec<String> = col_count
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(j, _)| higher_names[j].clone())
            .collect();
        if !empty.is_empty() {
            return Err(Error::EmptyHigher(empty));
        }
        Ok(BindingMap {
            lower_names,
            higher_names,
            rows,
        })
    }

    /// Builds a map from a dense `q x p` table of 0/1 values.
    pub fn from_dense(
        lower_names: Vec<String>,
        higher_names: Vec<String>,
        entries: &[Vec<f64>],
    ) -> Result<BindingMap> {
        let mut rows = Vec::with_capacity(entries.len());
        for (k, row) in entries.iter().enumerate() {
            if row.len() != higher_names.len() {
                return Err(Error::InvalidArgument(format!(
                    "row {k} has {} entries, expected {}",
                    row.len(),
                    higher_names.len()
                )));
            }
            let mut members = Vec::new();
            for (j, &v) in row.iter().enumerate() {
                if v == 1.0 {
                    members.push(j);
                } else if v != 0.0 {
                    return Err(Error::NonBinary {
                        lower: lower_names.get(k).cloned().unwrap_or_default(),
                        higher: higher_names[j].clone(),
                        value: v.to_string(),
                    });
                }
            }
            rows.push(members);
        }
        BindingMap::new(lower_names, higher_names, rows)
    }

    /// Reads a dense table or a sparse `lower,higher` membership list.
    pub fn from_table(t: &Table) -> Result<BindingMap> {
        let is_sparse = t.header.len() == 2
            && t.header[0].eq_ignore_ascii_case("lower")
            && t.header[1].eq_ignore_ascii_case("higher");
        if is_sparse {
            Self::from_sparse_table(t)
        } else {
            Self::from_dense_table(t)
        }
    }

    fn from_dense_table(t: &Table) -> Result<BindingMap> {
        if t.header.len() < 2 {
            return Err(Error::parse(
                1,
                "dense binding map needs at least one higher-level column",
            ));
        }
        let higher_names = t.header[1..].to_vec();
        let mut lower_names = Vec::with_capacity(t.rows.len());
        let mut rows = Vec::with_capacity(t.rows.len());
        for (lineno, cells) in &t.rows {
            let lower = cells[0].clone();
            let mut members = Vec::new();
            for (j, cell) in cells[1..].iter().enumerate() {
                match cell.as_str() {
                    "1" | "1.0" => members.push(j),
                    "0" | "0.0" => {}
                    other => {
                        if other.parse::<f64>().is_err() {
                            return Err(Error::parse(
                                *lineno,
                                format!("non-numeric binding entry {other:?}"),
                            ));
                        }
                        return Err(Error::NonBinary {
                            lower,
                            higher: higher_names[j].clone(),
                            value: other.to_string(),
                        });
                    }
                }
            }
            lower_names.push(lower);
            rows.push(members);
        }
        BindingMap::new(lower_names, higher_names, rows)
    }

    fn from_sparse_table(t: &Table) -> Result<BindingMap> {
        let mut lower_idx: HashMap<String, usize> = HashMap::new();
        let mut higher_idx: HashMap<String, usize> = HashMap::new();
        let mut lower_names = Vec::new();
        let mut higher_names = Vec::new();
        let mut rows: Vec<Vec<usize>> = Vec::new();
        for (lineno, cells) in &t.rows {
            if cells[0].is_empty() || cells[1].is_empty() {
                return Err(Error::parse(*lineno, "empty name in membership list"));
            }
            let k = *lower_idx.entry(cells[0].clone()).or_insert_with(|| {
                lower_names.push(cells[0].clone());
                rows.push(Vec::new());
                lower_names.len() - 1
            });
            let j = *higher_idx.entry(cells[1].clone()).or_insert_with(|| {
                higher_names.push(cells[1].clone());
                higher_names.len() - 1
            });
            rows[k].push(j);
        }
        BindingMap::new(lower_names, higher_names, rows)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<BindingMap> {
        BindingMap::from_table(&Table::read(path)?)
    }

    pub fn parse(text: &str) -> Result<BindingMap> {
        BindingMap::from_table(&Table::parse(text)?)
    }

    /// Sparse `lower,higher` encoding, one line per membership.
    pub fn to_sparse_string(&self) -> String {
        let mut out = String::from("lower,higher\n");
        for (k, row) in self.rows.iter().enumerate() {
            for &j in row {
                out.push_str(&self.lower_names[k]);
                out.push(',');
                out.push_str(&self.higher_names[j]);
                out.push('\n');
            }
        }
        out
    }

    /// Dense encoding with an empty corner cell.
    pub fn to_dense_string(&self) -> String {
        let mut out = String::from("lower");
        for h in &self.higher_names {
            out.push(',');
            out.push_str(h);
        }
        out.push('\n');
        for (k, row) in self.rows.iter().enumerate() {
            out.push_str(&self.lower_names[k]);
            let mut it = row.iter().peekable();
            for j in 0..self.p() {
                let hit = it.peek() == Some(&&j);
                if hit {
                    it.next();
                }
                out.push_str(if hit { ",1" } else { ",0" });
            }
            out.push('\n');
        }
        out
    }

    pub fn q(&self) -> usize {
        self.lower_names.len()
    }

    pub fn p(&self) -> usize {
        self.higher_names.len()
    }

    pub fn lower_names(&self) -> &[String] {
        &self.lower_names
    }

    pub fn higher_names(&self) -> &[String] {
        &self.higher_names
    }

    /// Higher-level indices of lower-level variable `k`.
    pub fn row(&self, k: usize) -> &[usize] {
        &self.rows[k]
    }

    pub fn contains(&self, k: usize, j: usize) -> bool {
        self.rows[k].binary_search(&j).is_ok()
    }

    /// All lower-level members (unique and shared) of higher-level variable `l`.
    pub fn members(&self, l: usize) -> Vec<usize> {
        (0..self.q()).filter(|&k| self.contains(k, l)).collect()
    }

    /// The `q x p` 0/1 matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.q(), self.p());
        for (k, row) in self.rows.iter().enumerate() {
            for &j in row {
                a[(k, j)] = 1.0;
            }
        }
        a
    }

    fn pairs(&self) -> HashSet<(&str, &str)> {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(k, row)| {
                row.iter()
                    .map(move |&j| (self.lower_names[k].as_str(), self.higher_names[j].as_str()))
            })
            .collect()
    }

    /// Removes the given higher-level columns and any lower-level variable
    /// left without a parent. Returns the reduced map and the removed lower names.
    fn without_columns(&self, drop: &[usize]) -> Result<(BindingMap, Vec<String>)> {
        let keep: Vec<usize> = (0..self.p()).filter(|j| !drop.contains(j)).collect();
        let mut new_index = vec![usize::MAX; self.p()];
        for (new, &old) in keep.iter().enumerate() {
            new_index[old] = new;
        }
        let mut lower_names = Vec::new();
        let mut rows = Vec::new();
        let mut orphaned = Vec::new();
        for (k, row) in self.rows.iter().enumerate() {
            let mapped: Vec<usize> = row
                .iter()
                .filter(|&&j| new_index[j] != usize::MAX)
                .map(|&j| new_index[j])
                .collect();
            if mapped.is_empty() {
                orphaned.push(self.lower_names[k].clone());
            } else {
                lower_names.push(self.lower_names[k].clone());
                rows.push(mapped);
            }
        }
        let higher_names = keep.iter().map(|&j| self.higher_names[j].clone()).collect();
        Ok((BindingMap::new(lower_names, higher_names, rows)?, orphaned))
    }
}

fn check_unique_names(names: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(names.len());
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(Error::DuplicateName(n.clone()));
        }
    }
    Ok(())
}

/// Unique members `S_l` of each higher-level variable, plus the shared
/// lower-level variables (row sum of at least two).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UniqueSets {
    pub sets: Vec<Vec<usize>>,
    pub shared: Vec<usize>,
}

impl UniqueSets {
    pub fn derive(map: &BindingMap) -> UniqueSets {
        let mut sets = vec![Vec::new(); map.p()];
        let mut shared = Vec::new();
        for k in 0..map.q() {
            match map.row(k) {
                [only] => sets[*only].push(k),
                _ => shared.push(k),
            }
        }
        UniqueSets { sets, shared }
    }

    pub fn p(&self) -> usize {
        self.sets.len()
    }

    pub fn size(&self, l: usize) -> usize {
        self.sets[l].len()
    }

    /// Higher-level indices with fewer than two unique members.
    pub fn violations(&self) -> Vec<usize> {
        (0..self.p()).filter(|&l| self.size(l) < 2).collect()
    }

    pub fn satisfies_uvc(&self) -> bool {
        self.sets.iter().all(|s| s.len() >= 2)
    }

    pub(crate) fn require_uvc(&self) -> Result<()> {
        let bad = self.violations();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Uvc(
                bad.iter().map(|l| format!("#{}", l + 1)).collect(),
            ))
        }
    }
}

pub fn derive_unique_sets(map: &BindingMap) -> UniqueSets {
    UniqueSets::derive(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum UvcPolicy {
    #[default]
    Strict,
    Drop,
}

impl std::str::FromStr for UvcPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(UvcPolicy::Strict),
            "drop" => Ok(UvcPolicy::Drop),
            _ => Err(Error::InvalidArgument(format!("unknown UVC policy {s:?}"))),
        }
    }
}

/// A binding map that satisfies the unique-variable condition, with its
/// unique sets and a record of what was removed to get there.
#[derive(Debug, Clone)]
pub struct CheckedMap {
    pub map: BindingMap,
    pub sets: UniqueSets,
    pub dropped_higher: Vec<String>,
    pub dropped_lower: Vec<String>,
}

/// Enforces the unique-variable condition under `policy`.
///
/// With [`UvcPolicy::Drop`], offending higher-level variables are removed
/// (as judged on the input map), orphaned lower-level variables go with
/// them, and the unique sets are re-derived on the reduced map.
pub fn check_uvc(map: &BindingMap, policy: UvcPolicy) -> Result<CheckedMap> {
    let sets = UniqueSets::derive(map);
    let bad = sets.violations();
    if bad.is_empty() {
        return Ok(CheckedMap {
            map: map.clone(),
            sets,
            dropped_higher: Vec::new(),
            dropped_lower: Vec::new(),
        });
    }
    let names: Vec<String> = bad.iter().map(|&l| map.higher_names()[l].clone()).collect();
    match policy {
        UvcPolicy::Strict => Err(Error::Uvc(names)),
        UvcPolicy::Drop => {
            if bad.len() == map.p() {
                return Err(Error::Uvc(names));
            }
            let (reduced, dropped_lower) = map.without_columns(&bad)?;
            let sets = UniqueSets::derive(&reduced);
            Ok(CheckedMap {
                map: reduced,
                sets,
                dropped_higher: names,
                dropped_lower,
            })
        }
    }
}

/// `n x q` lower-level measurements, columns aligned with a binding map.
#[derive(Debug, Clone)]
pub struct SampleMatrix {
    values: DMatrix<f64>,
    centered: bool,
    raw_means: Vec<f64>,
    sample_ids: Option<Vec<String>>,
}

impl SampleMatrix {
    /// Wraps an `n x q` matrix, optionally subtracting column means.
    pub fn new(values: DMatrix<f64>, center: bool) -> Result<SampleMatrix> {
        let n = values.nrows();
        if n < 2 {
            return Err(Error::TooFewSamples { need: 2, got: n });
        }
        for j in 0..values.ncols() {
            for i in 0..n {
                if !values[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
            }
        }
        let raw_means: Vec<f64> = values.column_iter().map(|c| c.sum() / n as f64).collect();
        let mut values = values;
        if center {
            for (j, mut col) in values.column_iter_mut().enumerate() {
                col.add_scalar_mut(-raw_means[j]);
            }
        }
        Ok(SampleMatrix {
            values,
            centered: center,
            raw_means,
            sample_ids: None,
        })
    }

    /// Builds from a table whose header names lower-level variables,
    /// reordering columns to match `map`. An optional leading `sample_id`
    /// column is kept as row labels.
    pub fn from_table(t: &Table, map: &BindingMap, center: bool) -> Result<SampleMatrix> {
        let has_ids = t
            .header
            .first()
            .is_some_and(|h| h.eq_ignore_ascii_case("sample_id"));
        let offset = usize::from(has_ids);
        let header = &t.header[offset..];

        let mut position: HashMap<&str, usize> = HashMap::with_capacity(header.len());
        for (i, h) in header.iter().enumerate() {
            if position.insert(h.as_str(), i).is_some() {
                return Err(Error::DuplicateName(h.clone()));
            }
        }
        let known: HashSet<&str> = map.lower_names().iter().map(String::as_str).collect();
        let unknown: Vec<String> = header
            .iter()
            .filter(|h| !known.contains(h.as_str()))
            .cloned()
            .collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownColumns(unknown));
        }
        let missing: Vec<String> = map
            .lower_names()
            .iter()
            .filter(|n| !position.contains_key(n.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingColumns(missing));
        }

        let n = t.rows.len();
        let q = map.q();
        let order: Vec<usize> = map
            .lower_names()
            .iter()
            .map(|name| position[name.as_str()] + offset)
            .collect();
        let mut values = DMatrix::zeros(n, q);
        let mut ids = Vec::with_capacity(n);
        for (i, (lineno, cells)) in t.rows.iter().enumerate() {
            if has_ids {
                ids.push(cells[0].clone());
            }
            for (j, &src) in order.iter().enumerate() {
                let cell = &cells[src];
                let v: f64 = cell.parse().map_err(|_| {
                    Error::parse(
                        *lineno,
                        format!("non-numeric cell {cell:?} in column {:?}", t.header[src]),
                    )
                })?;
                if !v.is_finite() {
                    return Err(Error::parse(*lineno, format!("non-finite cell {cell:?}")));
                }
                values[(i, j)] = v;
            }
        }
        let mut s = SampleMatrix::new(values, center)?;
        if has_ids {
            s.sample_ids = Some(ids);
        }
        Ok(s)
    }

    pub fn read(path: impl AsRef<Path>, map: &BindingMap, center: bool) -> Result<SampleMatrix> {
        SampleMatrix::from_table(&Table::read(path)?, map, center)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn q(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// Column means before any centering.
    pub fn raw_means(&self) -> &[f64] {
        &self.raw_means
    }

    pub fn sample_ids(&self) -> Option<&[String]> {
        self.sample_ids.as_deref()
    }

    /// Rows `idx` as a new matrix, keeping the centering flag but not
    /// re-centering.
    pub fn select_rows(&self, idx: &[usize]) -> Result<SampleMatrix> {
        let values = self.values.select_rows(idx);
        let n = values.nrows();
        if n < 2 {
            return Err(Error::TooFewSamples { need: 2, got: n });
        }
        let raw_means = values.column_iter().map(|c| c.sum() / n as f64).collect();
        Ok(SampleMatrix {
            values,
            centered: self.centered,
            raw_means,
            sample_ids: None,
        })
    }

    /// Columns `idx`, in that order. Centering and sample ids carry over.
    pub fn select_columns(&self, idx: &[usize]) -> SampleMatrix {
        SampleMatrix {
            values: self.values.select_columns(idx),
            centered: self.centered,
            raw_means: idx.iter().map(|&j| self.raw_means[j]).collect(),
            sample_ids: self.sample_ids.clone(),
        }
    }
}

/// The ordered index-pair families `I_ll` (within one unique set, off the
/// diagonal) and `I_lk` (across two unique sets).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairSet {
    Diag(usize),
    Offdiag(usize, usize),
}

impl PairSet {
    /// The pair family behind entry `(l, k)` of the covariance matrix.
    pub fn for_entry(l: usize, k: usize) -> PairSet {
        if l == k {
            PairSet::Diag(l)
        } else {
            PairSet::Offdiag(l, k)
        }
    }

    pub fn cardinality(&self, sets: &UniqueSets) -> usize {
        match *self {
            PairSet::Diag(l) => sets.size(l) * sets.size(l).saturating_sub(1),
            PairSet::Offdiag(l, k) => sets.size(l) * sets.size(k),
        }
    }

    /// Enumerates the ordered pairs (0-based lower-level indices).
    pub fn pairs<'a>(&self, sets: &'a UniqueSets) -> Box<dyn Iterator<Item = (usize, usize)> + 'a> {
        match *self {
            PairSet::Diag(l) => {
                let s = &sets.sets[l];
                Box::new(
                    s.iter().flat_map(move |&i| {
                        s.iter().filter(move |&&j| j != i).map(move |&j| (i, j))
                    }),
                )
            }
            PairSet::Offdiag(l, k) => {
                let (a, b) = (&sets.sets[l], &sets.sets[k]);
                Box::new(a.iter().flat_map(move |&i| b.iter().map(move |&j| (i, j))))
            }
        }
    }
}
