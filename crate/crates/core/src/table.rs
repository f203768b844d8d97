//! Minimal delimiter-separated table reading and writing.
//!
//! Input delimiter is comma or tab, detected from the header line. Output
//! is always tab-separated, numbers with 17 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    /// Data rows paired with their 1-based line numbers in the source.
    pub rows: Vec<(usize, Vec<String>)>,
}

pub fn detect_delimiter(header: &str) -> char {
    if header.contains('\t') {
        '\t'
    } else {
        ','
    }
}

impl Table {
    pub fn parse(text: &str) -> Result<Table> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header_line) = lines.next().ok_or_else(|| Error::parse(1, "empty input"))?;
        let header_line = header_line.trim_start_matches('\u{feff}');
        let delim = detect_delimiter(header_line);
        let header: Vec<String> = split(header_line, delim);
        let mut rows = Vec::new();
        for (lineno, line) in lines {
            let cells = split(line, delim);
            if cells.len() != header.len() {
                return Err(Error::parse(
                    lineno,
                    format!("expected {} fields, found {}", header.len(), cells.len()),
                ));
            }
            rows.push((lineno, cells));
        }
        Ok(Table { header, rows })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Table> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Table::parse(&text).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Parse {
                line,
                msg: format!("{}: {msg}", path.display()),
            },
            other => other,
        })
    }
}

fn split(line: &str, delim: char) -> Vec<String> {
    line.split(delim).map(|c| c.trim().to_string()).collect()
}

/// Formats a float with 17 significant digits, `NaN` for undefined values.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "Inf" } else { "-Inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Writes a labelled matrix: header `corner, col_names...`, then one row per
/// `row_names` entry.
pub fn format_matrix(
    corner: &str,
    row_names: &[String],
    col_names: &[String],
    m: &DMatrix<f64>,
) -> String {
    let mut out = String::new();
    out.push_str(corner);
    for c in col_names {
        out.push('\t');
        out.push_str(c);
    }
    out.push('\n');
    for (i, r) in row_names.iter().enumerate() {
        out.push_str(r);
        for j in 0..m.ncols() {
            let _ = write!(out, "\t{}", fmt_f64(m[(i, j)]));
        }
        out.push('\n');
    }
    out
}

/// Parses a labelled square-or-rectangular numeric matrix written by
/// [`format_matrix`].
pub fn parse_matrix(text: &str) -> Result<(Vec<String>, Vec<String>, DMatrix<f64>)> {
    let t = Table::parse(text)?;
    let cols: Vec<String> = t.header[1..].to_vec();
    let mut names = Vec::with_capacity(t.rows.len());
    let mut data = Vec::with_capacity(t.rows.len() * cols.len());
    for (lineno, row) in &t.rows {
        names.push(row[0].clone());
        for cell in &row[1..] {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::parse(*lineno, format!("non-numeric cell {cell:?}")))?;
            data.push(v);
        }
    }
    let m = DMatrix::from_row_slice(names.len(), cols.len(), &data);
    Ok((names, cols, m))
}
