//! Tab-separated on-disk formats.
//!
//! * `edges.tsv`: one undirected edge per line, two 0-based node ids.
//! * `features.tsv` / `embeddings.tsv`: one row per node, tab-separated decimals.
//! * `labels.tsv`: one non-negative integer per line.
//!
//! Blank lines are ignored. Floats are written with Rust's shortest
//! round-trip formatting so that re-reading a file reproduces the exact values.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Non-blank lines paired with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path)?;
    let mut edges = Vec::new();
    for (line_no, line) in content_lines(&text) {
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(parse_error(
                path,
                line_no,
                format!("expected 2 tab-separated node ids, found {} fields", fields.len()),
            ));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| parse_error(path, line_no, format!("bad node id {s:?}: {e}")))
        };
        edges.push((parse(fields[0])?, parse(fields[1])?));
    }
    Ok(edges)
}

pub fn read_dense(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path)?;
    let mut width: Option<usize> = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for (line_no, line) in content_lines(&text) {
        let mut count = 0;
        for field in line.split('\t') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| parse_error(path, line_no, format!("bad number {field:?}: {e}")))?;
            data.push(v);
            count += 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(parse_error(
                    path,
                    line_no,
                    format!("row has {count} columns, previous rows have {w}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let width = width.unwrap_or(0);
    Array2::from_shape_vec((rows, width), data).map_err(|e| Error::shape(e.to_string()))
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    content_lines(&text)
        .map(|(line_no, line)| {
            line.trim()
                .parse::<usize>()
                .map_err(|e| parse_error(path, line_no, format!("bad label {line:?}: {e}")))
        })
        .collect()
}

pub fn format_dense(matrix: ArrayView2<'_, f64>) -> String {
    let mut out = String::new();
    for row in matrix.rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push('\t');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn format_edges(edges: &[(usize, usize)]) -> String {
    edges.iter().map(|(a, b)| format!("{a}\t{b}\n")).collect()
}

pub fn format_labels(labels: &[usize]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
