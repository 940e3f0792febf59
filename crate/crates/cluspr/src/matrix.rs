//! The token/document matrix pipeline used to estimate the cluster count.
//!
//! From the index we build the frequency matrix `A`, column-normalize it into
//! `N`, derive the two transition matrices `R` (token -> document) and `S`
//! (document -> token), and multiply them into the token-to-token matrix `Q`.
//! `Q`'s diagonal entries are the separation factors; their sum, rounded up,
//! is the estimated cluster count.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use crate::index::{write_atomic, CentralIndex, DocId, EncToken};
use crate::{Error, Result};

/// The matrices and the token/document orderings they are indexed by.
#[derive(Debug, Clone)]
pub struct MatrixBundle {
    /// Row order of `A`, `N`, `R`, `Q` (and column order of `S`).
    pub tokens: Vec<EncToken>,
    /// Column order of `A`, `N`, `R` (and row order of `S`).
    pub docs: Vec<DocId>,
    /// Token-document frequency counts.
    pub a: Array2<u64>,
    /// `A` normalized by column maxima.
    pub n: Array2<f64>,
    /// Row-normalized `N`: importance of each token across documents.
    pub r: Array2<f64>,
    /// Column-normalized `N`, document rows: importance of each document to
    /// each token.
    pub s: Array2<f64>,
    /// `R x S`: token-to-token topic similarity.
    pub q: Array2<f64>,
}

/// Cluster-count estimate: the trace of `Q` and its ceiling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KEstimate {
    pub trace: f64,
    pub k: usize,
}

/// Orders all index tokens by document co-occurrence (count of distinct
/// documents containing the token) descending, ties by token ascending.
pub fn all_tokens_ordered(index: &CentralIndex) -> Vec<EncToken> {
    let mut tokens: Vec<EncToken> = index.tokens().cloned().collect();
    tokens.sort_by(|a, b| {
        index
            .doc_count(b)
            .cmp(&index.doc_count(a))
            .then_with(|| a.cmp(b))
    });
    tokens
}

/// Keeps only the tokens whose document co-occurrence is at least the mean
/// over all tokens, in the same ordering as [`all_tokens_ordered`].
pub fn trim_tokens(index: &CentralIndex) -> Result<Vec<EncToken>> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let ordered = all_tokens_ordered(index);
    let total: usize = ordered.iter().map(|t| index.doc_count(t)).sum();
    let mean = total as f64 / ordered.len() as f64;
    Ok(ordered
        .into_iter()
        .filter(|t| index.doc_count(t) as f64 >= mean)
        .collect())
}

/// Builds the token-document frequency matrix for the given row/column order.
pub fn build_a(index: &CentralIndex, tokens: &[EncToken], docs: &[DocId]) -> Array2<u64> {
    let mut a = Array2::zeros((tokens.len(), docs.len()));
    for (i, token) in tokens.iter().enumerate() {
        for (j, doc) in docs.iter().enumerate() {
            a[[i, j]] = u64::from(index.freq(token, doc));
        }
    }
    a
}

/// Divides each entry by the maximum of its column; all-zero columns stay
/// zero.
pub fn normalize(a: &Array2<u64>) -> Array2<f64> {
    let (rows, cols) = a.dim();
    let mut n = Array2::zeros((rows, cols));
    for j in 0..cols {
        let max = (0..rows).map(|i| a[[i, j]]).max().unwrap_or(0);
        if max == 0 {
            continue;
        }
        for i in 0..rows {
            n[[i, j]] = a[[i, j]] as f64 / max as f64;
        }
    }
    n
}

/// Row-normalizes `N`. Every row must have a positive sum; trimmed tokens
/// always do because each has at least one posting.
pub fn build_r(n: &Array2<f64>) -> Result<Array2<f64>> {
    let (rows, cols) = n.dim();
    let mut r = Array2::zeros((rows, cols));
    for i in 0..rows {
        let sum: f64 = (0..cols).map(|j| n[[i, j]]).sum();
        if sum <= 0.0 {
            return Err(Error::ZeroRow(i));
        }
        for j in 0..cols {
            r[[i, j]] = n[[i, j]] / sum;
        }
    }
    Ok(r)
}

/// Normalizes each column of `N` into a document-indexed row of `S`.
/// Documents whose column is all zero get an all-zero row.
pub fn build_s(n: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = n.dim();
    let mut s = Array2::zeros((cols, rows));
    for j in 0..cols {
        let sum: f64 = (0..rows).map(|i| n[[i, j]]).sum();
        if sum <= 0.0 {
            continue;
        }
        for i in 0..rows {
            s[[j, i]] = n[[i, j]] / sum;
        }
    }
    s
}

/// Multiplies `R` (tokens x docs) by `S` (docs x tokens). Each diagonal entry
/// of the product is that token's separation factor.
pub fn build_q(r: &Array2<f64>, s: &Array2<f64>) -> Result<Array2<f64>> {
    if r.ncols() != s.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "R is {}x{} but S is {}x{}",
            r.nrows(),
            r.ncols(),
            s.nrows(),
            s.ncols()
        )));
    }
    Ok(r.dot(s))
}

/// Sums the separation factors and rounds up. The small epsilon keeps
/// accumulated float error in an integer-valued trace from inflating `k`;
/// the result is clamped to `[1, token count]`.
pub fn estimate_k(q: &Array2<f64>) -> KEstimate {
    let m = q.nrows();
    let trace: f64 = (0..m).map(|i| q[[i, i]]).sum();
    let k = (trace - 1e-9).ceil().max(1.0) as usize;
    KEstimate {
        trace,
        k: k.min(m.max(1)),
    }
}

impl MatrixBundle {
    /// Runs the whole pipeline. With `trim` set, rows are restricted to the
    /// tokens that survive [`trim_tokens`].
    pub fn from_index(index: &CentralIndex, trim: bool) -> Result<Self> {
        if index.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let tokens = if trim {
            trim_tokens(index)?
        } else {
            all_tokens_ordered(index)
        };
        let docs: Vec<DocId> = index.doc_ids().iter().cloned().collect();
        let a = build_a(index, &tokens, &docs);
        let n = normalize(&a);
        let r = build_r(&n)?;
        let s = build_s(&n);
        let q = build_q(&r, &s)?;
        Ok(MatrixBundle {
            tokens,
            docs,
            a,
            n,
            r,
            s,
            q,
        })
    }

    pub fn estimate(&self) -> KEstimate {
        estimate_k(&self.q)
    }

    /// Separation factor of the token at row `i`.
    pub fn separation_factor(&self, i: usize) -> f64 {
        self.q[[i, i]]
    }

    /// Writes A/N/R/S/Q as CSV files into `dir` and returns their paths.
    pub fn write_csv_files(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let token_labels: Vec<&str> = self.tokens.iter().map(|t| t.value()).collect();
        let doc_labels: Vec<&str> = self.docs.iter().map(|d| d.as_str()).collect();
        let mut written = Vec::new();
        written.push(self.write_csv(dir, "A.csv", &token_labels, &doc_labels, |i, j| {
            self.a[[i, j]].to_string()
        })?);
        written.push(self.write_csv(dir, "N.csv", &token_labels, &doc_labels, |i, j| {
            format_float(self.n[[i, j]])
        })?);
        written.push(self.write_csv(dir, "R.csv", &token_labels, &doc_labels, |i, j| {
            format_float(self.r[[i, j]])
        })?);
        written.push(self.write_csv(dir, "S.csv", &doc_labels, &token_labels, |i, j| {
            format_float(self.s[[i, j]])
        })?);
        written.push(self.write_csv(dir, "Q.csv", &token_labels, &token_labels, |i, j| {
            format_float(self.q[[i, j]])
        })?);
        Ok(written)
    }

    fn write_csv(
        &self,
        dir: &Path,
        name: &str,
        row_labels: &[&str],
        col_labels: &[&str],
        cell: impl Fn(usize, usize) -> String,
    ) -> Result<PathBuf> {
        let mut out = String::new();
        out.push_str("id");
        for c in col_labels {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (i, r) in row_labels.iter().enumerate() {
            out.push_str(r);
            for j in 0..col_labels.len() {
                out.push(',');
                out.push_str(&cell(i, j));
            }
            out.push('\n');
        }
        let path = dir.join(name);
        write_atomic(&path, out.as_bytes())?;
        Ok(path)
    }
}

fn format_float(v: f64) -> String {
    // shortest round-trip representation, stable across runs
    let mut buf = ryu_format(v);
    if buf.ends_with(".0") {
        buf.truncate(buf.len() - 2);
    }
    buf
}

fn ryu_format(v: f64) -> String {
    let mut s = serde_json::to_string(&v).expect("finite float");
    if s.contains('e') || s.contains('E') {
        // serde_json already emits shortest form; keep as-is
        return s;
    }
    if !s.contains('.') {
        s.push_str(".0");
    }
    s
}
