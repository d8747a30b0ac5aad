//! Compressed sparse row matrices.
//!
//! Every operator in the pipeline (adjacency, lazy diffusion operator,
//! wavelet filters and the encoder views) is stored as a [`SparseMatrix`].
//! Rows hold strictly increasing column indices and no stored zeros.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Entries of products and sums whose magnitude falls below this are dropped.
pub const PRUNE_TOLERANCE: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from raw CSR arrays, checking every structural invariant.
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let m = SparseMatrix {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        SparseMatrix {
            n_rows,
            n_cols,
            row_offsets: vec![0; n_rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Assembles a matrix from `(row, col, value)` triplets. Duplicate
    /// coordinates are summed and exact zeros are not stored.
    pub fn from_triplets<I>(n_rows: usize, n_cols: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, _) in &entries {
            if r >= n_rows || c >= n_cols {
                return Err(Error::Index(format!(
                    "entry ({r}, {c}) outside a {n_rows}x{n_cols} matrix"
                )));
            }
        }
        entries.sort_by_key(|a| (a.0, a.1));

        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut iter = entries.into_iter().peekable();
        while let Some((r, c, mut v)) = iter.next() {
            while let Some(&(r2, c2, v2)) = iter.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    iter.next();
                } else {
                    break;
                }
            }
            if v != 0.0 {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] += 1;
            }
        }
        for r in 0..n_rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Converts a dense matrix, skipping exact zeros.
    pub fn from_dense(dense: ArrayView2<'_, f64>) -> Self {
        let (n_rows, n_cols) = dense.dim();
        let mut row_offsets = Vec::with_capacity(n_rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for row in dense.rows() {
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(values.len());
        }
        SparseMatrix {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for (r, c, v) in self.iter() {
            out[[r, c]] = v;
        }
        out
    }

    /// Checks the CSR invariants: offsets monotone and consistent, columns
    /// strictly increasing and in range, values finite and nonzero.
    pub fn validate(&self) -> Result<()> {
        if self.row_offsets.len() != self.n_rows + 1 {
            return Err(Error::shape(format!(
                "row_offsets has length {}, expected {}",
                self.row_offsets.len(),
                self.n_rows + 1
            )));
        }
        if self.row_offsets[0] != 0 || *self.row_offsets.last().unwrap() != self.values.len() {
            return Err(Error::shape("row_offsets must start at 0 and end at nnz"));
        }
        if self.col_indices.len() != self.values.len() {
            return Err(Error::shape("col_indices and values differ in length"));
        }
        for r in 0..self.n_rows {
            let (start, end) = (self.row_offsets[r], self.row_offsets[r + 1]);
            if start > end {
                return Err(Error::shape(format!("row_offsets decrease at row {r}")));
            }
            let cols = &self.col_indices[start..end];
            if cols.iter().any(|&c| c >= self.n_cols) {
                return Err(Error::Index(format!("column index out of range in row {r}")));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::shape(format!(
                    "columns of row {r} are not strictly increasing"
                )));
            }
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite() || **v == 0.0) {
            return Err(Error::Domain(format!("stored value {v} is zero or not finite")));
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Fraction of stored entries; 0 for an empty shape.
    pub fn density(&self) -> f64 {
        let cells = self.n_rows * self.n_cols;
        if cells == 0 {
            0.0
        } else {
            self.nnz() as f64 / cells as f64
        }
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (start, end) = (self.row_offsets[r], self.row_offsets[r + 1]);
        self.col_indices[start..end]
            .iter()
            .copied()
            .zip(self.values[start..end].iter().copied())
    }

    /// All stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (start, end) = (self.row_offsets[r], self.row_offsets[r + 1]);
        match self.col_indices[start..end].binary_search(&c) {
            Ok(pos) => self.values[start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_cols];
        for (&c, &v) in self.col_indices.iter().zip(&self.values) {
            sums[c] += v;
        }
        sums
    }

    pub fn column_abs_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_cols];
        for (&c, &v) in self.col_indices.iter().zip(&self.values) {
            sums[c] += v.abs();
        }
        sums
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let row_offsets = counts.clone();
        let mut next = counts;
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for (r, c, v) in self.iter() {
            let slot = next[c];
            col_indices[slot] = r;
            values[slot] = v;
            next[c] += 1;
        }
        SparseMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Keeps the entries for which `keep(row, col, value)` holds.
    pub fn retain<F>(&self, mut keep: F) -> SparseMatrix
    where
        F: FnMut(usize, usize, f64) -> bool,
    {
        let mut row_offsets = Vec::with_capacity(self.n_rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                if keep(r, c, v) {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(values.len());
        }
        SparseMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Multiplies column `c` by `factors[c]`. Entries that become zero are dropped.
    pub fn scale_columns(&self, factors: &[f64]) -> Result<SparseMatrix> {
        if factors.len() != self.n_cols {
            return Err(Error::shape(format!(
                "{} column factors for {} columns",
                factors.len(),
                self.n_cols
            )));
        }
        let mut out = self.clone();
        for (v, &c) in out.values.iter_mut().zip(&out.col_indices) {
            *v *= factors[c];
        }
        Ok(out.retain(|_, _, v| v != 0.0))
    }

    /// `a * self + b * other`, pruning entries below [`PRUNE_TOLERANCE`].
    pub fn linear_combination(&self, a: f64, other: &SparseMatrix, b: f64) -> Result<SparseMatrix> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(Error::shape(format!(
                "cannot add {}x{} and {}x{}",
                self.n_rows, self.n_cols, other.n_rows, other.n_cols
            )));
        }
        let mut row_offsets = Vec::with_capacity(self.n_rows + 1);
        let mut col_indices = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        row_offsets.push(0);
        for r in 0..self.n_rows {
            let mut lhs = self.row(r).peekable();
            let mut rhs = other.row(r).peekable();
            loop {
                let (c, v) = match (lhs.peek(), rhs.peek()) {
                    (None, None) => break,
                    (Some(&(c, v)), None) => {
                        lhs.next();
                        (c, a * v)
                    }
                    (None, Some(&(c, v))) => {
                        rhs.next();
                        (c, b * v)
                    }
                    (Some(&(c1, v1)), Some(&(c2, v2))) => {
                        if c1 < c2 {
                            lhs.next();
                            (c1, a * v1)
                        } else if c2 < c1 {
                            rhs.next();
                            (c2, b * v2)
                        } else {
                            lhs.next();
                            rhs.next();
                            (c1, a * v1 + b * v2)
                        }
                    }
                };
                if v.abs() >= PRUNE_TOLERANCE {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(values.len());
        }
        Ok(SparseMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Sparse-sparse product (row-wise Gustavson with a dense accumulator).
    /// Entries below [`PRUNE_TOLERANCE`] in magnitude are pruned.
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.n_cols != other.n_rows {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.n_rows, self.n_cols, other.n_rows, other.n_cols
            )));
        }
        let n_cols = other.n_cols;
        let mut acc = vec![0.0f64; n_cols];
        let mut touched = vec![false; n_cols];
        let mut pattern: Vec<usize> = Vec::new();

        let mut row_offsets = Vec::with_capacity(self.n_rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for r in 0..self.n_rows {
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    if !touched[c] {
                        touched[c] = true;
                        pattern.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            pattern.sort_unstable();
            for &c in &pattern {
                let v = acc[c];
                if v.abs() >= PRUNE_TOLERANCE {
                    col_indices.push(c);
                    values.push(v);
                }
                acc[c] = 0.0;
                touched[c] = false;
            }
            pattern.clear();
            row_offsets.push(values.len());
        }
        Ok(SparseMatrix {
            n_rows: self.n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Sparse-dense product `self · dense`.
    pub fn spmm(&self, dense: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if self.n_cols != dense.nrows() {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} sparse by {}x{} dense",
                self.n_rows,
                self.n_cols,
                dense.nrows(),
                dense.ncols()
            )));
        }
        let width = dense.ncols();
        let dense = dense.as_standard_layout();
        let src = dense.as_slice().expect("standard layout");
        let mut out = Array2::<f64>::zeros((self.n_rows, width));
        let dst = out.as_slice_mut().expect("fresh array");
        for r in 0..self.n_rows {
            let out_row = &mut dst[r * width..(r + 1) * width];
            for (c, v) in self.row(r) {
                let in_row = &src[c * width..(c + 1) * width];
                for (o, &x) in out_row.iter_mut().zip(in_row) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// Transposed sparse-dense product `selfᵀ · dense`, without materializing the transpose.
    pub fn spmm_transpose(&self, dense: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if self.n_rows != dense.nrows() {
            return Err(Error::shape(format!(
                "cannot multiply ({}x{})ᵀ sparse by {}x{} dense",
                self.n_rows,
                self.n_cols,
                dense.nrows(),
                dense.ncols()
            )));
        }
        let width = dense.ncols();
        let dense = dense.as_standard_layout();
        let src = dense.as_slice().expect("standard layout");
        let mut out = Array2::<f64>::zeros((self.n_cols, width));
        let dst = out.as_slice_mut().expect("fresh array");
        for r in 0..self.n_rows {
            let in_row = &src[r * width..(r + 1) * width];
            for (c, v) in self.row(r) {
                let out_row = &mut dst[c * width..(c + 1) * width];
                for (o, &x) in out_row.iter_mut().zip(in_row) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// Entry (i,j) stored iff (j,i) stored, with values equal within `tol`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        self.iter().all(|(r, c, v)| {
            let (start, end) = (self.row_offsets[c], self.row_offsets[c + 1]);
            match self.col_indices[start..end].binary_search(&r) {
                Ok(pos) => (self.values[start + pos] - v).abs() <= tol,
                Err(_) => false,
            }
        })
    }

    /// Largest entrywise absolute difference, treating missing entries as zero.
    pub fn max_abs_diff(&self, other: &SparseMatrix) -> Result<f64> {
        let diff = self.linear_combination(1.0, other, -1.0)?;
        Ok(diff.values.iter().fold(0.0f64, |m, v| m.max(v.abs())))
    }
}
