//! Compressed sparse row matrices in canonical form.
//!
//! Every `SparseMatrix` keeps its column indices strictly increasing within a
//! row and stores no explicit duplicates, so two matrices with the same
//! entries compare equal structurally.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from raw CSR arrays, checking the canonical-form invariants.
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != n_rows + 1 {
            return Err(Error::MalformedMatrix(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                n_rows + 1
            )));
        }
        if row_offsets[0] != 0 || row_offsets[n_rows] != col_indices.len() {
            return Err(Error::MalformedMatrix("row_offsets must span col_indices".into()));
        }
        if col_indices.len() != values.len() {
            return Err(Error::MalformedMatrix("col_indices and values differ in length".into()));
        }
        for r in 0..n_rows {
            let (start, end) = (row_offsets[r], row_offsets[r + 1]);
            if start > end {
                return Err(Error::MalformedMatrix(format!("row {r} has decreasing offsets")));
            }
            let cols = &col_indices[start..end];
            if cols.iter().any(|&c| c >= n_cols) {
                return Err(Error::MalformedMatrix(format!("row {r} has a column >= {n_cols}")));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::MalformedMatrix(format!(
                    "row {r} columns are not strictly increasing"
                )));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedMatrix("non-finite value".into()));
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Accumulates `(row, col, value)` triplets, summing duplicates.
    /// Entries that sum to exactly zero are not stored.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for (r, c, v) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::IndexOutOfRange {
                    index: r.max(c),
                    n: if r >= n_rows { n_rows } else { n_cols },
                });
            }
            if !v.is_finite() {
                return Err(Error::MalformedMatrix(format!("non-finite value at ({r}, {c})")));
            }
            rows[r].push((c, v));
        }
        let mut row_offsets = Vec::with_capacity(n_rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut iter = row.into_iter().peekable();
            while let Some((c, mut v)) = iter.next() {
                while let Some(&(c2, v2)) = iter.peek() {
                    if c2 != c {
                        break;
                    }
                    v += v2;
                    iter.next();
                }
                if v != 0.0 {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut col_indices = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        let mut row_offsets = Vec::with_capacity(n + 1);
        row_offsets.push(0);
        for (i, &d) in diag.iter().enumerate() {
            if d != 0.0 {
                col_indices.push(i);
                values.push(d);
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        let triplets = (0..m.nrows())
            .flat_map(|r| (0..m.ncols()).map(move |c| (r, c)))
            .filter_map(|(r, c)| {
                let v = m[(r, c)];
                (v != 0.0).then_some((r, c, v))
            });
        Self::from_triplets(m.nrows(), m.ncols(), triplets)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
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

    /// Column indices and values of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        match self.col_indices[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    /// All stored entries as `(row, col, value)`.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    pub fn diagonal_values(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let row_offsets = counts.clone();
        let mut next = counts;
        let mut col_indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                let slot = next[c];
                col_indices[slot] = r;
                values[slot] = v;
                next[c] += 1;
            }
        }
        Self {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Exact structural and numerical symmetry.
    pub fn is_symmetric(&self) -> bool {
        self.is_square() && *self == self.transpose()
    }

    /// Symmetry up to an absolute tolerance on each entry.
    pub fn is_symmetric_within(&self, tol: f64) -> bool {
        self.is_square()
            && self
                .triplets()
                .all(|(r, c, v)| (v - self.get(c, r)).abs() <= tol)
            && self
                .transpose()
                .triplets()
                .all(|(r, c, v)| (v - self.get(r, c)).abs() <= tol)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `alpha * self + beta * other`.
    pub fn add_scaled(&self, alpha: f64, other: &SparseMatrix, beta: f64) -> Result<Self> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(Error::dims(
                format!("{}x{}", self.n_rows, self.n_cols),
                format!("{}x{}", other.n_rows, other.n_cols),
            ));
        }
        let triplets = self
            .triplets()
            .map(|(r, c, v)| (r, c, alpha * v))
            .chain(other.triplets().map(|(r, c, v)| (r, c, beta * v)));
        Self::from_triplets(self.n_rows, self.n_cols, triplets)
    }

    /// Sparse-sparse product.
    pub fn matmul(&self, other: &SparseMatrix) -> Result<Self> {
        if self.n_cols != other.n_rows {
            return Err(Error::dims(
                format!("{} rows on the right", self.n_cols),
                other.n_rows,
            ));
        }
        let mut row_offsets = Vec::with_capacity(self.n_rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        let mut acc = vec![0.0; other.n_cols];
        let mut touched = vec![false; other.n_cols];
        let mut cols: Vec<usize> = Vec::new();
        for r in 0..self.n_rows {
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    if !touched[c] {
                        touched[c] = true;
                        cols.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            cols.sort_unstable();
            for &c in &cols {
                if acc[c] != 0.0 {
                    col_indices.push(c);
                    values.push(acc[c]);
                }
                acc[c] = 0.0;
                touched[c] = false;
            }
            cols.clear();
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            n_rows: self.n_rows,
            n_cols: other.n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols, "matvec length mismatch");
        (0..self.n_rows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `self * x` for a dense right-hand side.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n_cols, "mul_dense shape mismatch");
        let mut out = DMatrix::zeros(self.n_rows, x.ncols());
        for j in 0..x.ncols() {
            let col = x.column(j);
            let mut out_col = out.column_mut(j);
            for r in 0..self.n_rows {
                let mut s = 0.0;
                for (c, v) in self.row(r) {
                    s += v * col[c];
                }
                out_col[r] = s;
            }
        }
        out
    }

    /// `selfᵀ * x` without materializing the transpose.
    pub fn transpose_mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n_rows, "transpose_mul_dense shape mismatch");
        let mut out = DMatrix::zeros(self.n_cols, x.ncols());
        for j in 0..x.ncols() {
            let col = x.column(j);
            let mut out_col = out.column_mut(j);
            for r in 0..self.n_rows {
                let xr = col[r];
                if xr == 0.0 {
                    continue;
                }
                for (c, v) in self.row(r) {
                    out_col[c] += v * xr;
                }
            }
        }
        out
    }

    /// `xᵀ M x` for a vector `x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.triplets().map(|(r, c, v)| x[r] * v * x[c]).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let m = SparseMatrix::from_triplets(2, 3, [(0, 2, 1.0), (0, 0, 2.0), (0, 2, 3.0)]).unwrap();
        assert_eq!(m.col_indices(), &[0, 2]);
        assert_eq!(m.values(), &[2.0, 4.0]);
        assert_eq!(m.row_offsets(), &[0, 2, 2]);
    }

    #[test]
    fn rejects_unsorted_rows() {
        let err = SparseMatrix::new(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]);
        assert!(matches!(err, Err(Error::MalformedMatrix(_))));
        let err = SparseMatrix::new(1, 3, vec![0, 1], vec![3], vec![1.0]);
        assert!(matches!(err, Err(Error::MalformedMatrix(_))));
    }

    #[test]
    fn transpose_and_products_match_dense() {
        let a = SparseMatrix::from_triplets(
            3,
            4,
            [(0, 1, 2.0), (1, 0, -1.0), (1, 3, 0.5), (2, 2, 4.0), (2, 3, 1.0)],
        )
        .unwrap();
        let b = a.transpose();
        assert_eq!(b.to_dense(), a.to_dense().transpose());
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab.to_dense(), a.to_dense() * b.to_dense());
        let x = DMatrix::from_fn(4, 2, |r, c| (r + 3 * c) as f64 - 1.5);
        assert_eq!(a.mul_dense(&x), a.to_dense() * &x);
        let y = DMatrix::from_fn(3, 2, |r, c| (2 * r + c) as f64 * 0.25);
        assert_eq!(a.transpose_mul_dense(&y), a.to_dense().transpose() * &y);
    }

    #[test]
    fn add_scaled_drops_cancelled_entries() {
        let a = SparseMatrix::identity(3);
        let z = a.add_scaled(1.0, &a, -1.0).unwrap();
        assert_eq!(z.nnz(), 0);
    }
}
