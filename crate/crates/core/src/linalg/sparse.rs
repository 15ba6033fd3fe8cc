use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::DenseMatrix;

/// Compressed sparse row matrix.
///
/// Column indices are strictly increasing within each row. Matrices built
/// through the public constructors never store explicit zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix<T = f32> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// resulting zeros are dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, T)>,
    ) -> Result<Self> {
        for &(r, c, v) in &triplets {
            if r >= rows || c >= cols {
                return Err(Error::shape(
                    "SparseMatrix::from_triplets",
                    format!("index within {rows}x{cols}"),
                    format!("({r}, {c})"),
                ));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite("SparseMatrix::from_triplets"));
            }
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        let mut entry_rows = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
            } else {
                col_idx.push(c);
                values.push(v);
                entry_rows.push(r);
                last = Some((r, c));
            }
        }
        let mut keep_cols = Vec::with_capacity(col_idx.len());
        let mut keep_vals = Vec::with_capacity(values.len());
        for ((r, c), v) in entry_rows.into_iter().zip(col_idx).zip(values) {
            if v != T::zero() {
                row_ptr[r + 1] += 1;
                keep_cols.push(c);
                keep_vals.push(v);
            }
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx: keep_cols,
            values: keep_vals,
        })
    }

    /// Builds from raw CSR arrays, validating structure and pruning zeros.
    pub fn from_csr(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<T>,
    ) -> Result<Self> {
        let m = Self::from_csr_unpruned(rows, cols, row_ptr, col_idx, values)?;
        if m.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SparseMatrix::from_csr"));
        }
        Ok(m.pruned())
    }

    /// Validates structure but keeps explicit zeros. Used where the sparsity
    /// pattern is fixed and values are produced by differentiable arithmetic.
    pub(crate) fn from_csr_unpruned(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<T>,
    ) -> Result<Self> {
        if row_ptr.len() != rows + 1 || row_ptr[0] != 0 {
            return Err(Error::invalid("row pointer length or origin is wrong"));
        }
        if row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("row pointers are not monotone"));
        }
        let nnz = row_ptr[rows];
        if col_idx.len() != nnz || values.len() != nnz {
            return Err(Error::shape("SparseMatrix::from_csr", nnz, col_idx.len()));
        }
        for r in 0..rows {
            let cs = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            if cs.windows(2).any(|w| w[0] >= w[1]) || cs.last().is_some_and(|&c| c >= cols) {
                return Err(Error::invalid(format!(
                    "row {r} has unsorted or out-of-range column indices"
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn from_dense(d: &DenseMatrix<T>) -> Self {
        let mut row_ptr = Vec::with_capacity(d.rows() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for r in 0..d.rows() {
            for (c, &v) in d.row(r).iter().enumerate() {
                if v != T::zero() {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows: d.rows(),
            cols: d.cols(),
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out.set(r, c, v);
            }
        }
        out
    }

    fn pruned(mut self) -> Self {
        if self.values.iter().all(|&v| v != T::zero()) {
            return self;
        }
        let mut row_ptr = vec![0; self.rows + 1];
        let mut col_idx = Vec::with_capacity(self.col_idx.len());
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.values[k] != T::zero() {
                    col_idx.push(self.col_idx[k]);
                    values.push(self.values[k]);
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        self.row_ptr = row_ptr;
        self.col_idx = col_idx;
        self.values = values;
        self
    }

    /// Same pattern, new values; zeros introduced by `f` are pruned.
    pub fn map_values(&self, f: impl Fn(T) -> T) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v = f(*v);
        }
        out.pruned()
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Non-zero entries of row `r` as `(col, value)`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => T::zero(),
        }
    }

    /// All stored entries as `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, T)> {
        (0..self.rows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.rows)
            .map(|r| self.row(r).map(|(_, v)| v).sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<T> {
        let mut sums = vec![T::zero(); self.cols];
        for (&c, &v) in self.col_idx.iter().zip(&self.values) {
            sums[c] += v;
        }
        sums
    }

    /// Multiplies row `i` by `scale[i]`.
    pub fn scale_rows(&self, scale: &[T]) -> Result<Self> {
        if scale.len() != self.rows {
            return Err(Error::shape("scale_rows", self.rows, scale.len()));
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out.values[k] = self.values[k] * scale[r];
            }
        }
        Ok(out.pruned())
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![T::zero(); self.nnz()];
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                let dst = next[c];
                next[c] += 1;
                col_idx[dst] = r;
                values[dst] = self.values[k];
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Sparse-dense product `self · b`.
    pub fn spmm(&self, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if self.cols != b.rows() {
            return Err(Error::shape(
                "spmm",
                format!("{} rows on the right", self.cols),
                b.rows(),
            ));
        }
        let n = b.cols();
        let mut out = vec![T::zero(); self.rows * n];
        for r in 0..self.rows {
            let out_row = &mut out[r * n..(r + 1) * n];
            for (c, v) in self.row(r) {
                for (o, &x) in out_row.iter_mut().zip(b.row(c)) {
                    *o += v * x;
                }
            }
        }
        Ok(DenseMatrix::from_vec_unchecked(self.rows, n, out))
    }

    /// Sparse-sparse product `self · b` (row-wise Gustavson accumulation).
    pub fn spgemm(&self, b: &SparseMatrix<T>) -> Result<SparseMatrix<T>> {
        if self.cols != b.rows {
            return Err(Error::shape(
                "spgemm",
                format!("{} rows on the right", self.cols),
                b.rows,
            ));
        }
        let mut acc = vec![T::zero(); b.cols];
        let mut touched = vec![false; b.cols];
        let mut pattern: Vec<usize> = Vec::new();
        let mut row_ptr = Vec::with_capacity(self.rows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for r in 0..self.rows {
            for (k, a) in self.row(r) {
                for (c, v) in b.row(k) {
                    if !touched[c] {
                        touched[c] = true;
                        pattern.push(c);
                    }
                    acc[c] += a * v;
                }
            }
            pattern.sort_unstable();
            for &c in &pattern {
                if acc[c] != T::zero() {
                    col_idx.push(c);
                    values.push(acc[c]);
                }
                acc[c] = T::zero();
                touched[c] = false;
            }
            pattern.clear();
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            rows: self.rows,
            cols: b.cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Entrywise `max(0, self - other)`.
    pub fn sub_clamped(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape(
                "sub_clamped",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        let mut trip = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                let d = v - other.get(r, c);
                if d > T::zero() {
                    trip.push((r, c, d));
                }
            }
        }
        Self::from_triplets(self.rows, self.cols, trip)
    }

    /// Keeps the entries for which `keep(row, col, value)` holds.
    pub fn filter(&self, keep: impl Fn(usize, usize, T) -> bool) -> Self {
        let mut row_ptr = vec![0; self.rows + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                if keep(r, c, v) {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn cast<U: Scalar>(&self) -> SparseMatrix<U> {
        SparseMatrix {
            rows: self.rows,
            cols: self.cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self
                .values
                .iter()
                .map(|v| U::of(v.to_f64_lossy()))
                .collect(),
        }
        .pruned()
    }

    fn check_non_negative(&self) -> Result<()> {
        for (r, c, v) in self.triplets() {
            if v < T::zero() {
                return Err(Error::NegativeEntry {
                    row: r,
                    col: c,
                    value: v.to_f64_lossy(),
                });
            }
        }
        Ok(())
    }

    /// Divides every column with positive sum by that sum; zero columns stay zero.
    pub fn col_normalize(&self) -> Result<Self> {
        self.check_non_negative()?;
        let sums = self.col_sums();
        let mut out = self.clone();
        for (k, &c) in self.col_idx.iter().enumerate() {
            if sums[c] > T::zero() {
                out.values[k] = self.values[k] / sums[c];
            }
        }
        Ok(out.pruned())
    }

    /// Divides every row with positive sum by that sum; zero rows stay zero.
    pub fn row_normalize(&self) -> Result<Self> {
        self.check_non_negative()?;
        let sums = self.row_sums();
        let mut out = self.clone();
        for r in 0..self.rows {
            if sums[r] > T::zero() {
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    out.values[k] = self.values[k] / sums[r];
                }
            }
        }
        Ok(out.pruned())
    }
}
