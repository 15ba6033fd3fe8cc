//! Dense, sparse and diagonal matrices and the products every other module
//! composes.

mod dense;
mod sparse;

pub use dense::DenseMatrix;
pub use sparse::SparseMatrix;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Diagonal matrix with strictly positive entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalMatrix<T = f32> {
    entries: Vec<T>,
}

impl<T: Scalar> DiagonalMatrix<T> {
    pub fn new(entries: Vec<T>) -> Result<Self> {
        if entries.iter().any(|&e| !(e > T::zero()) || !e.is_finite()) {
            return Err(Error::invalid(
                "diagonal entries must be positive and finite",
            ));
        }
        Ok(Self { entries })
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    /// `D⁻¹ · a`.
    pub fn inverse_times(&self, a: &SparseMatrix<T>) -> Result<SparseMatrix<T>> {
        let inv: Vec<T> = self.entries.iter().map(|&e| T::one() / e).collect();
        a.scale_rows(&inv)
    }
}

/// `a · b` for sparse `a` and dense `b`.
pub fn spmm<T: Scalar>(a: &SparseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    a.spmm(b)
}

pub fn sp_transpose<T: Scalar>(a: &SparseMatrix<T>) -> SparseMatrix<T> {
    a.transpose()
}

/// `sᵀ · a · s`, computed without densifying.
pub fn sp_coarsen<T: Scalar>(s: &SparseMatrix<T>, a: &SparseMatrix<T>) -> Result<SparseMatrix<T>> {
    if a.rows() != a.cols() || s.rows() != a.rows() {
        return Err(Error::shape(
            "sp_coarsen",
            format!("square adjacency with {} rows", s.rows()),
            format!("{}x{}", a.rows(), a.cols()),
        ));
    }
    let a_s = a.spgemm(s)?;
    s.transpose().spgemm(&a_s)
}

pub fn col_normalize<T: Scalar>(s: &SparseMatrix<T>) -> Result<SparseMatrix<T>> {
    s.col_normalize()
}

pub fn row_normalize<T: Scalar>(s: &SparseMatrix<T>) -> Result<SparseMatrix<T>> {
    s.row_normalize()
}
