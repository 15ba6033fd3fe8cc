//! Heterogeneous grid convolution.
//!
//! A 3×3 convolution is the sum of nine direction-wise graph convolutions.
//! Replacing the pixel graph by a graph over data-adaptive pixel groups gives
//! a convolution on a heterogeneous grid: pixels are softly clustered
//! ([`clustering`]), pooled into group features, convolved direction by
//! direction over the coarsened group adjacency ([`hgconv`]) and copied back.
//!
//! [`refconv`] holds the dense oracle the graph formulation is checked
//! against, [`autodiff`] the reverse-mode tape used for training and gradient
//! checks, and [`flops`] the operation counts of both formulations.

pub mod autodiff;
pub mod clustering;
pub mod error;
pub mod fixtures;
pub mod flops;
pub mod grid;
pub mod hgconv;
pub mod io;
pub mod linalg;
pub mod refconv;
pub mod rng;
pub mod scalar;
pub mod traindemo;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{Direction, DirectionalAdjacency, GridShape};
pub use linalg::{DenseMatrix, DiagonalMatrix, SparseMatrix};
pub use refconv::KernelSet;
pub use scalar::Scalar;
