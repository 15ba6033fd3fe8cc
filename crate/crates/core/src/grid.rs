//! The nine direction-wise adjacency matrices of a regular pixel grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DiagonalMatrix, SparseMatrix};
use crate::scalar::Scalar;

/// Lower bound applied to degree-matrix entries before inversion.
pub const DEFAULT_DEGREE_EPS: f64 = 1e-7;

/// One of the nine message-passing directions of a 3×3 neighbourhood.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    SelfLoop,
    Left,
    Right,
    Up,
    Down,
    UpLeft,
    UpRight,
    DownLeft,
    DownRight,
}

impl Direction {
    /// Canonical iteration order. Also used to break max-direction ties.
    pub const ALL: [Direction; 9] = [
        Direction::SelfLoop,
        Direction::Left,
        Direction::Right,
        Direction::Up,
        Direction::Down,
        Direction::UpLeft,
        Direction::UpRight,
        Direction::DownLeft,
        Direction::DownRight,
    ];

    /// `(row offset, col offset)` of the neighbour this direction reads from.
    pub const fn displacement(self) -> (isize, isize) {
        match self {
            Direction::SelfLoop => (0, 0),
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
            Direction::UpLeft => (-1, -1),
            Direction::UpRight => (-1, 1),
            Direction::DownLeft => (1, -1),
            Direction::DownRight => (1, 1),
        }
    }

    pub const fn opposite(self) -> Direction {
        match self {
            Direction::SelfLoop => Direction::SelfLoop,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::UpLeft => Direction::DownRight,
            Direction::UpRight => Direction::DownLeft,
            Direction::DownLeft => Direction::UpRight,
            Direction::DownRight => Direction::UpLeft,
        }
    }

    /// Position in [`Direction::ALL`].
    pub const fn index(self) -> usize {
        self as usize
    }

    pub const fn name(self) -> &'static str {
        match self {
            Direction::SelfLoop => "self",
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::UpLeft => "up-left",
            Direction::UpRight => "up-right",
            Direction::DownLeft => "down-left",
            Direction::DownRight => "down-right",
        }
    }

    pub fn is_self(self) -> bool {
        self == Direction::SelfLoop
    }
}

/// Height × width of a row-major pixel grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    height: usize,
    width: usize,
}

impl GridShape {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "grid must be at least 1x1, got {height}x{width}"
            )));
        }
        Ok(Self { height, width })
    }

    pub fn height(self) -> usize {
        self.height
    }

    pub fn width(self) -> usize {
        self.width
    }

    pub fn n_pixels(self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn coords(self, p: usize) -> (usize, usize) {
        (p / self.width, p % self.width)
    }

    /// Pixel reached from `p` by moving along `d`, if it is inside the grid.
    pub fn neighbor(self, p: usize, d: Direction) -> Option<usize> {
        let (r, c) = self.coords(p);
        let (dr, dc) = d.displacement();
        let nr = r.checked_add_signed(dr)?;
        let nc = c.checked_add_signed(dc)?;
        (nr < self.height && nc < self.width).then(|| self.index(nr, nc))
    }
}

/// `A^δ`: entry `(i, j)` is 1 when pixel `j` is pixel `i` displaced by `d`.
pub fn pixel_adjacency<T: Scalar>(shape: GridShape, d: Direction) -> SparseMatrix<T> {
    let n = shape.n_pixels();
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let mut col_idx = Vec::with_capacity(n);
    for p in 0..n {
        if let Some(q) = shape.neighbor(p, d) {
            col_idx.push(q);
        }
        row_ptr.push(col_idx.len());
    }
    let values = vec![T::one(); col_idx.len()];
    SparseMatrix::from_csr(n, n, row_ptr, col_idx, values).expect("grid adjacency is well-formed")
}

/// Degree matrix with entries `max(row sum, eps)`.
pub fn degree<T: Scalar>(a: &SparseMatrix<T>, eps: T) -> Result<DiagonalMatrix<T>> {
    if !(eps > T::zero()) {
        return Err(Error::invalid("degree clamp eps must be positive"));
    }
    if a.rows() != a.cols() {
        return Err(Error::shape(
            "degree",
            "square matrix",
            format!("{}x{}", a.rows(), a.cols()),
        ));
    }
    DiagonalMatrix::new(a.row_sums().into_iter().map(|s| s.max(eps)).collect())
}

/// The nine pixel adjacency matrices of one grid, indexed by [`Direction`].
#[derive(Clone, Debug)]
pub struct DirectionalAdjacency<T = f32> {
    shape: GridShape,
    mats: Vec<SparseMatrix<T>>,
}

impl<T: Scalar> DirectionalAdjacency<T> {
    pub fn new(shape: GridShape) -> Self {
        Self {
            shape,
            mats: Direction::ALL
                .iter()
                .map(|&d| pixel_adjacency(shape, d))
                .collect(),
        }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn get(&self, d: Direction) -> &SparseMatrix<T> {
        &self.mats[d.index()]
    }

    /// `D⁻¹A` for every direction, in canonical order.
    pub fn normalized(&self, eps: T) -> Result<Vec<SparseMatrix<T>>> {
        self.mats
            .iter()
            .map(|a| degree(a, eps)?.inverse_times(a))
            .collect()
    }
}
