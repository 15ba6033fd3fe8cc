use std::collections::BTreeMap;

use crate::clustering::AssignmentMatrix;
use crate::error::{Error, Result};
use crate::grid::{degree, Direction, DirectionalAdjacency};
use crate::linalg::{sp_coarsen, DiagonalMatrix, SparseMatrix};
use crate::scalar::Scalar;

/// Connection weights below this are treated as noise and dropped.
pub const CONNECTION_THRESHOLD: f64 = 1e-7;

/// Which refinements to apply to coarsened adjacency, and the degree clamp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineOptions {
    pub noise_cancel: bool,
    pub max_direction: bool,
    pub eps: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            noise_cancel: true,
            max_direction: true,
            eps: crate::grid::DEFAULT_DEGREE_EPS,
        }
    }
}

/// Nine group-level adjacency matrices `Â^δ`, plus the degree-normalized
/// operators `(D̂^δ)⁻¹ Â^δ` once refinement is finished.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupAdjacencySet<T = f32> {
    mats: Vec<SparseMatrix<T>>,
    refined: Option<Refined<T>>,
}

#[derive(Clone, Debug, PartialEq)]
struct Refined<T> {
    degrees: Vec<DiagonalMatrix<T>>,
    operators: Vec<SparseMatrix<T>>,
}

impl<T: Scalar> GroupAdjacencySet<T> {
    /// Unrefined set from nine square matrices in [`Direction::ALL`] order.
    pub fn from_matrices(mats: Vec<SparseMatrix<T>>) -> Result<Self> {
        if mats.len() != 9 {
            return Err(Error::shape("GroupAdjacencySet", 9, mats.len()));
        }
        let n = mats[0].rows();
        if mats.iter().any(|m| m.rows() != n || m.cols() != n) {
            return Err(Error::invalid(
                "group adjacency matrices must share one square shape",
            ));
        }
        Ok(Self {
            mats,
            refined: None,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.mats[0].rows()
    }

    pub fn get(&self, d: Direction) -> &SparseMatrix<T> {
        &self.mats[d.index()]
    }

    pub fn matrices(&self) -> &[SparseMatrix<T>] {
        &self.mats
    }

    pub fn nnz(&self, d: Direction) -> usize {
        self.mats[d.index()].nnz()
    }

    pub fn is_refined(&self) -> bool {
        self.refined.is_some()
    }

    pub fn degrees(&self) -> Result<&[DiagonalMatrix<T>]> {
        self.refined
            .as_ref()
            .map(|r| r.degrees.as_slice())
            .ok_or(Error::Unrefined)
    }

    /// `(D̂^δ)⁻¹ Â^δ` for every direction; only available after refinement.
    pub fn operators(&self) -> Result<&[SparseMatrix<T>]> {
        self.refined
            .as_ref()
            .map(|r| r.operators.as_slice())
            .ok_or(Error::Unrefined)
    }

    /// Computes ε-clamped degrees from the current matrices and freezes the set.
    pub fn finalize(mut self, eps: f64) -> Result<Self> {
        let eps = T::of(eps);
        let degrees = self
            .mats
            .iter()
            .map(|a| degree(a, eps))
            .collect::<Result<Vec<_>>>()?;
        let operators = degrees
            .iter()
            .zip(&self.mats)
            .map(|(d, a)| d.inverse_times(a))
            .collect::<Result<Vec<_>>>()?;
        self.refined = Some(Refined { degrees, operators });
        Ok(self)
    }

    fn with_mats(mats: Vec<SparseMatrix<T>>) -> Self {
        Self {
            mats,
            refined: None,
        }
    }

    pub fn cast<U: Scalar>(&self) -> GroupAdjacencySet<U> {
        GroupAdjacencySet {
            mats: self.mats.iter().map(SparseMatrix::cast).collect(),
            refined: self.refined.as_ref().map(|r| Refined {
                degrees: r
                    .degrees
                    .iter()
                    .map(|d| {
                        DiagonalMatrix::new(
                            d.entries()
                                .iter()
                                .map(|v| U::of(v.to_f64_lossy()))
                                .collect(),
                        )
                        .expect("positive degrees stay positive")
                    })
                    .collect(),
                operators: r.operators.iter().map(SparseMatrix::cast).collect(),
            }),
        }
    }
}

/// `Â^δ = Sᵀ A^δ S` for all nine directions, using the raw soft assignment.
pub fn coarsen_all<T: Scalar>(
    s: &AssignmentMatrix<T>,
    pixel_adj: &DirectionalAdjacency<T>,
) -> Result<GroupAdjacencySet<T>> {
    let n = pixel_adj.shape().n_pixels();
    if s.n_pixels() != n {
        return Err(Error::shape("coarsen_all", n, s.n_pixels()));
    }
    let mats = Direction::ALL
        .iter()
        .map(|&d| sp_coarsen(s.as_sparse(), pixel_adj.get(d)))
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupAdjacencySet::with_mats(mats))
}

/// Drops weights below [`CONNECTION_THRESHOLD`], resets the self loop to the
/// identity and clears the diagonals of the other directions.
pub fn postprocess<T: Scalar>(g: &GroupAdjacencySet<T>) -> GroupAdjacencySet<T> {
    let n = g.n_groups();
    let threshold = T::of(CONNECTION_THRESHOLD);
    let mats = Direction::ALL
        .iter()
        .map(|&d| {
            if d.is_self() {
                SparseMatrix::identity(n)
            } else {
                g.get(d).filter(|r, c, v| r != c && v >= threshold)
            }
        })
        .collect();
    GroupAdjacencySet::with_mats(mats)
}

/// `Â^δ ← max(0, Â^δ − Â^δ̄)` for every non-self direction (all computed from
/// the incoming matrices), followed by [`postprocess`].
pub fn noise_cancel<T: Scalar>(g: &GroupAdjacencySet<T>) -> GroupAdjacencySet<T> {
    let mats = Direction::ALL
        .iter()
        .map(|&d| {
            if d.is_self() {
                g.get(d).clone()
            } else {
                g.get(d)
                    .sub_clamped(g.get(d.opposite()))
                    .expect("directions share one shape")
            }
        })
        .collect();
    postprocess(&GroupAdjacencySet::with_mats(mats))
}

/// For every ordered pair of distinct groups keep only the non-self direction
/// with the largest weight; ties go to the earlier direction in canonical order.
pub fn max_direction<T: Scalar>(g: &GroupAdjacencySet<T>) -> GroupAdjacencySet<T> {
    let n = g.n_groups();
    let mut keep: Vec<Vec<(usize, usize, T)>> = vec![Vec::new(); 9];
    for i in 0..n {
        let mut best: BTreeMap<usize, (Direction, T)> = BTreeMap::new();
        for d in Direction::ALL.iter().filter(|d| !d.is_self()) {
            for (j, v) in g.get(*d).row(i) {
                if j == i {
                    continue;
                }
                best.entry(j)
                    .and_modify(|e| {
                        if v > e.1 {
                            *e = (*d, v);
                        }
                    })
                    .or_insert((*d, v));
            }
        }
        for (j, (d, v)) in best {
            keep[d.index()].push((i, j, v));
        }
    }
    let mats = Direction::ALL
        .iter()
        .zip(keep)
        .map(|(&d, trip)| {
            if d.is_self() {
                g.get(d).clone()
            } else {
                SparseMatrix::from_triplets(n, n, trip).expect("entries come from valid matrices")
            }
        })
        .collect();
    GroupAdjacencySet::with_mats(mats)
}

/// Applies the enabled refinements, then computes degrees.
pub fn refine<T: Scalar>(
    g: &GroupAdjacencySet<T>,
    opts: RefineOptions,
) -> Result<GroupAdjacencySet<T>> {
    let mut out = if opts.noise_cancel {
        noise_cancel(g)
    } else {
        postprocess(g)
    };
    if opts.max_direction {
        out = max_direction(&out);
    }
    out.finalize(opts.eps)
}
