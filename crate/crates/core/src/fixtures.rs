//! Seeded fixtures shared by tests, benches and the CLI verification commands.

use rand::Rng;

use crate::clustering::{run_clustering, AssignmentMatrix, ClusterConfig};
use crate::error::Result;
use crate::grid::{DirectionalAdjacency, GridShape};
use crate::hgconv::{coarsen_all, refine, GroupAdjacencySet, RefineOptions};
use crate::linalg::{DenseMatrix, SparseMatrix};
use crate::rng::substream;
use crate::scalar::Scalar;

/// Uniform random features in `[lo, hi)`.
pub fn random_features<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> DenseMatrix<T> {
    DenseMatrix::from_fn(rows, cols, |_, _| T::of(rng.random_range(lo..hi)))
}

/// Soft assignment where every pixel spreads random positive weight over up
/// to `k` random groups. Every group receives at least one pixel when
/// `n_pixels >= n_groups`.
pub fn random_soft_assignment<T: Scalar, R: Rng + ?Sized>(
    n_pixels: usize,
    n_groups: usize,
    k: usize,
    rng: &mut R,
) -> Result<AssignmentMatrix<T>> {
    let k = k.clamp(1, n_groups);
    let mut trip = Vec::with_capacity(n_pixels * k);
    for p in 0..n_pixels {
        let mut groups = rand::seq::index::sample(rng, n_groups, k).into_vec();
        if p < n_groups {
            groups[0] = p;
            groups.sort_unstable();
            groups.dedup();
        }
        let w: Vec<f64> = groups.iter().map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = w.iter().sum();
        trip.extend(
            groups
                .iter()
                .zip(&w)
                .map(|(&g, &v)| (p, g, T::of(v / total))),
        );
    }
    AssignmentMatrix::from_sparse(SparseMatrix::from_triplets(n_pixels, n_groups, trip)?)
}

/// The 1×4 grid split into groups {0, 1} and {2, 3}.
pub fn two_group_row() -> (GridShape, AssignmentMatrix<f64>) {
    (
        GridShape::new(1, 4).expect("valid"),
        AssignmentMatrix::from_labels(&[0, 0, 1, 1], 2).expect("valid labels"),
    )
}

/// Uniform random features on `shape`, clustered with `cfg` and coarsened
/// into a refined group adjacency. Everything derives from `cfg.seed`.
pub fn clustered_grid(
    shape: GridShape,
    channels: usize,
    cfg: &ClusterConfig,
) -> Result<(
    DenseMatrix<f32>,
    AssignmentMatrix<f32>,
    GroupAdjacencySet<f32>,
)> {
    let mut rng = substream(cfg.seed, 0xF1C5);
    let x = random_features(shape.n_pixels(), channels, 0.0, 1.0, &mut rng);
    let s = run_clustering(&x, shape, cfg, None)?.assignment;
    let g = refine(
        &coarsen_all(&s, &DirectionalAdjacency::new(shape))?,
        RefineOptions::default(),
    )?;
    Ok((x, s, g))
}
