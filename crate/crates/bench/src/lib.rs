//! Seeded inputs shared by the criterion benches.

use hgconv_core::clustering::{AssignmentMatrix, ClusterConfig};
use hgconv_core::fixtures::clustered_grid;
use hgconv_core::hgconv::GroupAdjacencySet;
use hgconv_core::rng::rng_from_seed;
use hgconv_core::{DenseMatrix, GridShape, KernelSet};

/// A `side × side` grid with `channels` features, clustered at `ratio`.
pub struct Workload {
    pub shape: GridShape,
    pub x: DenseMatrix<f32>,
    pub s: AssignmentMatrix<f32>,
    pub groups: GroupAdjacencySet<f32>,
    pub kernels: KernelSet<f32>,
    pub cluster: ClusterConfig,
}

pub fn workload(side: usize, channels: usize, ratio: f64) -> Workload {
    let shape = GridShape::new(side, side).expect("positive side");
    let cluster = ClusterConfig {
        downsample_ratio: ratio,
        seed: 3,
        ..ClusterConfig::default()
    };
    let (x, s, groups) = clustered_grid(shape, channels, &cluster).expect("valid fixture");
    let bound = 1.0 / ((9 * channels) as f64).sqrt();
    let kernels = KernelSet::random(channels, channels, bound, &mut rng_from_seed(17));
    Workload {
        shape,
        x,
        s,
        groups,
        kernels,
        cluster,
    }
}
