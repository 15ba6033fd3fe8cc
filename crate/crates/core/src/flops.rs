//! Analytic floating-point operation counts for a regular 3×3 convolution
//! stack and for the HG-Conv module, taken from the actual sparsity of a
//! given assignment and group adjacency.
//!
//! Conventions: a multiply-accumulate is 2 FLOPs, a sparse-times-dense
//! product costs `2·nnz` per output column, batch norm plus ReLU costs 5
//! FLOPs per element. Clustering is counted separately and kept out of the
//! ratio.

use std::fmt;

use crate::clustering::{AssignmentMatrix, ClusterConfig};
use crate::error::{Error, Result};
use crate::grid::{pixel_adjacency, Direction, GridShape};
use crate::hgconv::GroupAdjacencySet;
use crate::scalar::Scalar;

/// `2 · 9 · h · w · cin · cout`: stride 1, zero padding.
pub fn flops_conv3x3(h: usize, w: usize, cin: usize, cout: usize) -> Result<u64> {
    if h == 0 || w == 0 || cin == 0 || cout == 0 {
        return Err(Error::invalid(format!(
            "convolution dimensions must be positive, got {h}x{w}, {cin} -> {cout}"
        )));
    }
    Ok(18 * (h * w) as u64 * cin as u64 * cout as u64)
}

/// Per-layer counts of the group convolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerFlops {
    pub cin: usize,
    pub cout: usize,
    /// `2 · nnz(Â^δ) · cin`, indexed by direction.
    pub adjacency: [u64; 9],
    /// `2 · N_grp · cin · cout`, indexed by direction.
    pub kernel: [u64; 9],
    /// `5 · N_grp · cout`.
    pub bn_relu: u64,
}

impl LayerFlops {
    pub fn total(&self) -> u64 {
        self.adjacency.iter().sum::<u64>() + self.kernel.iter().sum::<u64>() + self.bn_relu
    }
}

/// Regular-convolution cost against the HG-Conv breakdown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlopsReport {
    pub n_pixels: usize,
    pub n_groups: usize,
    pub assignment_nnz: usize,
    /// The same `L` layers as dense 3×3 convolutions on the pixel grid.
    pub regular: u64,
    pub pooling: u64,
    /// Building the row- and column-normalized assignment, once.
    pub normalization: u64,
    pub layers: Vec<LayerFlops>,
    pub unpooling: u64,
    /// Reported separately, never part of [`FlopsReport::hg_total`].
    pub clustering: Option<u64>,
}

impl FlopsReport {
    pub fn hg_total(&self) -> u64 {
        self.pooling
            + self.normalization
            + self.layers.iter().map(LayerFlops::total).sum::<u64>()
            + self.unpooling
    }

    /// HG-Conv FLOPs over regular-convolution FLOPs.
    pub fn ratio(&self) -> f64 {
        self.hg_total() as f64 / self.regular as f64
    }

    pub fn with_clustering(mut self, flops: u64) -> Self {
        self.clustering = Some(flops);
        self
    }
}

impl fmt::Display for FlopsReport {
    /// One `key: value` line per quantity.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "pixels: {}", self.n_pixels)?;
        writeln!(f, "groups: {}", self.n_groups)?;
        writeln!(f, "assignment_nnz: {}", self.assignment_nnz)?;
        writeln!(f, "regular_conv: {}", self.regular)?;
        writeln!(f, "hg_pooling: {}", self.pooling)?;
        writeln!(f, "hg_normalization: {}", self.normalization)?;
        for (i, l) in self.layers.iter().enumerate() {
            for d in Direction::ALL {
                writeln!(
                    f,
                    "hg_layer{i}_adjacency_{}: {}",
                    d.name(),
                    l.adjacency[d.index()]
                )?;
            }
            for d in Direction::ALL {
                writeln!(
                    f,
                    "hg_layer{i}_kernel_{}: {}",
                    d.name(),
                    l.kernel[d.index()]
                )?;
            }
            writeln!(f, "hg_layer{i}_bn_relu: {}", l.bn_relu)?;
            writeln!(f, "hg_layer{i}_total: {}", l.total())?;
        }
        writeln!(f, "hg_unpooling: {}", self.unpooling)?;
        writeln!(f, "hg_total: {}", self.hg_total())?;
        writeln!(f, "ratio: {:.6}", self.ratio())?;
        match self.clustering {
            Some(c) => write!(f, "clustering_excluded_from_ratio: {c}"),
            None => write!(f, "clustering_excluded_from_ratio: not counted"),
        }
    }
}

/// Counts for `layers` HG layers (`cin → cout`, then `cout → cout`) on the
/// given assignment and refined adjacency, against the same stack of dense
/// 3×3 convolutions over all pixels.
pub fn flops_hg_module<T: Scalar>(
    s: &AssignmentMatrix<T>,
    g: &GroupAdjacencySet<T>,
    cin: usize,
    cout: usize,
    layers: usize,
) -> Result<FlopsReport> {
    if !g.is_refined() {
        return Err(Error::Unrefined);
    }
    if g.n_groups() != s.n_groups() {
        return Err(Error::shape(
            "flops_hg_module groups",
            s.n_groups(),
            g.n_groups(),
        ));
    }
    if layers == 0 {
        return Err(Error::invalid("at least one layer is required"));
    }
    let n_pix = s.n_pixels();
    let n_grp = s.n_groups() as u64;
    let nnz_s = s.nnz() as u64;
    let mut regular = 0;
    let mut per_layer = Vec::with_capacity(layers);
    for l in 0..layers {
        let c_in = if l == 0 { cin } else { cout };
        regular += flops_conv3x3(1, n_pix, c_in, cout)?;
        let mut adjacency = [0; 9];
        let mut kernel = [0; 9];
        for d in Direction::ALL {
            adjacency[d.index()] = 2 * g.nnz(d) as u64 * c_in as u64;
            kernel[d.index()] = 2 * n_grp * c_in as u64 * cout as u64;
        }
        per_layer.push(LayerFlops {
            cin: c_in,
            cout,
            adjacency,
            kernel,
            bn_relu: 5 * n_grp * cout as u64,
        });
    }
    Ok(FlopsReport {
        n_pixels: n_pix,
        n_groups: s.n_groups(),
        assignment_nnz: s.nnz(),
        regular,
        pooling: 2 * nnz_s * cin as u64,
        normalization: 2 * nnz_s,
        layers: per_layer,
        unpooling: 2 * nnz_s * cout as u64,
        clustering: None,
    })
}

/// Cost of one clustering run: the importance map, then per iteration the
/// candidate distances, softmax and center update over `C + 2` dimensions.
pub fn flops_clustering(
    shape: GridShape,
    channels: usize,
    n_groups: usize,
    cfg: &ClusterConfig,
) -> u64 {
    let n = shape.n_pixels() as u64;
    let dims = channels as u64 + 2;
    let pairs: u64 = Direction::ALL
        .iter()
        .filter(|d| !d.is_self())
        .map(|&d| pixel_adjacency::<f32>(shape, d).nnz() as u64)
        .sum();
    let importance = pairs * (3 * channels as u64 + 1) + n;
    let nk = n * cfg.candidates_per_pixel.min(n_groups).max(1) as u64;
    let logits = nk * (4 * dims + 1);
    let softmax = 3 * nk;
    let update = 2 * nk + 2 * nk * dims;
    importance + cfg.iterations as u64 * (logits + softmax + update)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::clustered_grid;
    use crate::grid::DirectionalAdjacency;
    use crate::hgconv::{coarsen_all, refine, RefineOptions};

    #[test]
    fn conv_counts() {
        assert_eq!(flops_conv3x3(64, 64, 64, 64).unwrap(), 301_989_888);
        assert_eq!(flops_conv3x3(1, 1, 1, 1).unwrap(), 18);
        assert!(flops_conv3x3(4, 4, 3, 0).is_err());
        assert!(flops_conv3x3(0, 4, 3, 1).is_err());
    }

    fn identity_fixture(h: usize, w: usize) -> (AssignmentMatrix<f32>, GroupAdjacencySet<f32>) {
        let shape = GridShape::new(h, w).unwrap();
        let s = AssignmentMatrix::identity(shape.n_pixels());
        let g = refine(
            &coarsen_all(&s, &DirectionalAdjacency::new(shape)).unwrap(),
            RefineOptions::default(),
        )
        .unwrap();
        (s, g)
    }

    #[test]
    fn identity_grouping_costs_at_least_the_pixel_conv() {
        let (s, g) = identity_fixture(6, 6);
        let r = flops_hg_module(&s, &g, 4, 4, 1).unwrap();
        assert_eq!(r.layers[0].kernel.iter().sum::<u64>(), r.regular);
        assert!(r.hg_total() >= r.regular);
        assert!(r.ratio() > 1.0);
    }

    #[test]
    fn totals_are_sums_of_parts() {
        let (s, g) = identity_fixture(5, 7);
        let r = flops_hg_module(&s, &g, 3, 8, 3).unwrap();
        let mut sum = r.pooling + r.normalization + r.unpooling;
        for l in &r.layers {
            sum += l.adjacency.iter().sum::<u64>() + l.kernel.iter().sum::<u64>() + l.bn_relu;
        }
        assert_eq!(r.hg_total(), sum);
        assert_eq!(r.regular, 18 * 35 * 3 * 8 + 2 * 18 * 35 * 8 * 8);
        assert_eq!(r.layers[1].cin, 8);
    }

    #[test]
    fn pooling_is_linear_in_input_channels() {
        let (s, g) = identity_fixture(4, 4);
        let a = flops_hg_module(&s, &g, 5, 2, 1).unwrap();
        let b = flops_hg_module(&s, &g, 10, 2, 1).unwrap();
        assert_eq!(b.pooling, 2 * a.pooling);
    }

    #[test]
    fn unrefined_adjacency_is_rejected() {
        let shape = GridShape::new(3, 3).unwrap();
        let s = AssignmentMatrix::<f32>::identity(9);
        let raw = coarsen_all(&s, &DirectionalAdjacency::new(shape)).unwrap();
        assert!(matches!(
            flops_hg_module(&s, &raw, 1, 1, 1),
            Err(Error::Unrefined)
        ));
    }

    #[test]
    fn module_scale_reduction_and_monotone_ratio() {
        let shape = GridShape::new(64, 64).unwrap();
        let mut ratios = Vec::new();
        for denom in [16.0, 64.0, 256.0] {
            let cfg = ClusterConfig {
                downsample_ratio: 1.0 / denom,
                seed: 3,
                ..ClusterConfig::default()
            };
            let (_, s, g) = clustered_grid(shape, 64, &cfg).unwrap();
            let r = flops_hg_module(&s, &g, 64, 64, 3).unwrap();
            ratios.push(r.ratio());
        }
        assert!(ratios[1] <= 0.10, "{ratios:?}");
        assert!(ratios.windows(2).all(|w| w[1] <= w[0]), "{ratios:?}");
    }

    #[test]
    fn report_lists_every_part() {
        let (s, g) = identity_fixture(2, 2);
        let shape = GridShape::new(2, 2).unwrap();
        let clustering = flops_clustering(shape, 1, 4, &ClusterConfig::default());
        let text = flops_hg_module(&s, &g, 1, 1, 1)
            .unwrap()
            .with_clustering(clustering)
            .to_string();
        assert!(text.contains("hg_layer0_adjacency_self: 8"));
        assert!(text.contains(&format!("clustering_excluded_from_ratio: {clustering}")));
        assert!(text.lines().all(|l| l.contains(": ")));
    }
}
