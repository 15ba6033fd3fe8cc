//! Importance estimation, cluster-center sampling and differentiable SLIC.
//!
//! The pipeline is `importance_map` → optional `modulate_importance` with an
//! attention map → `sample_centers` → [`CenterSet::from_seeds`] → `diff_slic`,
//! which yields the soft pixel-to-group [`AssignmentMatrix`].

mod importance;
mod sampling;
mod slic;

pub use importance::{
    attention_object, attention_uncertainty, importance_map, modulate_importance, AttentionMap,
    ImportanceMap,
};
pub use sampling::{sample_centers, sample_centers_with};
pub(crate) use slic::slic_dim_weights;
pub use slic::{
    candidate_logits, diff_slic, diff_slic_observed, nearest_candidates, pixel_positions,
    update_centers, Candidates, CenterSet, SlicOutput, EMPTY_GROUP_MASS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridShape;
use crate::linalg::{DenseMatrix, SparseMatrix};
use crate::scalar::Scalar;

/// Center sampling strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampler {
    UniformRandom,
    Importance,
    TopkRandom,
}

impl std::str::FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-random" | "uniform" | "random" => Ok(Sampler::UniformRandom),
            "importance" => Ok(Sampler::Importance),
            "topk-random" | "topk" => Ok(Sampler::TopkRandom),
            other => Err(Error::invalid(format!("unknown sampler `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Groups per pixel; the group count is `max(1, round(ratio · N_pix))`.
    pub downsample_ratio: f64,
    pub iterations: usize,
    pub temperature: f64,
    /// Weight λ of the position part of the SLIC distance.
    pub position_weight: f64,
    /// Number of spatially nearest centers each pixel may be assigned to.
    pub candidates_per_pixel: usize,
    pub sampler: Sampler,
    /// κ: the top-k sampler draws `κ · n` uniform candidates.
    pub oversample: usize,
    /// β: fraction of centers the top-k sampler takes by importance.
    pub topk_fraction: f64,
    /// α: weight of the attention map when modulating importance.
    pub focus_alpha: f64,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            downsample_ratio: 1.0 / 64.0,
            iterations: 5,
            temperature: 0.05,
            position_weight: 1.0,
            candidates_per_pixel: 9,
            sampler: Sampler::TopkRandom,
            oversample: 3,
            topk_fraction: 0.75,
            focus_alpha: 10.0,
            seed: 0,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if !(self.downsample_ratio > 0.0 && self.downsample_ratio <= 1.0) {
            return bad("downsample_ratio must lie in (0, 1]");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad("temperature must be positive");
        }
        if !(self.position_weight >= 0.0) {
            return bad("position_weight must be non-negative");
        }
        if self.candidates_per_pixel == 0 {
            return bad("candidates_per_pixel must be at least 1");
        }
        if self.oversample == 0 {
            return bad("oversample must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.topk_fraction) {
            return bad("topk_fraction must lie in [0, 1]");
        }
        if !(self.focus_alpha >= 0.0) {
            return bad("focus_alpha must be non-negative");
        }
        Ok(())
    }

    pub fn n_groups(&self, n_pixels: usize) -> usize {
        ((self.downsample_ratio * n_pixels as f64).round() as usize).clamp(1, n_pixels.max(1))
    }
}

/// Parses `"a/b"` or a decimal into a ratio.
pub fn parse_ratio(s: &str) -> Result<f64> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad ratio `{s}`")))?;
            let b: f64 = b
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad ratio `{s}`")))?;
            a / b
        }
        None => s
            .parse()
            .map_err(|_| Error::invalid(format!("bad ratio `{s}`")))?,
    };
    if !(v > 0.0 && v <= 1.0) {
        return Err(Error::invalid(format!("ratio `{s}` outside (0, 1]")));
    }
    Ok(v)
}

/// Soft pixel-to-group assignment `S` (`N_pix × N_grp`), non-negative with
/// rows summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentMatrix<T = f32> {
    s: SparseMatrix<T>,
}

impl<T: Scalar> AssignmentMatrix<T> {
    /// Validates non-negativity and unit row sums (to 1e-4).
    pub fn from_sparse(s: SparseMatrix<T>) -> Result<Self> {
        if let Some((r, c, v)) = s.triplets().into_iter().find(|t| t.2 < T::zero()) {
            return Err(Error::NegativeEntry {
                row: r,
                col: c,
                value: v.to_f64_lossy(),
            });
        }
        for (r, sum) in s.row_sums().into_iter().enumerate() {
            if (sum.to_f64_lossy() - 1.0).abs() > 1e-4 {
                return Err(Error::invalid(format!(
                    "assignment row {r} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self { s })
    }

    pub(crate) fn from_sparse_unchecked(s: SparseMatrix<T>) -> Self {
        Self { s }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            s: SparseMatrix::identity(n),
        }
    }

    /// Hard assignment from per-pixel group labels.
    pub fn from_labels(labels: &[usize], n_groups: usize) -> Result<Self> {
        let trip = labels
            .iter()
            .enumerate()
            .map(|(p, &g)| (p, g, T::one()))
            .collect();
        Self::from_sparse(SparseMatrix::from_triplets(labels.len(), n_groups, trip)?)
    }

    pub fn as_sparse(&self) -> &SparseMatrix<T> {
        &self.s
    }

    pub fn n_pixels(&self) -> usize {
        self.s.rows()
    }

    pub fn n_groups(&self) -> usize {
        self.s.cols()
    }

    pub fn nnz(&self) -> usize {
        self.s.nnz()
    }

    /// Group with the largest weight for each pixel (lowest index on ties).
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.s.rows())
            .map(|r| {
                let mut best: Option<(usize, T)> = None;
                for (c, v) in self.s.row(r) {
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((c, v));
                    }
                }
                best.map_or(0, |(c, _)| c)
            })
            .collect()
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        self.s.to_dense()
    }

    pub fn cast<U: Scalar>(&self) -> AssignmentMatrix<U> {
        AssignmentMatrix { s: self.s.cast() }
    }
}

/// Runs importance → (optional focus) → sampling → differentiable SLIC.
pub fn run_clustering<T: Scalar>(
    x: &DenseMatrix<T>,
    shape: GridShape,
    cfg: &ClusterConfig,
    attention: Option<&AttentionMap>,
) -> Result<SlicOutput<T>> {
    cfg.validate()?;
    let imp = importance_map(x, shape)?;
    let imp = match attention {
        Some(attn) => modulate_importance(&imp, attn, cfg.focus_alpha)?,
        None => imp,
    };
    let n = cfg.n_groups(shape.n_pixels());
    let seeds = sample_centers(&imp, n, cfg)?;
    let centers = CenterSet::from_seeds(x, shape, &seeds)?;
    diff_slic(x, shape, &centers, cfg)
}
