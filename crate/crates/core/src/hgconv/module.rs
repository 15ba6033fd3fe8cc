use rand::Rng;

use super::GroupAdjacencySet;
use crate::clustering::AssignmentMatrix;
use crate::error::{Error, Result};
use crate::linalg::{col_normalize, row_normalize, spmm, DenseMatrix};
use crate::refconv::{directional_sum, KernelSet};
use crate::scalar::Scalar;

pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

/// Group features as assignment-weighted means: `S̄ᵀ X`.
pub fn pool<T: Scalar>(s: &AssignmentMatrix<T>, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if x.rows() != s.n_pixels() {
        return Err(Error::shape("pool", s.n_pixels(), x.rows()));
    }
    spmm(&col_normalize(s.as_sparse())?.transpose(), x)
}

/// Pixel features as convex combinations of group features: `S̃ Ẑ`.
pub fn unpool<T: Scalar>(s: &AssignmentMatrix<T>, zhat: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if zhat.rows() != s.n_groups() {
        return Err(Error::shape("unpool", s.n_groups(), zhat.rows()));
    }
    spmm(&row_normalize(s.as_sparse())?, zhat)
}

/// `Σ_δ (D̂^δ)⁻¹ Â^δ Ẑ W_δ` over a refined group adjacency.
pub fn group_conv<T: Scalar>(
    g: &GroupAdjacencySet<T>,
    zhat: &DenseMatrix<T>,
    k: &KernelSet<T>,
) -> Result<DenseMatrix<T>> {
    if zhat.rows() != g.n_groups() {
        return Err(Error::shape("group_conv", g.n_groups(), zhat.rows()));
    }
    directional_sum(g.operators()?, zhat, k)
}

/// Per-channel batch-norm parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BNParams<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
}

impl<T: Scalar> BNParams<T> {
    /// γ = 1, β = 0, running mean 0, running variance 1.
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: T::of(DEFAULT_BN_EPS),
            momentum: T::of(DEFAULT_BN_MOMENTUM),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn cast<U: Scalar>(&self) -> BNParams<U> {
        let c = |v: &[T]| v.iter().map(|x| U::of(x.to_f64_lossy())).collect();
        BNParams {
            gamma: c(&self.gamma),
            beta: c(&self.beta),
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
            eps: U::of(self.eps.to_f64_lossy()),
            momentum: U::of(self.momentum.to_f64_lossy()),
        }
    }

    /// Folds one batch's statistics into the running estimates. `var` is the
    /// biased batch variance; the running estimate uses the unbiased one.
    pub fn update_running(&mut self, mean: &[T], var: &[T], batch: usize) {
        let m = self.momentum;
        let correction = if batch > 1 {
            T::of(batch as f64 / (batch - 1) as f64)
        } else {
            T::one()
        };
        for c in 0..self.channels() {
            self.running_mean[c] = (T::one() - m) * self.running_mean[c] + m * mean[c];
            self.running_var[c] = (T::one() - m) * self.running_var[c] + m * var[c] * correction;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with the statistics of the current nodes and update running stats.
    Train,
    /// Normalize with the stored running statistics.
    Eval,
}

/// Per-channel mean and biased variance over the rows of `x`.
pub(crate) fn batch_stats<T: Scalar>(x: &DenseMatrix<T>) -> (Vec<T>, Vec<T>) {
    let n = T::of(x.rows() as f64);
    let mut mean = vec![T::zero(); x.cols()];
    for r in 0..x.rows() {
        for (m, &v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m = *m / n;
    }
    let mut var = vec![T::zero(); x.cols()];
    for r in 0..x.rows() {
        for ((s, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut var {
        *s = *s / n;
    }
    (mean, var)
}

/// `γ (x − μ) / sqrt(σ² + eps) + β`, channel by channel.
pub(crate) fn bn_affine<T: Scalar>(
    x: &DenseMatrix<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> DenseMatrix<T> {
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    DenseMatrix::from_fn(x.rows(), x.cols(), |r, c| {
        gamma[c] * ((x.get(r, c) - mean[c]) * inv_std[c]) + beta[c]
    })
}

pub(crate) fn relu<T: Scalar>(x: &DenseMatrix<T>) -> DenseMatrix<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Group convolution followed by batch norm and ReLU.
pub fn hg_layer<T: Scalar>(
    g: &GroupAdjacencySet<T>,
    z: &DenseMatrix<T>,
    k: &KernelSet<T>,
    bn: &mut BNParams<T>,
    mode: BnMode,
) -> Result<DenseMatrix<T>> {
    let conv = group_conv(g, z, k)?;
    if bn.channels() != conv.cols() {
        return Err(Error::shape(
            "batch norm channels",
            conv.cols(),
            bn.channels(),
        ));
    }
    let normalized = match mode {
        BnMode::Train => {
            let (mean, var) = batch_stats(&conv);
            let y = bn_affine(&conv, &bn.gamma, &bn.beta, &mean, &var, bn.eps);
            bn.update_running(&mean, &var, conv.rows());
            y
        }
        BnMode::Eval => bn_affine(
            &conv,
            &bn.gamma,
            &bn.beta,
            &bn.running_mean,
            &bn.running_var,
            bn.eps,
        ),
    };
    Ok(relu(&normalized))
}

/// One layer of the module. `bn = None` bypasses batch norm and ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct HgLayer<T = f32> {
    pub kernels: KernelSet<T>,
    pub bn: Option<BNParams<T>>,
}

/// `L` stacked HG layers between pooling and unpooling.
#[derive(Clone, Debug, PartialEq)]
pub struct HGConvModule<T = f32> {
    layers: Vec<HgLayer<T>>,
}

impl<T: Scalar> HGConvModule<T> {
    pub fn new(layers: Vec<HgLayer<T>>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].kernels.cout() != pair[1].kernels.cin() {
                return Err(Error::invalid("layer channel counts do not chain"));
            }
        }
        for l in &layers {
            if l.bn
                .as_ref()
                .is_some_and(|bn| bn.channels() != l.kernels.cout())
            {
                return Err(Error::invalid(
                    "batch-norm width differs from kernel output",
                ));
            }
        }
        Ok(Self { layers })
    }

    /// `layers` BN-ReLU layers with weights uniform in `±1/sqrt(9·cin)`.
    pub fn random<R: Rng + ?Sized>(cin: usize, cout: usize, layers: usize, rng: &mut R) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let c_in = if l == 0 { cin } else { cout };
                HgLayer {
                    kernels: KernelSet::random(c_in, cout, 1.0 / ((9 * c_in) as f64).sqrt(), rng),
                    bn: Some(BNParams::identity(cout)),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[HgLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [HgLayer<T>] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.kernels.parameter_count() + l.bn.as_ref().map_or(0, |b| 2 * b.channels()))
            .sum()
    }
}

/// Pool through `S̄ᵀ`, run every layer on the group graph, unpool through `S̃`.
pub fn hg_module_forward<T: Scalar>(
    x: &DenseMatrix<T>,
    s: &AssignmentMatrix<T>,
    g: &GroupAdjacencySet<T>,
    m: &mut HGConvModule<T>,
    mode: BnMode,
) -> Result<DenseMatrix<T>> {
    if g.n_groups() != s.n_groups() {
        return Err(Error::shape(
            "hg_module_forward groups",
            s.n_groups(),
            g.n_groups(),
        ));
    }
    let mut z = pool(s, x)?;
    for layer in &mut m.layers {
        z = match &mut layer.bn {
            Some(bn) => hg_layer(g, &z, &layer.kernels, bn, mode)?,
            None => group_conv(g, &z, &layer.kernels)?,
        };
    }
    unpool(s, &z)
}
