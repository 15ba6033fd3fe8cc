use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use super::layers::{self, LayerNodes};
use super::tape::{NodeId, Tape};
use crate::clustering::{
    diff_slic, pixel_positions, slic_dim_weights, AssignmentMatrix, Candidates, CenterSet,
    ClusterConfig,
};
use crate::error::{Error, Result};
use crate::grid::{DirectionalAdjacency, GridShape, DEFAULT_DEGREE_EPS};
use crate::hgconv::{
    coarsen_all, hg_module_forward, refine, BNParams, BnMode, GroupAdjacencySet, HGConvModule,
    HgLayer, RefineOptions,
};
use crate::linalg::DenseMatrix;
use crate::refconv::{conv_as_graph, KernelSet};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

/// A differentiable pipeline known to the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pipeline {
    /// Output is the input.
    Identity,
    /// `X W`.
    Dense,
    /// Pixel-level direction-wise convolution with the first layer's kernels.
    Conv,
    /// Soft assignment from fixed centers, then the HG module.
    Hg,
    /// Clustering unrolled over every iteration, then the HG module.
    Slic,
}

impl Pipeline {
    pub const ALL: [Pipeline; 5] = [
        Pipeline::Identity,
        Pipeline::Dense,
        Pipeline::Conv,
        Pipeline::Hg,
        Pipeline::Slic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Identity => "identity",
            Pipeline::Dense => "dense",
            Pipeline::Conv => "conv",
            Pipeline::Hg => "hg",
            Pipeline::Slic => "slic",
        }
    }

    fn uses_assignment(self) -> bool {
        matches!(self, Pipeline::Hg | Pipeline::Slic)
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    /// The empty string names the identity pipeline.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(Pipeline::Identity);
        }
        Pipeline::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnregisteredPrimitive(s.to_string()))
    }
}

/// Everything a pipeline evaluation depends on. The candidates, centers and
/// group adjacency are held fixed, so the output is a smooth function of the
/// features, weights, batch-norm affine parameters and logit offset away
/// from ReLU kinks.
#[derive(Clone, Debug)]
pub struct PipelinePoint<T = f64> {
    pub pipeline: Pipeline,
    pub shape: GridShape,
    pub x: DenseMatrix<T>,
    pub dense: DenseMatrix<T>,
    pub module: HGConvModule<T>,
    pub bn_mode: BnMode,
    pub cluster: ClusterConfig,
    /// Augmented centers: those producing the assignment, or the initial
    /// ones for [`Pipeline::Slic`].
    pub centers: DenseMatrix<T>,
    /// Candidates of the assignment ([`Pipeline::Hg`] only).
    pub candidates: Candidates,
    /// Added to the final assignment logits; zero at the evaluation point.
    pub logit_offset: DenseMatrix<T>,
    /// Refined group adjacency, treated as constant.
    pub groups: GroupAdjacencySet<T>,
}

/// Shape and seed of a generated [`PipelinePoint`].
#[derive(Clone, Debug)]
pub struct FixtureSpec {
    pub pipeline: Pipeline,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub groups: usize,
    pub layers: usize,
    pub bn_mode: BnMode,
    pub seed: u64,
}

impl Default for FixtureSpec {
    /// 2×3 grid, two channels, two groups, one layer, stored statistics.
    fn default() -> Self {
        Self {
            pipeline: Pipeline::Hg,
            height: 2,
            width: 3,
            channels: 2,
            groups: 2,
            layers: 1,
            bn_mode: BnMode::Eval,
            seed: 7,
        }
    }
}

impl PipelinePoint<f64> {
    /// Seeded fixture with batch-norm shift 2 and scale 0.5 so that every
    /// ReLU input stays well above zero.
    pub fn fixture(spec: &FixtureSpec) -> Result<Self> {
        let shape = GridShape::new(spec.height, spec.width)?;
        let n = shape.n_pixels();
        if spec.groups == 0 || spec.groups > n || spec.channels == 0 {
            return Err(Error::invalid(
                "fixture needs 1..=pixels groups and at least one channel",
            ));
        }
        let mut rng = rng_from_seed(spec.seed);
        let c = spec.channels;
        let x = DenseMatrix::from_fn(n, c, |_, _| rng.random_range(0.0..1.0));
        let dense = DenseMatrix::from_fn(c, c, |_, _| rng.random_range(-1.0..1.0));
        let layers = (0..spec.layers)
            .map(|_| {
                let kernels = KernelSet::random(c, c, 1.0 / ((9 * c) as f64).sqrt(), &mut rng);
                let mut bn = BNParams::identity(c);
                bn.gamma = vec![0.5; c];
                bn.beta = vec![2.0; c];
                bn.running_mean = (0..c).map(|_| rng.random_range(-0.2..0.2)).collect();
                bn.running_var = (0..c).map(|_| rng.random_range(0.5..1.5)).collect();
                HgLayer {
                    kernels,
                    bn: Some(bn),
                }
            })
            .collect();
        let module = HGConvModule::new(layers)?;
        let cluster = ClusterConfig {
            temperature: 0.5,
            iterations: if spec.pipeline == Pipeline::Slic {
                2
            } else {
                3
            },
            ..ClusterConfig::default()
        };
        let seeds: Vec<usize> = (0..spec.groups).map(|g| g * n / spec.groups).collect();
        let init = CenterSet::from_seeds(&x, shape, &seeds)?;
        let slic = diff_slic(&x, shape, &init, &cluster)?;
        let (centers, candidates) = if spec.pipeline == Pipeline::Slic {
            (init.augmented(), slic.candidates.clone())
        } else {
            (slic.assign_centers.augmented(), slic.candidates.clone())
        };
        let pixel_adj = DirectionalAdjacency::new(shape);
        let groups = refine(
            &coarsen_all(&slic.assignment, &pixel_adj)?,
            RefineOptions::default(),
        )?;
        let logit_offset = DenseMatrix::zeros(n, candidates.per_pixel());
        Ok(Self {
            pipeline: spec.pipeline,
            shape,
            x,
            dense,
            module,
            bn_mode: spec.bn_mode,
            cluster,
            centers,
            candidates,
            logit_offset,
            groups,
        })
    }
}

impl<T: Scalar> PipelinePoint<T> {
    /// Uniform `[-1, 1)` weights shaped like the output, used to reduce the
    /// output to the scalar `Σ readout ⊙ output`.
    pub fn random_readout(&self, seed: u64) -> DenseMatrix<T> {
        let mut rng = rng_from_seed(seed);
        DenseMatrix::from_fn(self.x.rows(), self.output_channels(), |_, _| {
            T::of(rng.random_range(-1.0..1.0))
        })
    }

    pub fn output_channels(&self) -> usize {
        match self.pipeline {
            Pipeline::Identity => self.x.cols(),
            Pipeline::Dense => self.dense.cols(),
            Pipeline::Conv => self.first_kernels().map_or(0, |k| k.cout()),
            Pipeline::Hg | Pipeline::Slic => self
                .module
                .layers()
                .last()
                .map_or(self.x.cols(), |l| l.kernels.cout()),
        }
    }

    fn first_kernels(&self) -> Result<&KernelSet<T>> {
        self.module
            .layers()
            .first()
            .map(|l| &l.kernels)
            .ok_or_else(|| Error::invalid("the conv pipeline needs at least one kernel set"))
    }
}

/// Gradients of a pipeline output with respect to its inputs and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet<T = f64> {
    pub x: DenseMatrix<T>,
    pub dense: Option<DenseMatrix<T>>,
    /// One kernel set per layer (the single pixel-level set for the conv pipeline).
    pub kernels: Vec<KernelSet<T>>,
    /// `(dγ, dβ)` per layer; `None` where batch norm is bypassed.
    pub bn: Vec<Option<(Vec<T>, Vec<T>)>>,
    /// Gradient at the pre-softmax logits of the final assignment.
    pub assignment_logits: Option<DenseMatrix<T>>,
}

impl<T: Scalar> GradientSet<T> {
    pub fn is_finite(&self) -> bool {
        let bn_ok = self
            .bn
            .iter()
            .flatten()
            .all(|(g, b)| g.iter().chain(b).all(|v| v.is_finite()));
        self.x.is_finite()
            && self.dense.as_ref().is_none_or(DenseMatrix::is_finite)
            && self
                .kernels
                .iter()
                .all(|k| k.weights().iter().all(DenseMatrix::is_finite))
            && self
                .assignment_logits
                .as_ref()
                .is_none_or(DenseMatrix::is_finite)
            && bn_ok
    }
}

#[derive(Clone, Debug)]
struct Handles {
    x: NodeId,
    dense: Option<NodeId>,
    layers: Vec<LayerNodes>,
    offset: Option<NodeId>,
}

/// A recorded pipeline evaluation.
#[derive(Clone, Debug)]
pub struct TapedPipeline<T = f64> {
    tape: Tape<T>,
    output: NodeId,
    handles: Handles,
}

impl<T: Scalar> TapedPipeline<T> {
    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    pub fn output(&self) -> &DenseMatrix<T> {
        self.tape.value(self.output)
    }

    /// Vector-Jacobian product of the output with `seed`.
    pub fn backward(&self, seed: &DenseMatrix<T>) -> Result<GradientSet<T>> {
        let grads = self.tape.backward(self.output, seed)?;
        let get = |id: NodeId| grads.get_or_zeros(&self.tape, id);
        let h = &self.handles;
        let kernels = h
            .layers
            .iter()
            .map(|l| KernelSet::new(l.kernels.iter().map(|&id| get(id)).collect()))
            .collect::<Result<Vec<_>>>()?;
        let bn = h
            .layers
            .iter()
            .map(|l| l.bn.map(|(g, b)| (get(g).into_vec(), get(b).into_vec())))
            .collect();
        Ok(GradientSet {
            x: get(h.x),
            dense: h.dense.map(get),
            kernels,
            bn,
            assignment_logits: h.offset.map(get),
        })
    }
}

/// Records `point.pipeline` on a fresh tape. The output equals
/// [`forward`] bit for bit.
pub fn forward_with_tape<T: Scalar>(point: &PipelinePoint<T>) -> Result<TapedPipeline<T>> {
    let mut tape = Tape::new();
    let x = tape.leaf(point.x.clone());
    let mut handles = Handles {
        x,
        dense: None,
        layers: Vec::new(),
        offset: None,
    };
    let output = match point.pipeline {
        Pipeline::Identity => x,
        Pipeline::Dense => {
            let w = tape.leaf(point.dense.clone());
            handles.dense = Some(w);
            tape.matmul(x, w)?
        }
        Pipeline::Conv => {
            let k = point.first_kernels()?;
            check_pixels(point)?;
            let ops =
                DirectionalAdjacency::new(point.shape).normalized(T::of(DEFAULT_DEGREE_EPS))?;
            let w = layers::kernel_leaves(&mut tape, k);
            let out = layers::directional_sum(&mut tape, &layers::shared_operators(&ops), x, &w)?;
            handles.layers.push(LayerNodes {
                kernels: w,
                bn: None,
                bn_node: None,
            });
            out
        }
        Pipeline::Hg | Pipeline::Slic => {
            check_pixels(point)?;
            let pos = pixel_positions::<T>(point.shape);
            let pos_leaf = tape.leaf(pos.clone());
            let x_aug = tape.concat_cols(x, pos_leaf)?;
            let centers = tape.leaf(point.centers.clone());
            let offset = tape.leaf(point.logit_offset.clone());
            handles.offset = Some(offset);
            let dim_weights = slic_dim_weights::<T>(point.x.cols(), point.cluster.position_weight);
            let tau = T::of(point.cluster.temperature);
            let (cands, weights) = if point.pipeline == Pipeline::Hg {
                let cands = Arc::new(point.candidates.clone());
                let (_, w) = layers::soft_assignment(
                    &mut tape,
                    x_aug,
                    centers,
                    &cands,
                    &dim_weights,
                    tau,
                    Some(offset),
                )?;
                (cands, w)
            } else {
                let (cands, _, w) = layers::unrolled_assignment(
                    &mut tape,
                    x_aug,
                    &pos,
                    centers,
                    point.cluster.iterations,
                    point.cluster.candidates_per_pixel,
                    &dim_weights,
                    tau,
                    Some(offset),
                )?;
                (cands, w)
            };
            if cands.n_groups() != point.groups.n_groups() {
                return Err(Error::shape(
                    "pipeline groups",
                    point.groups.n_groups(),
                    cands.n_groups(),
                ));
            }
            let ops = layers::shared_operators(point.groups.operators()?);
            let (out, nodes) = layers::hg_module(
                &mut tape,
                x,
                &cands,
                weights,
                &ops,
                &point.module,
                point.bn_mode,
            )?;
            handles.layers = nodes;
            out
        }
    };
    Ok(TapedPipeline {
        tape,
        output,
        handles,
    })
}

fn check_pixels<T: Scalar>(point: &PipelinePoint<T>) -> Result<()> {
    if point.x.rows() != point.shape.n_pixels() {
        return Err(Error::shape(
            "pipeline input rows",
            point.shape.n_pixels(),
            point.x.rows(),
        ));
    }
    Ok(())
}

/// Untaped evaluation through the library's ordinary forward functions.
pub fn forward<T: Scalar>(point: &PipelinePoint<T>) -> Result<DenseMatrix<T>> {
    match point.pipeline {
        Pipeline::Identity => Ok(point.x.clone()),
        Pipeline::Dense => point.x.matmul(&point.dense),
        Pipeline::Conv => conv_as_graph(
            &point.x,
            point.shape,
            point.first_kernels()?,
            T::of(DEFAULT_DEGREE_EPS),
        ),
        Pipeline::Hg | Pipeline::Slic => {
            let s = assignment(point)?;
            let mut module = point.module.clone();
            hg_module_forward(&point.x, &s, &point.groups, &mut module, point.bn_mode)
        }
    }
}

/// The soft assignment a pipeline point induces, computed without a tape.
pub fn assignment<T: Scalar>(point: &PipelinePoint<T>) -> Result<AssignmentMatrix<T>> {
    if !point.pipeline.uses_assignment() {
        return Err(Error::invalid(format!(
            "the {} pipeline has no assignment",
            point.pipeline
        )));
    }
    check_pixels(point)?;
    let (cands, logits) = match point.pipeline {
        Pipeline::Hg => {
            let x_aug = point.x.concat_cols(&pixel_positions(point.shape))?;
            let weights = slic_dim_weights::<T>(point.x.cols(), point.cluster.position_weight);
            let logits = crate::clustering::candidate_logits(
                &x_aug,
                &point.centers,
                &point.candidates,
                &weights,
                T::of(point.cluster.temperature),
            )?;
            (point.candidates.clone(), logits)
        }
        _ => {
            let init = CenterSet::from_augmented(Vec::new(), &point.centers);
            let out = diff_slic(&point.x, point.shape, &init, &point.cluster)?;
            (out.candidates, out.logits)
        }
    };
    let logits = logits.add(&point.logit_offset)?;
    Ok(AssignmentMatrix::from_sparse_unchecked(
        cands.to_sparse(&logits.softmax_rows())?,
    ))
}
