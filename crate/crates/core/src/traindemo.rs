//! Synthetic two-class segmentation trained end to end through the tape:
//! a 3×3 stem convolution, clustering on the stem features, an HG module and
//! a per-pixel linear classifier, optimized with plain SGD.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{self, NodeId, Tape};
use crate::clustering::{
    pixel_positions, run_clustering, slic_dim_weights, AssignmentMatrix, ClusterConfig,
};
use crate::error::{Error, Result};
use crate::grid::{DirectionalAdjacency, GridShape, DEFAULT_DEGREE_EPS};
use crate::hgconv::{coarsen_all, refine, BnMode, HGConvModule, RefineOptions};
use crate::linalg::{DenseMatrix, SparseMatrix};
use crate::refconv::KernelSet;
use crate::rng::{derive_seed, rng_from_seed, substream};

pub const IMAGE_SIDE: usize = 32;
pub const MIN_SAMPLES: usize = 5;

/// One image with a single bright rectangle; label 1 inside it.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    /// `N × 1` intensities in `[0, 1]`.
    pub image: DenseMatrix<f32>,
    pub labels: Vec<usize>,
    /// `(top, left, height, width)` of the rectangle.
    pub rect: (usize, usize, usize, usize),
}

impl SyntheticSample {
    pub fn shape(&self) -> GridShape {
        GridShape::new(IMAGE_SIDE, IMAGE_SIDE).expect("fixed size")
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.labels.iter().filter(|&&l| l == 1).count() as f64 / self.labels.len() as f64
    }
}

fn generate_sample(seed: u64) -> SyntheticSample {
    let mut rng = rng_from_seed(seed);
    let h = rng.random_range(6..=16);
    let w = rng.random_range(6..=16);
    let top = rng.random_range(0..=IMAGE_SIDE - h);
    let left = rng.random_range(0..=IMAGE_SIDE - w);
    let background = Normal::new(0.3f32, 0.05).expect("valid");
    let foreground = Normal::new(0.7f32, 0.05).expect("valid");
    let n = IMAGE_SIDE * IMAGE_SIDE;
    let mut values = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for p in 0..n {
        let (r, c) = (p / IMAGE_SIDE, p % IMAGE_SIDE);
        let inside = (top..top + h).contains(&r) && (left..left + w).contains(&c);
        let v = if inside {
            foreground.sample(&mut rng)
        } else {
            background.sample(&mut rng)
        };
        values.push(v.clamp(0.0, 1.0));
        labels.push(usize::from(inside));
    }
    SyntheticSample {
        image: DenseMatrix::from_vec(n, 1, values).expect("finite"),
        labels,
        rect: (top, left, h, w),
    }
}

/// `n` samples, sample `i` drawn from its own derived seed.
pub fn generate_dataset(n: usize, seed: u64) -> Result<Vec<SyntheticSample>> {
    if n == 0 {
        return Err(Error::invalid("dataset needs at least one sample"));
    }
    Ok((0..n)
        .map(|i| generate_sample(derive_seed(seed, i as u64)))
        .collect())
}

/// First 80% for training, the rest for validation.
pub fn split(samples: &[SyntheticSample]) -> Result<(&[SyntheticSample], &[SyntheticSample])> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "training needs at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    Ok(samples.split_at(samples.len() * 4 / 5))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoConfig {
    pub epochs: usize,
    pub lr: f64,
    pub samples: usize,
    pub seed: u64,
    pub channels: usize,
    pub layers: usize,
    pub cluster: ClusterConfig,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            lr: 0.1,
            samples: 200,
            seed: 1,
            channels: 8,
            layers: 2,
            cluster: ClusterConfig {
                downsample_ratio: 1.0 / 16.0,
                ..ClusterConfig::default()
            },
        }
    }
}

/// Stem convolution, HG module and linear classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoModel {
    pub stem: KernelSet<f32>,
    pub stem_bias: Vec<f32>,
    pub module: HGConvModule<f32>,
    pub classifier: DenseMatrix<f32>,
    pub classifier_bias: Vec<f32>,
}

impl DemoModel {
    /// Every weight and bias uniform in `±1/sqrt(fan_in)`; batch norm starts
    /// at the identity.
    pub fn new(channels: usize, layers: usize, seed: u64) -> Self {
        let mut rng = substream(seed, 0x1A7E);
        let stem_bound = 1.0 / 3.0;
        let stem = KernelSet::random(1, channels, stem_bound, &mut rng);
        let stem_bias = (0..channels)
            .map(|_| rng.random_range(-stem_bound..=stem_bound) as f32)
            .collect();
        let module = HGConvModule::random(channels, channels, layers, &mut rng);
        let cls_bound = 1.0 / (channels as f64).sqrt();
        let classifier = DenseMatrix::from_fn(channels, 2, |_, _| {
            rng.random_range(-cls_bound..=cls_bound) as f32
        });
        let classifier_bias = (0..2)
            .map(|_| rng.random_range(-cls_bound..=cls_bound) as f32)
            .collect();
        Self {
            stem,
            stem_bias,
            module,
            classifier,
            classifier_bias,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.stem.parameter_count()
            + self.stem_bias.len()
            + self.module.parameter_count()
            + self.classifier.data().len()
            + self.classifier_bias.len()
    }
}

/// Constants shared by every forward pass on the fixed image size.
struct Context {
    shape: GridShape,
    pixel_ops: Vec<Arc<SparseMatrix<f32>>>,
    pixel_adj: DirectionalAdjacency<f32>,
    positions: DenseMatrix<f32>,
}

impl Context {
    fn new() -> Result<Self> {
        let shape = GridShape::new(IMAGE_SIDE, IMAGE_SIDE)?;
        let pixel_adj = DirectionalAdjacency::new(shape);
        let pixel_ops =
            autodiff::shared_operators(&pixel_adj.normalized(DEFAULT_DEGREE_EPS as f32)?);
        Ok(Self {
            shape,
            positions: pixel_positions(shape),
            pixel_adj,
            pixel_ops,
        })
    }
}

struct Forward {
    tape: Tape<f32>,
    logits: NodeId,
    stem: Vec<NodeId>,
    stem_bias: NodeId,
    layers: Vec<autodiff::LayerNodes>,
    classifier: NodeId,
    classifier_bias: NodeId,
}

fn forward(
    ctx: &Context,
    model: &DemoModel,
    image: &DenseMatrix<f32>,
    cluster: &ClusterConfig,
    mode: BnMode,
) -> Result<Forward> {
    let mut tape = Tape::new();
    let x = tape.leaf(image.clone());
    let stem = autodiff::kernel_leaves(&mut tape, &model.stem);
    let stem_bias = tape.leaf_row(&model.stem_bias);
    let conv = autodiff::directional_sum(&mut tape, &ctx.pixel_ops, x, &stem)?;
    let features = tape.add_row(conv, stem_bias)?;

    let slic = run_clustering(tape.value(features), ctx.shape, cluster, None)?;
    let cands = Arc::new(slic.candidates);
    let pos = tape.leaf(ctx.positions.clone());
    let x_aug = tape.concat_cols(features, pos)?;
    let centers = tape.leaf(slic.assign_centers.augmented());
    let dim_weights = slic_dim_weights::<f32>(model.stem.cout(), cluster.position_weight);
    let (_, s_values) = autodiff::soft_assignment(
        &mut tape,
        x_aug,
        centers,
        &cands,
        &dim_weights,
        cluster.temperature as f32,
        None,
    )?;
    let s = AssignmentMatrix::from_sparse(cands.to_sparse(tape.value(s_values))?)?;
    let groups = refine(&coarsen_all(&s, &ctx.pixel_adj)?, RefineOptions::default())?;
    let ops = autodiff::shared_operators(groups.operators()?);
    let (out, layers) = autodiff::hg_module(
        &mut tape,
        features,
        &cands,
        s_values,
        &ops,
        &model.module,
        mode,
    )?;

    let classifier = tape.leaf(model.classifier.clone());
    let classifier_bias = tape.leaf_row(&model.classifier_bias);
    let scores = tape.matmul(out, classifier)?;
    let logits = tape.add_row(scores, classifier_bias)?;
    Ok(Forward {
        tape,
        logits,
        stem,
        stem_bias,
        layers,
        classifier,
        classifier_bias,
    })
}

fn sample_cluster_config(base: &ClusterConfig, seed: u64, index: usize) -> ClusterConfig {
    ClusterConfig {
        seed: derive_seed(seed, 0xC1_0000 + index as u64),
        ..base.clone()
    }
}

fn sgd(param: &mut [f32], grad: &DenseMatrix<f32>, lr: f32) {
    for (p, g) in param.iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
}

/// One SGD step on one sample; returns the loss before the update.
fn train_step(
    ctx: &Context,
    model: &mut DemoModel,
    sample: &SyntheticSample,
    cluster: &ClusterConfig,
    lr: f32,
) -> Result<f32> {
    let mut f = forward(ctx, model, &sample.image, cluster, BnMode::Train)?;
    let loss = f.tape.cross_entropy(f.logits, &sample.labels)?;
    let value = f.tape.value(loss).get(0, 0);
    if !value.is_finite() {
        return Ok(value);
    }
    let grads = f.tape.backward(loss, &DenseMatrix::filled(1, 1, 1.0))?;
    let g = |id: NodeId| grads.get_or_zeros(&f.tape, id);

    for (w, &id) in model.stem.weights().to_vec().iter().zip(&f.stem) {
        let mut updated = w.clone();
        sgd(updated.data_mut(), &g(id), lr);
        let d =
            crate::grid::Direction::ALL[f.stem.iter().position(|&x| x == id).expect("own node")];
        *model.stem.get_mut(d) = updated;
    }
    sgd(&mut model.stem_bias, &g(f.stem_bias), lr);
    for (layer, nodes) in model.module.layers_mut().iter_mut().zip(&f.layers) {
        for (d, &id) in crate::grid::Direction::ALL.iter().zip(&nodes.kernels) {
            sgd(layer.kernels.get_mut(*d).data_mut(), &g(id), lr);
        }
        if let (Some(bn), Some((gamma, beta)), Some(node)) =
            (layer.bn.as_mut(), nodes.bn, nodes.bn_node)
        {
            sgd(&mut bn.gamma, &g(gamma), lr);
            sgd(&mut bn.beta, &g(beta), lr);
            let (mean, var) = f.tape.batch_norm_stats(node).expect("batch-norm node");
            let batch = f.tape.value(node).rows();
            let (mean, var) = (mean.to_vec(), var.to_vec());
            bn.update_running(&mean, &var, batch);
        }
    }
    sgd(model.classifier.data_mut(), &g(f.classifier), lr);
    sgd(&mut model.classifier_bias, &g(f.classifier_bias), lr);
    f.tape = Tape::new();
    Ok(value)
}

/// Per-pixel class predictions with stored batch-norm statistics.
pub fn predict(
    model: &DemoModel,
    sample: &SyntheticSample,
    cluster: &ClusterConfig,
) -> Result<Vec<usize>> {
    let ctx = Context::new()?;
    predict_with(&ctx, model, sample, cluster)
}

fn predict_with(
    ctx: &Context,
    model: &DemoModel,
    sample: &SyntheticSample,
    cluster: &ClusterConfig,
) -> Result<Vec<usize>> {
    let f = forward(ctx, model, &sample.image, cluster, BnMode::Eval)?;
    Ok(f.tape.value(f.logits).argmax_rows())
}

/// Pixel accuracy over `samples`; sample `i` clusters with the seed used
/// for validation index `i`.
pub fn evaluate(model: &DemoModel, samples: &[SyntheticSample], cfg: &DemoConfig) -> Result<f64> {
    let ctx = Context::new()?;
    evaluate_with(&ctx, model, samples, cfg)
}

fn evaluate_with(
    ctx: &Context,
    model: &DemoModel,
    samples: &[SyntheticSample],
    cfg: &DemoConfig,
) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (i, sample) in samples.iter().enumerate() {
        let cluster = sample_cluster_config(&cfg.cluster, cfg.seed, 1 << 20 | i);
        let pred = predict_with(ctx, model, sample, &cluster)?;
        correct += pred
            .iter()
            .zip(&sample.labels)
            .filter(|(a, b)| a == b)
            .count();
        total += pred.len();
    }
    Ok(correct as f64 / total.max(1) as f64)
}

/// Loss and validation accuracy after one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean pre-update training loss over the epoch.
    pub loss: f64,
    pub val_acc: f64,
}

impl fmt::Display for EpochMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {} loss {:.6} val_acc {:.6}",
            self.epoch, self.loss, self.val_acc
        )
    }
}

/// Plain SGD, one sample at a time in index order. `on_epoch` sees each
/// epoch's metrics as soon as they are known.
pub fn train(
    model: &mut DemoModel,
    train_set: &[SyntheticSample],
    val_set: &[SyntheticSample],
    cfg: &DemoConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::invalid(format!(
            "learning rate must be finite and non-negative, got {}",
            cfg.lr
        )));
    }
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    cfg.cluster.validate()?;
    let ctx = Context::new()?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0f64;
        for (i, sample) in train_set.iter().enumerate() {
            let cluster = sample_cluster_config(&cfg.cluster, cfg.seed, i);
            let loss = train_step(&ctx, model, sample, &cluster, cfg.lr as f32)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            total += f64::from(loss);
        }
        let metrics = EpochMetrics {
            epoch,
            loss: total / train_set.len() as f64,
            val_acc: evaluate_with(&ctx, model, val_set, cfg)?,
        };
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok(history)
}

/// Generates the dataset, builds the model and trains it.
pub fn run_demo(
    cfg: &DemoConfig,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(DemoModel, Vec<EpochMetrics>)> {
    let data = generate_dataset(cfg.samples, cfg.seed)?;
    let (train_set, val_set) = split(&data)?;
    let mut model = DemoModel::new(cfg.channels, cfg.layers, cfg.seed);
    let history = train(&mut model, train_set, val_set, cfg, on_epoch)?;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_is_deterministic_and_well_formed() {
        let a = generate_dataset(20, 3).unwrap();
        assert_eq!(a, generate_dataset(20, 3).unwrap());
        assert_ne!(a, generate_dataset(20, 4).unwrap());
        for s in &a {
            let (top, left, h, w) = s.rect;
            assert!((6..=16).contains(&h) && (6..=16).contains(&w));
            assert!(top + h <= IMAGE_SIDE && left + w <= IMAGE_SIDE);
            let frac = s.foreground_fraction();
            assert!((0.03..=0.25).contains(&frac), "{frac}");
            assert!((frac - (h * w) as f64 / 1024.0).abs() < 1e-12);
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn intensity_statistics_match_the_generator() {
        let data = generate_dataset(10, 8).unwrap();
        let (mut fg, mut bg) = (Vec::new(), Vec::new());
        for s in &data {
            for (&v, &l) in s.image.data().iter().zip(&s.labels) {
                if l == 1 {
                    fg.push(f64::from(v))
                } else {
                    bg.push(f64::from(v))
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&fg) - 0.7).abs() < 0.01);
        assert!((mean(&bg) - 0.3).abs() < 0.01);
    }

    #[test]
    fn small_datasets_are_guarded() {
        assert_eq!(generate_dataset(1, 0).unwrap().len(), 1);
        assert!(generate_dataset(0, 0).is_err());
        let four = generate_dataset(4, 0).unwrap();
        assert!(split(&four).is_err());
        let ten = generate_dataset(10, 0).unwrap();
        let (train, val) = split(&ten).unwrap();
        assert_eq!((train.len(), val.len()), (8, 2));
    }

    #[test]
    fn parameter_count_is_fixed() {
        let m = DemoModel::new(8, 2, 1);
        let stem = 9 * 8 + 8;
        let module = 2 * (9 * 8 * 8 + 2 * 8);
        let classifier = 8 * 2 + 2;
        assert_eq!(m.parameter_count(), stem + module + classifier);
        assert_eq!(m, DemoModel::new(8, 2, 1));
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let data = generate_dataset(6, 2).unwrap();
        let cfg = DemoConfig {
            epochs: 2,
            lr: 0.0,
            samples: 6,
            ..DemoConfig::default()
        };
        let (train_set, val_set) = split(&data).unwrap();
        let mut model = DemoModel::new(8, 2, 2);
        let h = train(&mut model, train_set, val_set, &cfg, |_| {}).unwrap();
        assert_eq!(h[0].loss, h[1].loss);
        let bad = DemoConfig { lr: -0.1, ..cfg };
        assert!(train(&mut model, train_set, val_set, &bad, |_| {}).is_err());
    }

    #[test]
    fn metrics_line_format() {
        let m = EpochMetrics {
            epoch: 3,
            loss: 0.25,
            val_acc: 0.875,
        };
        assert_eq!(m.to_string(), "epoch 3 loss 0.250000 val_acc 0.875000");
    }
}
