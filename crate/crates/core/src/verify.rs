//! Oracle suites shared by the `conv-check` command and the acceptance tests:
//! the graph form of the 3×3 convolution against direct loops, and the HG
//! module under identity grouping against the graph form.

use std::fmt;

use crate::clustering::AssignmentMatrix;
use crate::error::{Error, Result};
use crate::fixtures::random_features;
use crate::grid::{DirectionalAdjacency, GridShape, DEFAULT_DEGREE_EPS};
use crate::hgconv::{
    coarsen_all, hg_module_forward, refine, BnMode, HGConvModule, HgLayer, RefineOptions,
};
use crate::refconv::{conv3x3_dense, conv_as_graph, KernelSet};
use crate::rng::{derive_seed, rng_from_seed};

/// Max |Δ| allowed in single precision by both suites.
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SEEDS: u64 = 50;
pub const CONV_CHANNELS: [usize; 2] = [1, 3];
pub const IDENTITY_CHANNELS: [usize; 2] = [1, 4];

/// Every grid from 1×1 to 8×8.
pub fn default_sizes() -> Vec<(usize, usize)> {
    (1..=8).flat_map(|h| (1..=8).map(move |w| (h, w))).collect()
}

/// Parses `"4x4,8x3"` (also accepts `X` and `×`).
pub fn parse_sizes(s: &str) -> Result<Vec<(usize, usize)>> {
    let sizes = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let parts: Vec<&str> = t.split(['x', 'X', '×']).collect();
            let dims = match parts.as_slice() {
                [h, w] => h
                    .trim()
                    .parse::<usize>()
                    .ok()
                    .zip(w.trim().parse::<usize>().ok()),
                _ => None,
            };
            match dims {
                Some((h, w)) if h > 0 && w > 0 => Ok((h, w)),
                _ => Err(Error::invalid(format!(
                    "size `{t}` is not of the form HxW with positive sides"
                ))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if sizes.is_empty() {
        return Err(Error::invalid("size list is empty"));
    }
    Ok(sizes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    /// Graph form against direct loops.
    Conv,
    /// HG module with identity grouping against the graph form.
    IdentityGrouping,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Conv => "conv",
            Suite::IdentityGrouping => "identity_grouping",
        }
    }
}

/// Worst deviation for one shape and channel count over all seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub suite: Suite,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub seeds: u64,
    pub max_abs_diff: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_abs_diff <= EQUIVALENCE_TOLERANCE
    }
}

impl fmt::Display for CaseResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}x{} c={} seeds={} max_abs_diff={:.3e} {}",
            self.suite.name(),
            self.height,
            self.width,
            self.channels,
            self.seeds,
            self.max_abs_diff,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

fn case_seed(suite: Suite, h: usize, w: usize, c: usize, seed: u64) -> u64 {
    let tag = (suite as u64) << 48 | (h as u64) << 32 | (w as u64) << 16 | c as u64;
    derive_seed(derive_seed(0x0C0D_E5EED, tag), seed)
}

/// Graph-form convolution against direct loops in f32, `c → c` channels.
pub fn conv_case(h: usize, w: usize, channels: usize, seeds: u64) -> Result<CaseResult> {
    let shape = GridShape::new(h, w)?;
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = rng_from_seed(case_seed(Suite::Conv, h, w, channels, seed));
        let x = random_features::<f32, _>(shape.n_pixels(), channels, -1.0, 1.0, &mut rng);
        let k = KernelSet::<f32>::random(channels, channels, 1.0, &mut rng);
        let direct = conv3x3_dense(&x, shape, &k)?;
        let graph = conv_as_graph(&x, shape, &k, DEFAULT_DEGREE_EPS as f32)?;
        worst = worst.max(f64::from(direct.max_abs_diff(&graph)?));
    }
    Ok(CaseResult {
        suite: Suite::Conv,
        height: h,
        width: w,
        channels,
        seeds,
        max_abs_diff: worst,
    })
}

/// One HG layer without batch norm on `S = I`, refined without noise
/// cancelling, against the graph-form convolution.
pub fn identity_grouping_case(
    h: usize,
    w: usize,
    channels: usize,
    seeds: u64,
) -> Result<CaseResult> {
    let shape = GridShape::new(h, w)?;
    let n = shape.n_pixels();
    let s = AssignmentMatrix::<f32>::identity(n);
    let opts = RefineOptions {
        noise_cancel: false,
        ..RefineOptions::default()
    };
    let g = refine(&coarsen_all(&s, &DirectionalAdjacency::new(shape))?, opts)?;
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = rng_from_seed(case_seed(Suite::IdentityGrouping, h, w, channels, seed));
        let x = random_features::<f32, _>(n, channels, -1.0, 1.0, &mut rng);
        let k = KernelSet::<f32>::random(channels, channels, 1.0, &mut rng);
        let mut m = HGConvModule::new(vec![HgLayer {
            kernels: k.clone(),
            bn: None,
        }])?;
        let out = hg_module_forward(&x, &s, &g, &mut m, BnMode::Eval)?;
        let reference = conv_as_graph(&x, shape, &k, DEFAULT_DEGREE_EPS as f32)?;
        worst = worst.max(f64::from(out.max_abs_diff(&reference)?));
    }
    Ok(CaseResult {
        suite: Suite::IdentityGrouping,
        height: h,
        width: w,
        channels,
        seeds,
        max_abs_diff: worst,
    })
}

/// Both suites over `sizes`: the conv suite at channels {1, 3}, the identity
/// grouping suite at channels {1, 4}.
pub fn conv_check(sizes: &[(usize, usize)], seeds: u64) -> Result<Vec<CaseResult>> {
    if seeds == 0 {
        return Err(Error::invalid("at least one seed is required"));
    }
    let mut out = Vec::new();
    for &(h, w) in sizes {
        for c in CONV_CHANNELS {
            out.push(conv_case(h, w, c, seeds)?);
        }
    }
    for &(h, w) in sizes {
        for c in IDENTITY_CHANNELS {
            out.push(identity_grouping_case(h, w, c, seeds)?);
        }
    }
    Ok(out)
}
