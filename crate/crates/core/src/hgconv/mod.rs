//! Pooling through the soft assignment, group adjacency coarsening and
//! refinement, and the direction-aware group convolution stack.

mod adjacency;
mod module;

pub use adjacency::{
    coarsen_all, max_direction, noise_cancel, postprocess, refine, GroupAdjacencySet,
    RefineOptions, CONNECTION_THRESHOLD,
};
pub(crate) use module::{batch_stats, bn_affine, relu};
pub use module::{
    group_conv, hg_layer, hg_module_forward, pool, unpool, BNParams, BnMode, HGConvModule, HgLayer,
    DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM,
};

#[cfg(test)]
mod tests;
