//! Reverse-mode differentiation over the HG-Conv pipeline and
//! finite-difference verification.
//!
//! A [`Tape`] records matrix-level primitives together with the values the
//! backward pass needs. The sparse structure (pixel and group adjacency,
//! candidate patterns) is constant; assignment values are differentiated
//! through the softmax that produced them. Taped forwards call the same
//! arithmetic as the untaped code, so outputs agree bit for bit.

mod gradcheck;
mod layers;
mod pipeline;
mod tape;

pub use gradcheck::{
    gradcheck, relative_error, ClassReport, GradcheckReport, ParamClass, DEFAULT_STEP,
    REL_ERROR_FLOOR,
};
pub use layers::{
    batch_norm, center_update, directional_sum, hg_module, kernel_leaves, shared_operators,
    soft_assignment, unrolled_assignment, LayerNodes,
};
pub use pipeline::{
    assignment, forward, forward_with_tape, FixtureSpec, GradientSet, Pipeline, PipelinePoint,
    TapedPipeline,
};
pub use tape::{Gradients, NodeId, Tape};
