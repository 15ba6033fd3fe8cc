use std::sync::Arc;

use super::tape::{NodeId, Tape};
use crate::clustering::{nearest_candidates, Candidates, EMPTY_GROUP_MASS};
use crate::error::{Error, Result};
use crate::grid::Direction;
use crate::hgconv::{BNParams, BnMode, HGConvModule};
use crate::linalg::{DenseMatrix, SparseMatrix};
use crate::refconv::KernelSet;
use crate::scalar::Scalar;

/// Leaf ids of one kernel set, indexed by direction.
pub fn kernel_leaves<T: Scalar>(tape: &mut Tape<T>, k: &KernelSet<T>) -> Vec<NodeId> {
    k.weights().iter().map(|w| tape.leaf(w.clone())).collect()
}

/// Taped counterpart of `directional_sum`: `Σ_δ ops[δ] · x · W_δ`.
pub fn directional_sum<T: Scalar>(
    tape: &mut Tape<T>,
    ops: &[Arc<SparseMatrix<T>>],
    x: NodeId,
    w: &[NodeId],
) -> Result<NodeId> {
    if ops.len() != 9 || w.len() != 9 {
        return Err(Error::invalid(
            "directional sum needs nine operators and nine kernels",
        ));
    }
    let mut acc: Option<NodeId> = None;
    for d in Direction::ALL {
        let moved = tape.spmm(Arc::clone(&ops[d.index()]), x)?;
        let term = tape.matmul(moved, w[d.index()])?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(acc.expect("nine directions"))
}

/// Leaves and constants for one layer of a taped HG module.
#[derive(Clone, Debug)]
pub struct LayerNodes {
    pub kernels: Vec<NodeId>,
    /// `(γ, β)` leaves, absent when batch norm is bypassed.
    pub bn: Option<(NodeId, NodeId)>,
    /// The batch-norm node, for reading batch statistics.
    pub bn_node: Option<NodeId>,
}

/// Soft assignment from candidate logits: returns `(logits, weights)` where
/// `logits` already includes the optional additive `offset`.
pub fn soft_assignment<T: Scalar>(
    tape: &mut Tape<T>,
    x_aug: NodeId,
    centers: NodeId,
    cands: &Arc<Candidates>,
    dim_weights: &[T],
    tau: T,
    offset: Option<NodeId>,
) -> Result<(NodeId, NodeId)> {
    let mut logits = tape.candidate_logits(x_aug, centers, Arc::clone(cands), dim_weights, tau)?;
    if let Some(off) = offset {
        logits = tape.add(logits, off)?;
    }
    let weights = tape.softmax(logits);
    Ok((logits, weights))
}

/// One differentiable center update: weighted means of `x_aug`, keeping the
/// previous center for groups with negligible mass.
pub fn center_update<T: Scalar>(
    tape: &mut Tape<T>,
    cands: &Arc<Candidates>,
    weights: NodeId,
    x_aug: NodeId,
    prev: NodeId,
) -> Result<NodeId> {
    let mut mass = vec![T::zero(); cands.n_groups()];
    for (&g, &v) in cands.groups().iter().zip(tape.value(weights).data()) {
        mass[g] += v;
    }
    let keep_new = mass
        .iter()
        .map(|m| m.to_f64_lossy() >= EMPTY_GROUP_MASS)
        .collect();
    let normalized = tape.col_normalize(Arc::clone(cands), weights)?;
    let pooled = tape.pattern_spmm(Arc::clone(cands), normalized, x_aug, true)?;
    tape.select_rows(pooled, prev, keep_new)
}

/// Unrolled clustering from the constant initial centers: `iterations` rounds
/// of assignment and center update, the offset applied to the last logits.
/// Returns the candidates and `(logits, weights)` of the final assignment.
pub fn unrolled_assignment<T: Scalar>(
    tape: &mut Tape<T>,
    x_aug: NodeId,
    pixel_pos: &DenseMatrix<T>,
    init_centers: NodeId,
    iterations: usize,
    k_nn: usize,
    dim_weights: &[T],
    tau: T,
    offset: Option<NodeId>,
) -> Result<(Arc<Candidates>, NodeId, NodeId)> {
    if iterations == 0 {
        return Err(Error::invalid(
            "at least one clustering iteration is required",
        ));
    }
    let dims = tape.value(x_aug).cols();
    let mut current = init_centers;
    let mut last = None;
    for it in 0..iterations {
        let cpos = tape.value(current).slice_cols(dims - 2, dims);
        let cands = Arc::new(nearest_candidates(pixel_pos, &cpos, k_nn));
        let off = if it + 1 == iterations { offset } else { None };
        let (logits, weights) =
            soft_assignment(tape, x_aug, current, &cands, dim_weights, tau, off)?;
        if it + 1 < iterations {
            current = center_update(tape, &cands, weights, x_aug, current)?;
        }
        last = Some((cands, logits, weights));
    }
    Ok(last.expect("at least one iteration"))
}

/// Taped `hg_module_forward`: pool, every layer, unpool. Batch norm in
/// training mode uses batch statistics and leaves the running ones alone.
pub fn hg_module<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    cands: &Arc<Candidates>,
    s_values: NodeId,
    operators: &[Arc<SparseMatrix<T>>],
    module: &HGConvModule<T>,
    mode: BnMode,
) -> Result<(NodeId, Vec<LayerNodes>)> {
    let pool_weights = tape.col_normalize(Arc::clone(cands), s_values)?;
    let mut z = tape.pattern_spmm(Arc::clone(cands), pool_weights, x, true)?;
    let mut nodes = Vec::with_capacity(module.depth());
    for layer in module.layers() {
        let kernels = kernel_leaves(tape, &layer.kernels);
        let conv = directional_sum(tape, operators, z, &kernels)?;
        let (bn, bn_node) = match &layer.bn {
            Some(params) => {
                let (gamma, beta, out) = batch_norm(tape, conv, params, mode)?;
                z = tape.relu(out);
                (Some((gamma, beta)), Some(out))
            }
            None => {
                z = conv;
                (None, None)
            }
        };
        nodes.push(LayerNodes {
            kernels,
            bn,
            bn_node,
        });
    }
    let unpool_weights = tape.row_normalize(s_values)?;
    let out = tape.pattern_spmm(Arc::clone(cands), unpool_weights, z, false)?;
    Ok((out, nodes))
}

/// Batch norm with fresh `γ`, `β` leaves; returns `(γ, β, output)`.
pub fn batch_norm<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    params: &BNParams<T>,
    mode: BnMode,
) -> Result<(NodeId, NodeId, NodeId)> {
    let gamma = tape.leaf_row(&params.gamma);
    let beta = tape.leaf_row(&params.beta);
    let stats = match mode {
        BnMode::Train => None,
        BnMode::Eval => Some((
            params.running_mean.as_slice(),
            params.running_var.as_slice(),
        )),
    };
    let out = tape.batch_norm(x, gamma, beta, stats, params.eps)?;
    Ok((gamma, beta, out))
}

/// Wraps each operator for sharing between taped nodes.
pub fn shared_operators<T: Scalar>(ops: &[SparseMatrix<T>]) -> Vec<Arc<SparseMatrix<T>>> {
    ops.iter().cloned().map(Arc::new).collect()
}
