use std::sync::Arc;

use crate::clustering::{candidate_logits, Candidates};
use crate::error::{Error, Result};
use crate::hgconv::{batch_stats, bn_affine, relu};
use crate::linalg::{DenseMatrix, SparseMatrix};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    SpMM {
        op: Arc<SparseMatrix<T>>,
        x: NodeId,
    },
    PatternSpMM {
        pattern: Arc<Candidates>,
        values: NodeId,
        x: NodeId,
        transpose: bool,
    },
    ColNormalize {
        pattern: Arc<Candidates>,
        values: NodeId,
    },
    RowNormalize(NodeId),
    Softmax(NodeId),
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<T>,
        var: Vec<T>,
        eps: T,
        batch: bool,
    },
    Relu(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow {
        x: NodeId,
        bias: NodeId,
    },
    Sum(NodeId),
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
    },
    CandidateLogits {
        x_aug: NodeId,
        centers: NodeId,
        cands: Arc<Candidates>,
        weights: Vec<T>,
        tau: T,
    },
    ConcatCols(NodeId, NodeId),
    SliceCols {
        x: NodeId,
        start: usize,
    },
    SelectRows {
        a: NodeId,
        b: NodeId,
        take_a: Vec<bool>,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: DenseMatrix<T>,
    op: Op<T>,
}

/// Ordered record of primitive operations. Node ids grow in creation order,
/// so reverse id order is a reverse topological order.
#[derive(Clone, Debug, Default)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

/// Per-node gradients produced by [`Tape::backward`]. Nodes the seed does
/// not reach have no entry.
#[derive(Clone, Debug)]
pub struct Gradients<T = f32> {
    grads: Vec<Option<DenseMatrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&DenseMatrix<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of `id`, or zeros shaped like its value when unreached.
    pub fn get_or_zeros(&self, tape: &Tape<T>, id: NodeId) -> DenseMatrix<T> {
        self.get(id).cloned().unwrap_or_else(|| {
            let (r, c) = tape.value(id).shape();
            DenseMatrix::zeros(r, c)
        })
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn check_pattern<T: Scalar>(op: &'static str, p: &Candidates, v: &DenseMatrix<T>) -> Result<()> {
    if v.shape() != (p.n_pixels(), p.per_pixel()) {
        return Err(Error::shape(
            op,
            format!("{}x{}", p.n_pixels(), p.per_pixel()),
            format!("{}x{}", v.rows(), v.cols()),
        ));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node ids in creation order.
    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn value(&self, id: NodeId) -> &DenseMatrix<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: DenseMatrix<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: DenseMatrix<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// A `1 × n` leaf holding `values`.
    pub fn leaf_row(&mut self, values: &[T]) -> NodeId {
        self.leaf(DenseMatrix::from_vec_unchecked(
            1,
            values.len(),
            values.to_vec(),
        ))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `op · x` with a constant sparse left operand.
    pub fn spmm(&mut self, op: Arc<SparseMatrix<T>>, x: NodeId) -> Result<NodeId> {
        let v = op.spmm(self.value(x))?;
        Ok(self.push(v, Op::SpMM { op, x }))
    }

    /// `M · x` (or `Mᵀ · x`) where `M` has the candidate pattern and the
    /// `N × k` values of node `values`.
    pub fn pattern_spmm(
        &mut self,
        pattern: Arc<Candidates>,
        values: NodeId,
        x: NodeId,
        transpose: bool,
    ) -> Result<NodeId> {
        check_pattern("pattern_spmm", &pattern, self.value(values))?;
        let m = pattern.to_sparse_unpruned(self.value(values));
        let v = if transpose {
            m.transpose().spmm(self.value(x))?
        } else {
            m.spmm(self.value(x))?
        };
        Ok(self.push(
            v,
            Op::PatternSpMM {
                pattern,
                values,
                x,
                transpose,
            },
        ))
    }

    /// Divides each value by the total of its group column; empty columns stay.
    pub fn col_normalize(&mut self, pattern: Arc<Candidates>, values: NodeId) -> Result<NodeId> {
        let vals = self.value(values);
        check_pattern("col_normalize", &pattern, vals)?;
        if vals.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::invalid("column normalization of negative values"));
        }
        let sums = column_sums(&pattern, vals);
        let groups = pattern.groups();
        let data = vals
            .data()
            .iter()
            .zip(groups)
            .map(|(&v, &g)| if sums[g] > T::zero() { v / sums[g] } else { v })
            .collect();
        let v = DenseMatrix::from_vec_unchecked(vals.rows(), vals.cols(), data);
        Ok(self.push(v, Op::ColNormalize { pattern, values }))
    }

    /// Divides each row by its total; zero rows stay.
    pub fn row_normalize(&mut self, values: NodeId) -> Result<NodeId> {
        let vals = self.value(values);
        if vals.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::invalid("row normalization of negative values"));
        }
        let mut out = vals.clone();
        for r in 0..out.rows() {
            let total: T = vals.row(r).iter().copied().sum();
            if total > T::zero() {
                for v in out.row_mut(r) {
                    *v = *v / total;
                }
            }
        }
        Ok(self.push(out, Op::RowNormalize(values)))
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).softmax_rows();
        self.push(v, Op::Softmax(x))
    }

    /// Batch norm with `1 × C` affine nodes. `stats = None` normalizes with
    /// the batch statistics; otherwise with the given (constant) mean and variance.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: Option<(&[T], &[T])>,
        eps: T,
    ) -> Result<NodeId> {
        let c = self.value(x).cols();
        for id in [gamma, beta] {
            if self.value(id).shape() != (1, c) {
                return Err(Error::shape(
                    "batch_norm affine",
                    format!("1x{c}"),
                    format!("{:?}", self.value(id).shape()),
                ));
            }
        }
        let (mean, var, batch) = match stats {
            None => {
                let (m, v) = batch_stats(self.value(x));
                (m, v, true)
            }
            Some((m, v)) => {
                if m.len() != c || v.len() != c {
                    return Err(Error::shape("batch_norm statistics", c, m.len()));
                }
                (m.to_vec(), v.to_vec(), false)
            }
        };
        let out = bn_affine(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            &mean,
            &var,
            eps,
        );
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                var,
                eps,
                batch,
            },
        ))
    }

    /// Mean and biased variance used by a batch-norm node.
    pub fn batch_norm_stats(&self, id: NodeId) -> Option<(&[T], &[T])> {
        match &self.nodes[id.0].op {
            Op::BatchNorm { mean, var, .. } => Some((mean, var)),
            _ => None,
        }
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = relu(self.value(x));
        self.push(v, Op::Relu(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Adds the `1 × C` row `bias` to every row of `x`.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if bv.shape() != (1, xv.cols()) {
            return Err(Error::shape(
                "add_row",
                format!("1x{}", xv.cols()),
                format!("{:?}", bv.shape()),
            ));
        }
        let b = bv.data();
        let v = DenseMatrix::from_fn(xv.rows(), xv.cols(), |r, c| xv.get(r, c) + b[c]);
        Ok(self.push(v, Op::AddRow { x, bias }))
    }

    /// Sum of all entries as a `1 × 1` node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = DenseMatrix::from_vec_unchecked(1, 1, vec![self.value(x).sum()]);
        self.push(v, Op::Sum(x))
    }

    /// Mean over rows of the softmax cross-entropy against integer labels.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let z = self.value(logits);
        if labels.len() != z.rows() || z.rows() == 0 {
            return Err(Error::shape("cross_entropy labels", z.rows(), labels.len()));
        }
        if labels.iter().any(|&l| l >= z.cols()) {
            return Err(Error::invalid("cross-entropy label out of range"));
        }
        let mut total = T::zero();
        for (r, &l) in labels.iter().enumerate() {
            let row = z.row(r);
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse: T = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
            total += lse - row[l];
        }
        let v = DenseMatrix::from_vec_unchecked(1, 1, vec![total / T::of(labels.len() as f64)]);
        Ok(self.push(
            v,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Weighted squared distances `-Σ_d w_d (x_pd − c_gd)² / τ` over candidates.
    pub fn candidate_logits(
        &mut self,
        x_aug: NodeId,
        centers: NodeId,
        cands: Arc<Candidates>,
        weights: &[T],
        tau: T,
    ) -> Result<NodeId> {
        let v = candidate_logits(self.value(x_aug), self.value(centers), &cands, weights, tau)?;
        Ok(self.push(
            v,
            Op::CandidateLogits {
                x_aug,
                centers,
                cands,
                weights: weights.to_vec(),
                tau,
            },
        ))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).concat_cols(self.value(b))?;
        Ok(self.push(v, Op::ConcatCols(a, b)))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        if start > end || end > self.value(x).cols() {
            return Err(Error::invalid(format!(
                "column range {start}..{end} out of bounds"
            )));
        }
        let v = self.value(x).slice_cols(start, end);
        Ok(self.push(v, Op::SliceCols { x, start }))
    }

    /// Row `r` of `a` where `take_a[r]`, otherwise row `r` of `b`.
    pub fn select_rows(&mut self, a: NodeId, b: NodeId, take_a: Vec<bool>) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() || take_a.len() != av.rows() {
            return Err(Error::shape(
                "select_rows",
                format!("{:?}", av.shape()),
                format!("{:?}", bv.shape()),
            ));
        }
        let v = DenseMatrix::from_fn(av.rows(), av.cols(), |r, c| {
            if take_a[r] {
                av.get(r, c)
            } else {
                bv.get(r, c)
            }
        });
        Ok(self.push(v, Op::SelectRows { a, b, take_a }))
    }

    /// Reverse-mode sweep from `output` seeded with `seed`. The tape is not
    /// modified, so repeated calls give identical results.
    pub fn backward(&self, output: NodeId, seed: &DenseMatrix<T>) -> Result<Gradients<T>> {
        if output.0 >= self.nodes.len() {
            return Err(Error::invalid("output node is not on this tape"));
        }
        if seed.shape() != self.value(output).shape() {
            return Err(Error::shape(
                "backward seed",
                format!("{:?}", self.value(output).shape()),
                format!("{:?}", seed.shape()),
            ));
        }
        let mut grads: Vec<Option<DenseMatrix<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.clone());
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            for (id, contribution) in self.vjp(i, &g)? {
                let slot = &mut grads[id.0];
                *slot = Some(match slot.take() {
                    None => contribution,
                    Some(acc) => acc.add(&contribution)?,
                });
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Contributions of node `i`'s gradient `g` to its inputs.
    fn vjp(&self, i: usize, g: &DenseMatrix<T>) -> Result<Vec<(NodeId, DenseMatrix<T>)>> {
        let node = &self.nodes[i];
        let val = |id: NodeId| self.value(id);
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => vec![
                (*a, g.matmul(&val(*b).transpose())?),
                (*b, val(*a).transpose().matmul(g)?),
            ],
            Op::SpMM { op, x } => vec![(*x, op.transpose().spmm(g)?)],
            Op::PatternSpMM {
                pattern,
                values,
                x,
                transpose,
            } => {
                let m = pattern.to_sparse_unpruned(val(*values));
                let xv = val(*x);
                let k = pattern.per_pixel();
                let mut dv = DenseMatrix::zeros(pattern.n_pixels(), k);
                for p in 0..pattern.n_pixels() {
                    for (j, &grp) in pattern.row(p).iter().enumerate() {
                        let d = if *transpose {
                            dot(g.row(grp), xv.row(p))
                        } else {
                            dot(g.row(p), xv.row(grp))
                        };
                        dv.set(p, j, d);
                    }
                }
                let dx = if *transpose {
                    m.spmm(g)?
                } else {
                    m.transpose().spmm(g)?
                };
                vec![(*values, dv), (*x, dx)]
            }
            Op::ColNormalize { pattern, values } => {
                let v = val(*values);
                let sums = column_sums(pattern, v);
                let mut weighted = vec![T::zero(); pattern.n_groups()];
                for ((&gv, &vv), &grp) in g.data().iter().zip(v.data()).zip(pattern.groups()) {
                    weighted[grp] += gv * vv;
                }
                let data = g
                    .data()
                    .iter()
                    .zip(pattern.groups())
                    .map(|(&gv, &grp)| {
                        let s = sums[grp];
                        if s > T::zero() {
                            gv / s - weighted[grp] / (s * s)
                        } else {
                            gv
                        }
                    })
                    .collect();
                vec![(
                    *values,
                    DenseMatrix::from_vec_unchecked(v.rows(), v.cols(), data),
                )]
            }
            Op::RowNormalize(values) => {
                let v = val(*values);
                let mut dv = g.clone();
                for r in 0..v.rows() {
                    let total: T = v.row(r).iter().copied().sum();
                    if total > T::zero() {
                        let weighted = dot(g.row(r), v.row(r));
                        for (d, &gv) in dv.row_mut(r).iter_mut().zip(g.row(r)) {
                            *d = gv / total - weighted / (total * total);
                        }
                    }
                }
                vec![(*values, dv)]
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let mut dx = DenseMatrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let inner = dot(g.row(r), y.row(r));
                    for ((d, &yv), &gv) in dx.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                        *d = yv * (gv - inner);
                    }
                }
                vec![(*x, dx)]
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                var,
                eps,
                batch,
            } => {
                let xv = val(*x);
                let gam = val(*gamma).data();
                let (n, c) = xv.shape();
                let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + *eps).sqrt()).collect();
                let xhat = DenseMatrix::from_fn(n, c, |r, j| (xv.get(r, j) - mean[j]) * inv[j]);
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for r in 0..n {
                    for j in 0..c {
                        dgamma[j] += g.get(r, j) * xhat.get(r, j);
                        dbeta[j] += g.get(r, j);
                    }
                }
                let dx = if *batch {
                    let nt = T::of(n as f64);
                    DenseMatrix::from_fn(n, c, |r, j| {
                        let sum_dxhat = gam[j] * dbeta[j];
                        let sum_dxhat_xhat = gam[j] * dgamma[j];
                        inv[j] / nt
                            * (nt * gam[j] * g.get(r, j)
                                - sum_dxhat
                                - xhat.get(r, j) * sum_dxhat_xhat)
                    })
                } else {
                    DenseMatrix::from_fn(n, c, |r, j| g.get(r, j) * gam[j] * inv[j])
                };
                vec![
                    (*x, dx),
                    (*gamma, DenseMatrix::from_vec_unchecked(1, c, dgamma)),
                    (*beta, DenseMatrix::from_vec_unchecked(1, c, dbeta)),
                ]
            }
            Op::Relu(x) => {
                let dx = g.zip_map(val(*x), "relu backward", |gv, xv| {
                    if xv > T::zero() {
                        gv
                    } else {
                        T::zero()
                    }
                })?;
                vec![(*x, dx)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-T::one()))],
            Op::Mul(a, b) => vec![(*a, g.hadamard(val(*b))?), (*b, g.hadamard(val(*a))?)],
            Op::AddRow { x, bias } => {
                let mut db = vec![T::zero(); g.cols()];
                for r in 0..g.rows() {
                    for (d, &gv) in db.iter_mut().zip(g.row(r)) {
                        *d += gv;
                    }
                }
                let cols = db.len();
                vec![
                    (*x, g.clone()),
                    (*bias, DenseMatrix::from_vec_unchecked(1, cols, db)),
                ]
            }
            Op::Sum(x) => {
                let (r, c) = val(*x).shape();
                vec![(*x, DenseMatrix::filled(r, c, g.get(0, 0)))]
            }
            Op::CrossEntropy { logits, labels } => {
                let z = val(*logits);
                let scale = g.get(0, 0) / T::of(labels.len() as f64);
                let mut dz = z.softmax_rows();
                for (r, &l) in labels.iter().enumerate() {
                    let row = dz.row_mut(r);
                    row[l] -= T::one();
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                vec![(*logits, dz)]
            }
            Op::CandidateLogits {
                x_aug,
                centers,
                cands,
                weights,
                tau,
            } => {
                let xv = val(*x_aug);
                let cv = val(*centers);
                let mut dx = DenseMatrix::zeros(xv.rows(), xv.cols());
                let mut dc = DenseMatrix::zeros(cv.rows(), cv.cols());
                let two = T::of(2.0);
                for p in 0..xv.rows() {
                    for (j, &grp) in cands.row(p).iter().enumerate() {
                        let coef = g.get(p, j) * two / *tau;
                        if coef == T::zero() {
                            continue;
                        }
                        for d in 0..xv.cols() {
                            let diff = weights[d] * (xv.get(p, d) - cv.get(grp, d)) * coef;
                            dx.row_mut(p)[d] -= diff;
                            dc.row_mut(grp)[d] += diff;
                        }
                    }
                }
                vec![(*x_aug, dx), (*centers, dc)]
            }
            Op::ConcatCols(a, b) => {
                let ca = val(*a).cols();
                vec![(*a, g.slice_cols(0, ca)), (*b, g.slice_cols(ca, g.cols()))]
            }
            Op::SliceCols { x, start } => {
                let xv = val(*x);
                let mut dx = DenseMatrix::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    dx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                vec![(*x, dx)]
            }
            Op::SelectRows { a, b, take_a } => {
                let mut da = g.clone();
                let mut db = g.clone();
                for (r, &t) in take_a.iter().enumerate() {
                    let zeroed = if t { db.row_mut(r) } else { da.row_mut(r) };
                    zeroed.fill(T::zero());
                }
                vec![(*a, da), (*b, db)]
            }
        })
    }
}

/// Column totals of pattern values, accumulated in CSR order.
fn column_sums<T: Scalar>(pattern: &Candidates, v: &DenseMatrix<T>) -> Vec<T> {
    let mut sums = vec![T::zero(); pattern.n_groups()];
    for (&grp, &x) in pattern.groups().iter().zip(v.data()) {
        sums[grp] += x;
    }
    sums
}
