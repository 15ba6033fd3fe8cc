use super::{AssignmentMatrix, ClusterConfig};
use crate::error::{Error, Result};
use crate::grid::GridShape;
use crate::linalg::{DenseMatrix, SparseMatrix};
use crate::scalar::Scalar;

/// Groups whose total assignment mass falls below this keep their previous center.
pub const EMPTY_GROUP_MASS: f64 = 1e-12;

/// Cluster centers: seed pixels plus the current feature and position parts.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterSet<T = f32> {
    seeds: Vec<usize>,
    features: DenseMatrix<T>,
    positions: DenseMatrix<T>,
}

impl<T: Scalar> CenterSet<T> {
    /// Centers initialized at the given (distinct, in-range) seed pixels.
    pub fn from_seeds(x: &DenseMatrix<T>, shape: GridShape, seeds: &[usize]) -> Result<Self> {
        if x.rows() != shape.n_pixels() {
            return Err(Error::shape(
                "CenterSet::from_seeds",
                shape.n_pixels(),
                x.rows(),
            ));
        }
        if seeds.is_empty() {
            return Err(Error::invalid("at least one center is required"));
        }
        let mut seen = vec![false; shape.n_pixels()];
        for &s in seeds {
            if s >= shape.n_pixels() || std::mem::replace(&mut seen[s], true) {
                return Err(Error::invalid(format!(
                    "seed {s} is out of range or repeated"
                )));
            }
        }
        let pos = pixel_positions::<T>(shape);
        Ok(Self {
            seeds: seeds.to_vec(),
            features: DenseMatrix::from_fn(seeds.len(), x.cols(), |g, c| x.get(seeds[g], c)),
            positions: DenseMatrix::from_fn(seeds.len(), 2, |g, c| pos.get(seeds[g], c)),
        })
    }

    /// Centers from their augmented `[feature | position]` rows.
    pub(crate) fn from_augmented(seeds: Vec<usize>, aug: &DenseMatrix<T>) -> Self {
        let c = aug.cols() - 2;
        Self {
            seeds,
            features: aug.slice_cols(0, c),
            positions: aug.slice_cols(c, c + 2),
        }
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn seeds(&self) -> &[usize] {
        &self.seeds
    }

    pub fn features(&self) -> &DenseMatrix<T> {
        &self.features
    }

    /// Center positions in normalized pixel units (row, col) / max(H, W).
    pub fn positions(&self) -> &DenseMatrix<T> {
        &self.positions
    }

    /// `[feature | position]`, one row per center.
    pub fn augmented(&self) -> DenseMatrix<T> {
        self.features
            .concat_cols(&self.positions)
            .expect("center parts share a row count")
    }

    /// Reorders centers: new center `i` is old center `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            seeds: order.iter().map(|&i| self.seeds[i]).collect(),
            features: DenseMatrix::from_fn(order.len(), self.features.cols(), |g, c| {
                self.features.get(order[g], c)
            }),
            positions: DenseMatrix::from_fn(order.len(), 2, |g, c| self.positions.get(order[g], c)),
        }
    }
}

/// `(row, col) / max(H, W)` for every pixel.
pub fn pixel_positions<T: Scalar>(shape: GridShape) -> DenseMatrix<T> {
    let scale = shape.height().max(shape.width()) as f64;
    DenseMatrix::from_fn(shape.n_pixels(), 2, |p, c| {
        let (r, col) = shape.coords(p);
        T::of(if c == 0 { r } else { col } as f64 / scale)
    })
}

/// For every pixel, the `k` spatially nearest centers, stored in increasing
/// group order so that a row of candidate values lines up with a CSR row.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidates {
    n_groups: usize,
    k: usize,
    groups: Vec<usize>,
}

impl Candidates {
    pub fn n_pixels(&self) -> usize {
        self.groups.len() / self.k
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn per_pixel(&self) -> usize {
        self.k
    }

    pub fn row(&self, p: usize) -> &[usize] {
        &self.groups[p * self.k..(p + 1) * self.k]
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn row_ptr(&self) -> Vec<usize> {
        (0..=self.n_pixels()).map(|p| p * self.k).collect()
    }

    /// CSR matrix with this pattern and the given `N × k` values, keeping zeros.
    pub(crate) fn to_sparse_unpruned<T: Scalar>(&self, values: &DenseMatrix<T>) -> SparseMatrix<T> {
        SparseMatrix::from_csr_unpruned(
            self.n_pixels(),
            self.n_groups,
            self.row_ptr(),
            self.groups.clone(),
            values.data().to_vec(),
        )
        .expect("candidate rows are sorted and in range")
    }

    pub fn to_sparse<T: Scalar>(&self, values: &DenseMatrix<T>) -> Result<SparseMatrix<T>> {
        if values.shape() != (self.n_pixels(), self.k) {
            return Err(Error::shape(
                "Candidates::to_sparse",
                format!("{}x{}", self.n_pixels(), self.k),
                format!("{:?}", values.shape()),
            ));
        }
        SparseMatrix::from_csr(
            self.n_pixels(),
            self.n_groups,
            self.row_ptr(),
            self.groups.clone(),
            values.data().to_vec(),
        )
    }
}

/// `k` nearest centers per pixel by squared position distance, ties to the
/// lower group index.
pub fn nearest_candidates<T: Scalar>(
    pixel_pos: &DenseMatrix<T>,
    center_pos: &DenseMatrix<T>,
    k: usize,
) -> Candidates {
    let n_groups = center_pos.rows();
    let k = k.min(n_groups).max(1);
    let mut groups = Vec::with_capacity(pixel_pos.rows() * k);
    let mut scratch: Vec<(T, usize)> = Vec::with_capacity(n_groups);
    for p in 0..pixel_pos.rows() {
        let pp = pixel_pos.row(p);
        scratch.clear();
        scratch.extend((0..n_groups).map(|g| {
            let cp = center_pos.row(g);
            let dr = pp[0] - cp[0];
            let dc = pp[1] - cp[1];
            (dr * dr + dc * dc, g)
        }));
        let by_distance = |a: &(T, usize), b: &(T, usize)| {
            a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1))
        };
        if k < n_groups {
            scratch.select_nth_unstable_by(k - 1, by_distance);
        }
        let mut chosen: Vec<usize> = scratch[..k].iter().map(|&(_, g)| g).collect();
        chosen.sort_unstable();
        groups.extend(chosen);
    }
    Candidates {
        n_groups,
        k,
        groups,
    }
}

/// `-Σ_d w_d (x_pd − c_gd)² / τ` for every pixel and each of its candidates.
pub fn candidate_logits<T: Scalar>(
    x_aug: &DenseMatrix<T>,
    centers_aug: &DenseMatrix<T>,
    cands: &Candidates,
    dim_weights: &[T],
    tau: T,
) -> Result<DenseMatrix<T>> {
    if x_aug.cols() != centers_aug.cols() || dim_weights.len() != x_aug.cols() {
        return Err(Error::shape(
            "candidate_logits",
            x_aug.cols(),
            centers_aug.cols(),
        ));
    }
    if x_aug.rows() != cands.n_pixels() || centers_aug.rows() != cands.n_groups() {
        return Err(Error::shape(
            "candidate_logits",
            cands.n_pixels(),
            x_aug.rows(),
        ));
    }
    let k = cands.per_pixel();
    let mut out = DenseMatrix::zeros(x_aug.rows(), k);
    for p in 0..x_aug.rows() {
        let xp = x_aug.row(p);
        for (j, &g) in cands.row(p).iter().enumerate() {
            let d: T = xp
                .iter()
                .zip(centers_aug.row(g))
                .zip(dim_weights)
                .map(|((&a, &b), &w)| w * (a - b) * (a - b))
                .sum();
            out.set(p, j, -d / tau);
        }
    }
    Ok(out)
}

/// New centers as the column-normalized weighted mean of `x_aug`; groups with
/// negligible mass keep `prev`.
pub fn update_centers<T: Scalar>(
    s_values: &DenseMatrix<T>,
    cands: &Candidates,
    x_aug: &DenseMatrix<T>,
    prev: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    let s = cands.to_sparse_unpruned(s_values);
    let mass = s.col_sums();
    let pooled = s.col_normalize()?.transpose().spmm(x_aug)?;
    Ok(DenseMatrix::from_fn(prev.rows(), prev.cols(), |g, c| {
        if mass[g].to_f64_lossy() < EMPTY_GROUP_MASS {
            prev.get(g, c)
        } else {
            pooled.get(g, c)
        }
    }))
}

/// Result of [`diff_slic`].
#[derive(Clone, Debug)]
pub struct SlicOutput<T = f32> {
    pub assignment: AssignmentMatrix<T>,
    /// Centers after the final update.
    pub centers: CenterSet<T>,
    /// Centers that produced the final assignment.
    pub assign_centers: CenterSet<T>,
    pub candidates: Candidates,
    /// Pre-softmax logits of the final assignment, `N × k`.
    pub logits: DenseMatrix<T>,
    /// Softmax of `logits`, aligned with `candidates`.
    pub weights: DenseMatrix<T>,
}

/// Per-dimension weights of the SLIC distance: 1 for features, λ² for position.
pub(crate) fn slic_dim_weights<T: Scalar>(channels: usize, lambda: f64) -> Vec<T> {
    let mut w = vec![T::one(); channels];
    w.extend([T::of(lambda * lambda); 2]);
    w
}

pub fn diff_slic<T: Scalar>(
    x: &DenseMatrix<T>,
    shape: GridShape,
    centers: &CenterSet<T>,
    cfg: &ClusterConfig,
) -> Result<SlicOutput<T>> {
    diff_slic_observed(x, shape, centers, cfg, |_, _| {})
}

/// [`diff_slic`] calling `observe(iteration, assignment)` after every
/// assignment step.
pub fn diff_slic_observed<T: Scalar>(
    x: &DenseMatrix<T>,
    shape: GridShape,
    centers: &CenterSet<T>,
    cfg: &ClusterConfig,
    mut observe: impl FnMut(usize, &AssignmentMatrix<T>),
) -> Result<SlicOutput<T>> {
    cfg.validate()?;
    if x.rows() != shape.n_pixels() {
        return Err(Error::shape(
            "diff_slic input rows",
            shape.n_pixels(),
            x.rows(),
        ));
    }
    if centers.features().cols() != x.cols() {
        return Err(Error::shape(
            "diff_slic center features",
            x.cols(),
            centers.features().cols(),
        ));
    }
    let pos = pixel_positions::<T>(shape);
    let x_aug = x.concat_cols(&pos)?;
    let weights_dim = slic_dim_weights::<T>(x.cols(), cfg.position_weight);
    let tau = T::of(cfg.temperature);

    let mut current = centers.augmented();
    let mut last = None;
    for it in 0..cfg.iterations {
        let cpos = current.slice_cols(x.cols(), x.cols() + 2);
        let cands = nearest_candidates(&pos, &cpos, cfg.candidates_per_pixel);
        let logits = candidate_logits(&x_aug, &current, &cands, &weights_dim, tau)?;
        let weights = logits.softmax_rows();
        let assignment = AssignmentMatrix::from_sparse_unchecked(cands.to_sparse(&weights)?);
        observe(it, &assignment);
        let next = update_centers(&weights, &cands, &x_aug, &current)?;
        last = Some((assignment, cands, logits, weights, current));
        current = next;
    }
    let (assignment, candidates, logits, weights, used) = last.expect("at least one iteration");
    Ok(SlicOutput {
        assignment,
        centers: CenterSet::from_augmented(centers.seeds().to_vec(), &current),
        assign_centers: CenterSet::from_augmented(centers.seeds().to_vec(), &used),
        candidates,
        logits,
        weights,
    })
}
