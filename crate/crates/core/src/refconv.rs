//! Reference 3×3 convolution, computed two ways: with direct loops, and as the
//! sum of nine direction-wise graph convolutions.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{Direction, DirectionalAdjacency, GridShape};
use crate::linalg::{DenseMatrix, SparseMatrix};
use crate::scalar::Scalar;

/// One `cin × cout` weight matrix per direction.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSet<T = f32> {
    weights: Vec<DenseMatrix<T>>,
}

impl<T: Scalar> KernelSet<T> {
    /// `weights` must hold nine equally shaped matrices in [`Direction::ALL`] order.
    pub fn new(weights: Vec<DenseMatrix<T>>) -> Result<Self> {
        if weights.len() != 9 {
            return Err(Error::shape("KernelSet::new", 9, weights.len()));
        }
        let shape = weights[0].shape();
        if weights.iter().any(|w| w.shape() != shape) {
            return Err(Error::invalid("kernel matrices differ in shape"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("KernelSet::new"));
        }
        Ok(Self { weights })
    }

    pub fn zeros(cin: usize, cout: usize) -> Self {
        Self {
            weights: vec![DenseMatrix::zeros(cin, cout); 9],
        }
    }

    /// All directions zero except `d`, which holds `w`.
    pub fn single(cin: usize, cout: usize, d: Direction, w: DenseMatrix<T>) -> Result<Self> {
        let mut k = Self::zeros(cin, cout);
        if w.shape() != (cin, cout) {
            return Err(Error::shape(
                "KernelSet::single",
                format!("{cin}x{cout}"),
                format!("{:?}", w.shape()),
            ));
        }
        k.weights[d.index()] = w;
        Ok(k)
    }

    /// Uniform in `±bound`, drawn direction by direction in canonical order.
    pub fn random<R: Rng + ?Sized>(cin: usize, cout: usize, bound: f64, rng: &mut R) -> Self {
        let weights = (0..9)
            .map(|_| {
                DenseMatrix::from_fn(cin, cout, |_, _| T::of(rng.random_range(-bound..=bound)))
            })
            .collect();
        Self { weights }
    }

    pub fn cin(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn cout(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn get(&self, d: Direction) -> &DenseMatrix<T> {
        &self.weights[d.index()]
    }

    pub fn get_mut(&mut self, d: Direction) -> &mut DenseMatrix<T> {
        &mut self.weights[d.index()]
    }

    pub fn weights(&self) -> &[DenseMatrix<T>] {
        &self.weights
    }

    pub fn cast<U: Scalar>(&self) -> KernelSet<U> {
        KernelSet {
            weights: self.weights.iter().map(DenseMatrix::cast).collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        9 * self.cin() * self.cout()
    }
}

fn check_input<T: Scalar>(x: &DenseMatrix<T>, shape: GridShape, k: &KernelSet<T>) -> Result<()> {
    if x.rows() != shape.n_pixels() {
        return Err(Error::shape("conv input rows", shape.n_pixels(), x.rows()));
    }
    if x.cols() != k.cin() {
        return Err(Error::shape("conv input channels", k.cin(), x.cols()));
    }
    Ok(())
}

/// Zero-padded 3×3 cross-correlation with direct loops: `z_p = Σ_δ x_{p+δ} W_δ`.
pub fn conv3x3_dense<T: Scalar>(
    x: &DenseMatrix<T>,
    shape: GridShape,
    k: &KernelSet<T>,
) -> Result<DenseMatrix<T>> {
    check_input(x, shape, k)?;
    let (h, w) = (shape.height() as isize, shape.width() as isize);
    let cout = k.cout();
    let mut out = DenseMatrix::zeros(shape.n_pixels(), cout);
    for r in 0..h {
        for c in 0..w {
            let p = (r * w + c) as usize;
            for d in Direction::ALL {
                let (dr, dc) = d.displacement();
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nr >= h || nc < 0 || nc >= w {
                    continue;
                }
                let xin = x.row((nr * w + nc) as usize);
                let wd = k.get(d);
                for (ci, &xv) in xin.iter().enumerate() {
                    for (co, &wv) in wd.row(ci).iter().enumerate() {
                        let cur = out.get(p, co);
                        out.set(p, co, cur + xv * wv);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `Σ_δ ops[δ] · x · W_δ`, accumulated in canonical direction order.
///
/// Shared by the pixel-level and group-level convolutions and by the taped
/// forward pass, so all three perform identical arithmetic.
pub fn directional_sum<T: Scalar>(
    ops: &[SparseMatrix<T>],
    x: &DenseMatrix<T>,
    k: &KernelSet<T>,
) -> Result<DenseMatrix<T>> {
    if x.cols() != k.cin() {
        return Err(Error::shape("directional conv channels", k.cin(), x.cols()));
    }
    let mut acc: Option<DenseMatrix<T>> = None;
    for d in Direction::ALL {
        let term = ops[d.index()].spmm(x)?.matmul(k.get(d))?;
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(&term)?,
        });
    }
    Ok(acc.expect("nine directions"))
}

/// `Σ_δ (D^δ)⁻¹ A^δ X W_δ` over the pixel grid.
pub fn conv_as_graph<T: Scalar>(
    x: &DenseMatrix<T>,
    shape: GridShape,
    k: &KernelSet<T>,
    eps: T,
) -> Result<DenseMatrix<T>> {
    check_input(x, shape, k)?;
    let ops = DirectionalAdjacency::new(shape).normalized(eps)?;
    directional_sum(&ops, x, k)
}
