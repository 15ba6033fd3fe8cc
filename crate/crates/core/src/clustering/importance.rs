use crate::error::{Error, Result};
use crate::grid::{Direction, GridShape};
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;

/// Non-negative per-pixel sampling weight.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceMap {
    shape: GridShape,
    values: Vec<f64>,
}

impl ImportanceMap {
    pub fn new(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.n_pixels() {
            return Err(Error::shape(
                "ImportanceMap",
                shape.n_pixels(),
                values.len(),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(
                "importance values must be finite and non-negative",
            ));
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Per-pixel attention in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    shape: GridShape,
    values: Vec<f64>,
}

impl AttentionMap {
    pub fn new(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.n_pixels() {
            return Err(Error::shape("AttentionMap", shape.n_pixels(), values.len()));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("attention values must lie in [0, 1]"));
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Mean L2 distance from each pixel's feature to its in-bounds 8-neighbours.
pub fn importance_map<T: Scalar>(x: &DenseMatrix<T>, shape: GridShape) -> Result<ImportanceMap> {
    if x.rows() != shape.n_pixels() {
        return Err(Error::shape("importance_map", shape.n_pixels(), x.rows()));
    }
    let values = (0..shape.n_pixels())
        .map(|p| {
            let mut total = 0.0;
            let mut count = 0usize;
            for d in Direction::ALL.iter().filter(|d| !d.is_self()) {
                if let Some(q) = shape.neighbor(p, *d) {
                    let sq: f64 = x
                        .row(p)
                        .iter()
                        .zip(x.row(q))
                        .map(|(&a, &b)| {
                            let diff = a.to_f64_lossy() - b.to_f64_lossy();
                            diff * diff
                        })
                        .sum();
                    total += sq.sqrt();
                    count += 1;
                }
            }
            if count == 0 {
                0.0
            } else {
                total / count as f64
            }
        })
        .collect();
    ImportanceMap::new(shape, values)
}

/// `imp / max(imp) + alpha · attn`; the division is skipped when `max(imp) = 0`.
pub fn modulate_importance(
    imp: &ImportanceMap,
    attn: &AttentionMap,
    alpha: f64,
) -> Result<ImportanceMap> {
    if imp.shape != attn.shape {
        return Err(Error::shape(
            "modulate_importance",
            format!("{:?}", imp.shape),
            format!("{:?}", attn.shape),
        ));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::invalid("focus weight alpha must be non-negative"));
    }
    let max = imp.values.iter().copied().fold(0.0, f64::max);
    let norm = if max > 0.0 { max } else { 1.0 };
    let values = imp
        .values
        .iter()
        .zip(&attn.values)
        .map(|(&i, &a)| i / norm + alpha * a)
        .collect();
    ImportanceMap::new(imp.shape, values)
}

fn check_probabilities<T: Scalar>(p: &DenseMatrix<T>, shape: GridShape) -> Result<()> {
    if p.rows() != shape.n_pixels() {
        return Err(Error::shape(
            "prediction map rows",
            shape.n_pixels(),
            p.rows(),
        ));
    }
    for r in 0..p.rows() {
        let row = p.row(r);
        if row.iter().any(|v| !(T::zero()..=T::one()).contains(v)) {
            return Err(Error::invalid(format!(
                "prediction row {r} has entries outside [0, 1]"
            )));
        }
        let sum: f64 = row.iter().map(|v| v.to_f64_lossy()).sum();
        if (sum - 1.0).abs() > 1e-4 {
            return Err(Error::invalid(format!("prediction row {r} sums to {sum}")));
        }
    }
    Ok(())
}

/// Object-aware attention: the probability of class `k` at every pixel.
pub fn attention_object<T: Scalar>(
    p: &DenseMatrix<T>,
    shape: GridShape,
    k: usize,
) -> Result<AttentionMap> {
    if k >= p.cols() {
        return Err(Error::invalid(format!(
            "class index {k} out of range for {} classes",
            p.cols()
        )));
    }
    check_probabilities(p, shape)?;
    AttentionMap::new(
        shape,
        p.column(k)
            .into_iter()
            .map(|v| v.to_f64_lossy().clamp(0.0, 1.0))
            .collect(),
    )
}

/// Uncertainty-aware attention: prediction entropy divided by `log K`.
pub fn attention_uncertainty<T: Scalar>(
    p: &DenseMatrix<T>,
    shape: GridShape,
) -> Result<AttentionMap> {
    let k = p.cols();
    if k < 2 {
        return Err(Error::invalid(
            "entropy attention needs at least two classes",
        ));
    }
    check_probabilities(p, shape)?;
    let log_k = (k as f64).ln();
    let values = (0..p.rows())
        .map(|r| {
            let h: f64 = p
                .row(r)
                .iter()
                .map(|v| v.to_f64_lossy())
                .filter(|&v| v > 0.0)
                .map(|v| -v * v.ln())
                .sum();
            (h / log_k).clamp(0.0, 1.0)
        })
        .collect();
    AttentionMap::new(shape, values)
}
