use std::fmt;

use super::pipeline::{forward_with_tape, GradientSet, Pipeline, PipelinePoint};
use crate::error::{Error, Result};
use crate::grid::Direction;
use crate::linalg::DenseMatrix;

pub const DEFAULT_STEP: f64 = 1e-5;
/// Floor of the relative-error denominator.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// Groups of checked coordinates, reported separately.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamClass {
    Features,
    Dense,
    Kernels,
    BatchNorm,
    AssignmentLogits,
}

impl ParamClass {
    pub fn name(self) -> &'static str {
        match self {
            ParamClass::Features => "X",
            ParamClass::Dense => "dense W",
            ParamClass::Kernels => "W_delta",
            ParamClass::BatchNorm => "BN",
            ParamClass::AssignmentLogits => "assignment logits",
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    X(usize),
    Dense(usize),
    Kernel {
        layer: usize,
        dir: Direction,
        i: usize,
    },
    Gamma {
        layer: usize,
        c: usize,
    },
    Beta {
        layer: usize,
        c: usize,
    },
    Offset(usize),
}

impl Slot {
    fn class(self) -> ParamClass {
        match self {
            Slot::X(_) => ParamClass::Features,
            Slot::Dense(_) => ParamClass::Dense,
            Slot::Kernel { .. } => ParamClass::Kernels,
            Slot::Gamma { .. } | Slot::Beta { .. } => ParamClass::BatchNorm,
            Slot::Offset(_) => ParamClass::AssignmentLogits,
        }
    }

    fn label(self) -> String {
        match self {
            Slot::X(i) => format!("X[{i}]"),
            Slot::Dense(i) => format!("dense[{i}]"),
            Slot::Kernel { layer, dir, i } => format!("layer {layer} W_{}[{i}]", dir.name()),
            Slot::Gamma { layer, c } => format!("layer {layer} gamma[{c}]"),
            Slot::Beta { layer, c } => format!("layer {layer} beta[{c}]"),
            Slot::Offset(i) => format!("logits[{i}]"),
        }
    }

    fn value_mut(self, p: &mut PipelinePoint<f64>) -> &mut f64 {
        match self {
            Slot::X(i) => &mut p.x.data_mut()[i],
            Slot::Dense(i) => &mut p.dense.data_mut()[i],
            Slot::Kernel { layer, dir, i } => {
                &mut p.module.layers_mut()[layer].kernels.get_mut(dir).data_mut()[i]
            }
            Slot::Gamma { layer, c } => &mut bn_mut(p, layer).gamma[c],
            Slot::Beta { layer, c } => &mut bn_mut(p, layer).beta[c],
            Slot::Offset(i) => &mut p.logit_offset.data_mut()[i],
        }
    }

    fn analytic(self, g: &GradientSet<f64>) -> f64 {
        let bn = |layer: usize| {
            g.bn[layer]
                .as_ref()
                .expect("slot exists only with batch norm")
        };
        match self {
            Slot::X(i) => g.x.data()[i],
            Slot::Dense(i) => g.dense.as_ref().expect("dense pipeline").data()[i],
            Slot::Kernel { layer, dir, i } => g.kernels[layer].get(dir).data()[i],
            Slot::Gamma { layer, c } => bn(layer).0[c],
            Slot::Beta { layer, c } => bn(layer).1[c],
            Slot::Offset(i) => g
                .assignment_logits
                .as_ref()
                .expect("assignment pipeline")
                .data()[i],
        }
    }
}

fn bn_mut(p: &mut PipelinePoint<f64>, layer: usize) -> &mut crate::hgconv::BNParams<f64> {
    p.module.layers_mut()[layer]
        .bn
        .as_mut()
        .expect("slot exists only with batch norm")
}

fn slots(p: &PipelinePoint<f64>) -> Vec<Slot> {
    let mut out: Vec<Slot> = (0..p.x.data().len()).map(Slot::X).collect();
    let layers = match p.pipeline {
        Pipeline::Identity => 0,
        Pipeline::Dense => {
            out.extend((0..p.dense.data().len()).map(Slot::Dense));
            0
        }
        Pipeline::Conv => 1.min(p.module.depth()),
        Pipeline::Hg | Pipeline::Slic => {
            out.extend((0..p.logit_offset.data().len()).map(Slot::Offset));
            p.module.depth()
        }
    };
    for (layer, l) in p.module.layers().iter().enumerate().take(layers) {
        for dir in Direction::ALL {
            out.extend((0..l.kernels.get(dir).data().len()).map(|i| Slot::Kernel {
                layer,
                dir,
                i,
            }));
        }
        if let (Some(bn), true) = (&l.bn, p.pipeline != Pipeline::Conv) {
            out.extend((0..bn.channels()).map(|c| Slot::Gamma { layer, c }));
            out.extend((0..bn.channels()).map(|c| Slot::Beta { layer, c }));
        }
    }
    out
}

/// Worst coordinate of one parameter class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassReport {
    pub class: ParamClass,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub worst: String,
    pub analytic: f64,
    pub numeric: f64,
}

/// Analytic versus central-difference gradients of `Σ readout ⊙ output`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub pipeline: Pipeline,
    pub step: f64,
    pub classes: Vec<ClassReport>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| c.max_rel_error)
            .fold(0.0, f64::max)
    }

    /// Label of the coordinate with the largest relative error.
    pub fn offending(&self) -> Option<&str> {
        self.classes
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
            .map(|c| c.worst.as_str())
    }

    pub fn class(&self, class: ParamClass) -> Option<&ClassReport> {
        self.classes.iter().find(|c| c.class == class)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.classes.iter().all(|c| c.max_rel_error <= tolerance)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "pipeline: {}", self.pipeline)?;
        writeln!(f, "step: {:e}", self.step)?;
        for c in &self.classes {
            writeln!(
                f,
                "class {}: coordinates {} max_rel_error {:.3e} worst {} (analytic {:.12e}, numeric {:.12e})",
                c.class.name(),
                c.coordinates,
                c.max_rel_error,
                c.worst,
                c.analytic,
                c.numeric
            )?;
        }
        write!(f, "max_rel_error: {:.3e}", self.max_rel_error())
    }
}

/// Relative error with the denominator floored at [`REL_ERROR_FLOOR`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn objective(point: &PipelinePoint<f64>, readout: &DenseMatrix<f64>) -> Result<f64> {
    let out = forward_with_tape(point)?;
    let v = out.output().hadamard(readout)?.sum();
    if !v.is_finite() {
        return Err(Error::NonFinite("gradcheck objective"));
    }
    Ok(v)
}

/// Checks every coordinate of `point` with central differences of step `h`
/// on the scalar `Σ readout ⊙ output`.
pub fn gradcheck(
    point: &PipelinePoint<f64>,
    readout: &DenseMatrix<f64>,
    h: f64,
) -> Result<GradcheckReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let taped = forward_with_tape(point)?;
    let grads = taped.backward(readout)?;
    if !grads.is_finite() {
        return Err(Error::NonFinite("analytic gradient"));
    }
    let mut work = point.clone();
    let mut classes: Vec<ClassReport> = Vec::new();
    for slot in slots(point) {
        let original = *slot.value_mut(&mut work);
        *slot.value_mut(&mut work) = original + h;
        let plus = objective(&work, readout)?;
        *slot.value_mut(&mut work) = original - h;
        let minus = objective(&work, readout)?;
        *slot.value_mut(&mut work) = original;
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = slot.analytic(&grads);
        let err = relative_error(analytic, numeric);
        let class = slot.class();
        let entry = match classes.iter_mut().find(|c| c.class == class) {
            Some(e) => e,
            None => {
                classes.push(ClassReport {
                    class,
                    coordinates: 0,
                    max_rel_error: -1.0,
                    worst: String::new(),
                    analytic: 0.0,
                    numeric: 0.0,
                });
                classes.last_mut().expect("just pushed")
            }
        };
        entry.coordinates += 1;
        if err > entry.max_rel_error {
            entry.max_rel_error = err;
            entry.worst = slot.label();
            entry.analytic = analytic;
            entry.numeric = numeric;
        }
    }
    classes.sort_by_key(|c| c.class);
    Ok(GradcheckReport {
        pipeline: point.pipeline,
        step: h,
        classes,
    })
}
