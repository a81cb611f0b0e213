//! Central-difference gradient checking.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{softmax_cross_entropy, Model};

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(1, |numeric|)` seen.
    pub max_rel_error: f64,
    /// Index of the coordinate with the largest error.
    pub worst_index: usize,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    fn merge(self, other: GradCheckReport) -> GradCheckReport {
        if other.max_rel_error > self.max_rel_error {
            GradCheckReport {
                checked: self.checked + other.checked,
                passed: self.passed && other.passed,
                ..other
            }
        } else {
            GradCheckReport {
                checked: self.checked + other.checked,
                passed: self.passed && other.passed,
                ..self
            }
        }
    }
}

/// Compares `analytic` against central differences of `loss` around `point`.
pub fn check_gradient<F>(
    point: &[f64],
    analytic: &[f64],
    mut loss: F,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if point.len() != analytic.len() {
        return Err(Error::dim(format!(
            "{} coordinates, {} analytic gradients",
            point.len(),
            analytic.len()
        )));
    }
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: 0,
        tolerance,
        passed: true,
    };
    for i in 0..x.len() {
        if !analytic[i].is_finite() {
            return Err(Error::NonFinite(format!(
                "analytic gradient coordinate {i}"
            )));
        }
        let orig = x[i];
        x[i] = orig + step;
        let up = loss(&x)?;
        x[i] = orig - step;
        let down = loss(&x)?;
        x[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        if !numeric.is_finite() {
            return Err(Error::NonFinite(format!("numeric gradient coordinate {i}")));
        }
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    report.passed = report.max_rel_error <= tolerance;
    Ok(report)
}

/// Checks parameter and input gradients of mean cross-entropy through
/// `model` in its current mode. Train-mode dropout resamples its mask on
/// every pass and cannot be checked this way; put such models in eval mode.
pub fn check_model(
    model: &mut Model,
    x: &Tensor,
    labels: &[usize],
    tolerance: f64,
) -> Result<GradCheckReport> {
    model.zero_grad();
    let logits = model.forward(x)?;
    let (_, g) = softmax_cross_entropy(&logits, labels)?;
    let gx = model.backward(&g)?;
    let params = model.flat_params();
    let grads = model.flat_grads();

    let mut probe = model.clone();
    let by_params = check_gradient(
        &params,
        &grads,
        |p| {
            probe.set_flat_params(p)?;
            let logits = probe.forward(x)?;
            Ok(softmax_cross_entropy(&logits, labels)?.0)
        },
        DEFAULT_STEP,
        tolerance,
    )?;

    let mut probe = model.clone();
    let shape = x.shape().to_vec();
    let by_input = check_gradient(
        x.data(),
        gx.data(),
        |v| {
            let xt = Tensor::new(shape.clone(), v.to_vec())?;
            let logits = probe.forward(&xt)?;
            Ok(softmax_cross_entropy(&logits, labels)?.0)
        },
        DEFAULT_STEP,
        tolerance,
    )?;
    Ok(by_params.merge(by_input))
}
