use crate::error::{Error, Result};

/// Two-task MGDA: the convex combination `α·g_train + (1-α)·g_syn` of least
/// Euclidean norm, returned as `(α, 1-α)`. Coincident gradients give
/// `(0.5, 0.5)`.
pub fn mgda_coefficients(g_train: &[f64], g_syn: &[f64]) -> Result<(f64, f64)> {
    if g_train.len() != g_syn.len() {
        return Err(Error::dim(format!(
            "gradient lengths {} and {}",
            g_train.len(),
            g_syn.len()
        )));
    }
    let mut diff_sq = 0.0;
    let mut num = 0.0;
    for (a, b) in g_train.iter().zip(g_syn) {
        let d = b - a;
        diff_sq += d * d;
        num += d * b;
    }
    if !(diff_sq.is_finite() && num.is_finite()) {
        return Err(Error::NonFinite("MGDA input gradients".into()));
    }
    if diff_sq < 1e-18 {
        return Ok((0.5, 0.5));
    }
    let alpha = (num / diff_sq).clamp(0.0, 1.0);
    Ok((alpha, 1.0 - alpha))
}
