use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let c = logits.cols();
    if c == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.rows() {
        return Err(Error::dim(format!(
            "{} labels for {} rows",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= logits.cols()) {
        return Err(Error::Index(format!(
            "label {l} at row {i} with {} classes",
            logits.cols()
        )));
    }
    Ok(())
}

/// Per-row `-log softmax(logits)[label]`.
pub fn cross_entropy_rows(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    check_labels(logits, labels)?;
    Ok(logits
        .iter_rows()
        .zip(labels)
        .map(|(row, &l)| log_sum_exp(row) - row[l])
        .collect())
}

/// Mean cross-entropy over the batch and its exact gradient
/// `(softmax - onehot) / N`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.shape().len() != 2 || logits.rows() == 0 {
        return Err(Error::empty("cross-entropy over an empty batch"));
    }
    let per_row = cross_entropy_rows(logits, labels)?;
    let n = logits.rows() as f64;
    let mut grad = softmax(logits);
    let c = logits.cols();
    for (row, &l) in grad.data_mut().chunks_mut(c).zip(labels) {
        row[l] -= 1.0;
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok((per_row.iter().sum::<f64>() / n, grad))
}

/// `Σ_r w_r · (-Σ_c q_rc log p_rc)` against soft targets `q`, with gradient
/// rows `w_r · (p_r - q_r)` (exact when each target row sums to one).
pub fn weighted_soft_cross_entropy(
    logits: &Tensor,
    targets: &Tensor,
    weights: &[f64],
) -> Result<(f64, Tensor)> {
    if logits.shape() != targets.shape() {
        return Err(Error::dim(format!(
            "logits {:?} vs targets {:?}",
            logits.shape(),
            targets.shape()
        )));
    }
    if weights.len() != logits.rows() {
        return Err(Error::dim(format!(
            "{} weights for {} rows",
            weights.len(),
            logits.rows()
        )));
    }
    let c = logits.cols();
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (((row, q), g), &w) in logits
        .iter_rows()
        .zip(targets.iter_rows())
        .zip(grad.data_mut().chunks_mut(c))
        .zip(weights)
    {
        let lse = log_sum_exp(row);
        let ce: f64 = row
            .iter()
            .zip(q)
            .filter(|(_, &qv)| qv != 0.0)
            .map(|(z, qv)| qv * (lse - z))
            .sum();
        loss += w * ce;
        for (gv, qv) in g.iter_mut().zip(q) {
            *gv = w * (*gv - qv);
        }
    }
    Ok((loss, grad))
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
