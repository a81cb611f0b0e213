use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability clip applied before taking logs.
pub const KAPPA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    /// Negated cross-entropy, `log p_y`.
    Loss,
    /// Correct-class probability `p_y`.
    Confidence,
    /// `log(p_y / (1 − p_y))`.
    LogitScaled,
    /// Number of classes ranked strictly below `y`; depends only on the
    /// ordering of the output, so it survives rank-preserving obfuscation.
    Rank,
}

fn label_prob(probs: &[f64], label: usize) -> Result<f64> {
    probs.get(label).copied().ok_or_else(|| {
        Error::Index(format!(
            "label {label} out of range for {} classes",
            probs.len()
        ))
    })
}

/// `log(p / (1 - p))` with `p` clipped to `[κ, 1 - κ]`. The clipped ends are
/// evaluated in logit space, since `1 - κ` itself rounds in f64.
pub fn logit_scaled_score(probs: &[f64], label: usize) -> Result<f64> {
    let p = label_prob(probs, label)?;
    let cap = ((1.0 - KAPPA) / KAPPA).ln();
    Ok(if p >= 1.0 - KAPPA {
        cap
    } else if p <= KAPPA {
        -cap
    } else {
        (p / (1.0 - p)).ln()
    })
}

/// Membership score of one output row; higher means more member-like.
pub fn score(probs: &[f64], label: usize, kind: ScoreKind) -> Result<f64> {
    match kind {
        ScoreKind::Loss => Ok(label_prob(probs, label)?.max(KAPPA).ln()),
        ScoreKind::Confidence => label_prob(probs, label),
        ScoreKind::LogitScaled => logit_scaled_score(probs, label),
        ScoreKind::Rank => {
            let p = label_prob(probs, label)?;
            Ok(probs.iter().filter(|&&q| q < p).count() as f64)
        }
    }
}
