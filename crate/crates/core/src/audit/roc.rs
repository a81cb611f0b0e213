use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ScoreKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Query the model with the target itself.
    Standard,
    /// Query the model with the target's encoding sample.
    Stealthy,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Standard => "standard",
            Protocol::Stealthy => "stealthy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiScoreSet {
    pub member_scores: Vec<f64>,
    pub nonmember_scores: Vec<f64>,
    pub protocol: Protocol,
    pub score_kind: ScoreKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiReport {
    pub protocol: Protocol,
    pub score_kind: ScoreKind,
    pub member_scores: Vec<f64>,
    pub nonmember_scores: Vec<f64>,
    /// `(fpr, tpr)` points from `(0, 0)` to `(1, 1)`.
    pub roc: Vec<(f64, f64)>,
    pub auc: f64,
    /// Requested FPR level (decimal string) → TPR.
    pub tpr_at: BTreeMap<String, f64>,
}

impl MiReport {
    /// Max TPR over ROC points with FPR ≤ `fpr`.
    pub fn tpr_at_fpr(&self, fpr: f64) -> f64 {
        tpr_at_fpr(&self.roc, fpr)
    }

    /// Smallest nonzero FPR the nonmember count allows.
    pub fn lowest_fpr(&self) -> f64 {
        1.0 / self.nonmember_scores.len() as f64
    }

    pub fn tpr_at_lowest_fpr(&self) -> f64 {
        self.tpr_at_fpr(self.lowest_fpr())
    }
}

pub fn fpr_key(level: f64) -> String {
    format!("{level}")
}

fn tpr_at_fpr(roc: &[(f64, f64)], fpr: f64) -> f64 {
    // Tolerate the rounding in k/n when a level is given as a decimal.
    let limit = fpr + 1e-12;
    roc.iter()
        .filter(|p| p.0 <= limit)
        .map(|p| p.1)
        .fold(0.0, f64::max)
}

/// ROC curve over every distinct threshold: a target is called a member
/// when its score is at or above the threshold, so tied scores move together.
pub fn roc_curve(members: &[f64], nonmembers: &[f64]) -> Result<Vec<(f64, f64)>> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::empty("ROC needs both member and nonmember scores"));
    }
    if members.iter().chain(nonmembers).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("membership score".into()));
    }
    let mut all: Vec<(f64, bool)> = members
        .iter()
        .map(|&s| (s, true))
        .chain(nonmembers.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (nm, nn) = (members.len() as f64, nonmembers.len() as f64);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut roc = vec![(0.0, 0.0)];
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.push((fp as f64 / nn, tp as f64 / nm));
    }
    Ok(roc)
}

pub fn trapezoid_auc(roc: &[(f64, f64)]) -> f64 {
    roc.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

pub fn roc_and_tpr(scores: &MiScoreSet, fpr_levels: &[f64]) -> Result<MiReport> {
    let roc = roc_curve(&scores.member_scores, &scores.nonmember_scores)?;
    let auc = trapezoid_auc(&roc).clamp(0.0, 1.0);
    let tpr_at = fpr_levels
        .iter()
        .map(|&f| (fpr_key(f), tpr_at_fpr(&roc, f)))
        .collect();
    Ok(MiReport {
        protocol: scores.protocol,
        score_kind: scores.score_kind,
        member_scores: scores.member_scores.clone(),
        nonmember_scores: scores.nonmember_scores.clone(),
        roc,
        auc,
        tpr_at,
    })
}
