use serde::{Deserialize, Serialize};

use super::{logit_scaled_score, roc_and_tpr, MiReport, MiScoreSet, Protocol, ScoreKind};
use crate::encoder::Sample;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

pub const SIGMA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiraFit {
    pub mu_in: f64,
    pub sigma_in: f64,
    pub mu_out: f64,
    pub sigma_out: f64,
}

fn mean_stdev(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt().max(SIGMA_FLOOR))
}

pub fn lira_fit(in_scores: &[f64], out_scores: &[f64]) -> Result<LiraFit> {
    if in_scores.len() < 2 || out_scores.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "LiRA fit needs at least 2 IN and 2 OUT scores, got {} and {}",
            in_scores.len(),
            out_scores.len()
        )));
    }
    let (mu_in, sigma_in) = mean_stdev(in_scores);
    let (mu_out, sigma_out) = mean_stdev(out_scores);
    Ok(LiraFit {
        mu_in,
        sigma_in,
        mu_out,
        sigma_out,
    })
}

fn log_normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

pub fn lira_score(target: f64, fit: &LiraFit) -> f64 {
    log_normal_pdf(target, fit.mu_in, fit.sigma_in)
        - log_normal_pdf(target, fit.mu_out, fit.sigma_out)
}

/// Per-model membership of every target and the logit-scaled scores each
/// shadow model assigned to each target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowEnsemble {
    /// `membership[m][t]`: target `t` was in shadow model `m`'s training set.
    pub membership: Vec<Vec<bool>>,
    pub in_scores: Vec<Vec<f64>>,
    pub out_scores: Vec<Vec<f64>>,
}

impl ShadowEnsemble {
    pub fn num_models(&self) -> usize {
        self.membership.len()
    }

    pub fn fits(&self) -> Result<Vec<LiraFit>> {
        self.in_scores
            .iter()
            .zip(&self.out_scores)
            .map(|(i, o)| lira_fit(i, o))
            .collect()
    }
}

/// Each target is IN for exactly `num_models / 2` models, chosen at random.
pub fn balanced_assignment(
    num_targets: usize,
    num_models: usize,
    rng: &mut SplitMix64,
) -> Result<Vec<Vec<bool>>> {
    if num_models < 4 || !num_models.is_multiple_of(2) {
        return Err(Error::config(format!(
            "shadow model count must be even and at least 4, got {num_models}"
        )));
    }
    let mut membership = vec![vec![false; num_targets]; num_models];
    for t in 0..num_targets {
        for m in rng.sample_indices(num_models, num_models / 2) {
            membership[m][t] = true;
        }
    }
    Ok(membership)
}

/// Logit-scaled score of each sample under `model` in eval mode.
pub fn logit_scores(model: &Model, samples: &[Sample]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
    let probs = model.predict_proba(&Tensor::from_rows(&rows)?)?;
    probs
        .iter_rows()
        .zip(samples)
        .map(|(p, s)| logit_scaled_score(p, s.label))
        .collect()
}

/// Trains `num_models` shadow models with `train_model(training_set, index)`,
/// each on its IN half of `targets`, and collects their scores on every target.
pub fn shadow_lira<F>(
    targets: &[Sample],
    num_models: usize,
    rng: &mut SplitMix64,
    mut train_model: F,
) -> Result<ShadowEnsemble>
where
    F: FnMut(&[Sample], usize) -> Result<Model>,
{
    let membership = balanced_assignment(targets.len(), num_models, rng)?;
    let mut in_scores = vec![Vec::with_capacity(num_models / 2); targets.len()];
    let mut out_scores = vec![Vec::with_capacity(num_models / 2); targets.len()];
    for (m, row) in membership.iter().enumerate() {
        let train_set: Vec<Sample> = targets
            .iter()
            .zip(row)
            .filter(|(_, &inn)| inn)
            .map(|(s, _)| s.clone())
            .collect();
        let model = train_model(&train_set, m)?;
        for (t, s) in logit_scores(&model, targets)?.into_iter().enumerate() {
            if row[t] {
                in_scores[t].push(s);
            } else {
                out_scores[t].push(s);
            }
        }
    }
    Ok(ShadowEnsemble {
        membership,
        in_scores,
        out_scores,
    })
}

/// LiRA scores of `targets` under `model`, each against its own fit.
pub fn lira_scores(model: &Model, targets: &[Sample], fits: &[LiraFit]) -> Result<Vec<f64>> {
    if fits.len() != targets.len() {
        return Err(Error::dim(format!(
            "{} fits for {} targets",
            fits.len(),
            targets.len()
        )));
    }
    Ok(logit_scores(model, targets)?
        .iter()
        .zip(fits)
        .map(|(&s, f)| lira_score(s, f))
        .collect())
}

/// Splits per-target LiRA scores by ground-truth membership and sweeps them.
pub fn lira_report(scores: &[f64], is_member: &[bool], fpr_levels: &[f64]) -> Result<MiReport> {
    if scores.len() != is_member.len() {
        return Err(Error::dim(format!(
            "{} scores for {} membership flags",
            scores.len(),
            is_member.len()
        )));
    }
    let (mut member_scores, mut nonmember_scores) = (Vec::new(), Vec::new());
    for (&s, &m) in scores.iter().zip(is_member) {
        if m {
            member_scores.push(s);
        } else {
            nonmember_scores.push(s);
        }
    }
    roc_and_tpr(
        &MiScoreSet {
            member_scores,
            nonmember_scores,
            protocol: Protocol::Standard,
            score_kind: ScoreKind::LogitScaled,
        },
        fpr_levels,
    )
}
