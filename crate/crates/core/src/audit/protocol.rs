use super::{roc_and_tpr, score, MiReport, MiScoreSet, Protocol, ScoreKind};
use crate::defense::obfuscate_output;
use crate::encoder::{gen_encoding_sample, perturb_target, Sample};
use crate::error::Result;
use crate::nn::Model;
use crate::norm::EncodingSpec;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Model output on each query, optionally passed through output obfuscation,
/// then reduced to a membership score.
pub fn score_queries(
    model: &Model,
    queries: &[Sample],
    kind: ScoreKind,
    mut obfuscate: Option<&mut SplitMix64>,
) -> Result<Vec<f64>> {
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    let rows: Vec<&[f64]> = queries.iter().map(|s| s.features.as_slice()).collect();
    let probs = model.predict_proba(&Tensor::from_rows(&rows)?)?;
    probs
        .iter_rows()
        .zip(queries)
        .map(|(p, q)| match obfuscate.as_deref_mut() {
            Some(rng) => score(&obfuscate_output(p, rng), q.label, kind),
            None => score(p, q.label, kind),
        })
        .collect()
}

fn report(
    model: &Model,
    members: &[Sample],
    nonmembers: &[Sample],
    protocol: Protocol,
    kind: ScoreKind,
    mut obfuscate: Option<&mut SplitMix64>,
    fpr_levels: &[f64],
) -> Result<MiReport> {
    let member_scores = score_queries(model, members, kind, obfuscate.as_deref_mut())?;
    let nonmember_scores = score_queries(model, nonmembers, kind, obfuscate)?;
    roc_and_tpr(
        &MiScoreSet {
            member_scores,
            nonmember_scores,
            protocol,
            score_kind: kind,
        },
        fpr_levels,
    )
}

/// Queries the model with the targets themselves. With logit-scaled scores
/// this is the shadow-free global-threshold attack.
pub fn run_standard_mi(
    model: &Model,
    members: &[Sample],
    nonmembers: &[Sample],
    kind: ScoreKind,
    fpr_levels: &[f64],
) -> Result<MiReport> {
    report(
        model,
        members,
        nonmembers,
        Protocol::Standard,
        kind,
        None,
        fpr_levels,
    )
}

pub fn encode_targets(
    targets: &[Sample],
    spec: &EncodingSpec,
    num_classes: usize,
) -> Result<Vec<Sample>> {
    targets
        .iter()
        .map(|s| Ok(gen_encoding_sample(s, spec, num_classes)?.to_sample()))
        .collect()
}

/// Queries the model with each target's encoding sample and its label.
pub fn run_stealthy_mi(
    model: &Model,
    members: &[Sample],
    nonmembers: &[Sample],
    spec: &EncodingSpec,
    kind: ScoreKind,
    fpr_levels: &[f64],
) -> Result<MiReport> {
    let c = model.topology().num_classes;
    let (m, n) = (
        encode_targets(members, spec, c)?,
        encode_targets(nonmembers, spec, c)?,
    );
    report(model, &m, &n, Protocol::Stealthy, kind, None, fpr_levels)
}

/// Stealthy MI against a model whose outputs are obfuscated before release.
pub fn run_stealthy_mi_obfuscated(
    model: &Model,
    members: &[Sample],
    nonmembers: &[Sample],
    spec: &EncodingSpec,
    kind: ScoreKind,
    rng: &mut SplitMix64,
    fpr_levels: &[f64],
) -> Result<MiReport> {
    let c = model.topology().num_classes;
    let (m, n) = (
        encode_targets(members, spec, c)?,
        encode_targets(nonmembers, spec, c)?,
    );
    report(
        model,
        &m,
        &n,
        Protocol::Stealthy,
        kind,
        Some(rng),
        fpr_levels,
    )
}

/// Countermeasure audit: every target is perturbed before the adversary
/// derives its encoding sample, so the derived seeds no longer match.
#[allow(clippy::too_many_arguments)]
pub fn run_stealthy_mi_perturbed(
    model: &Model,
    members: &[Sample],
    nonmembers: &[Sample],
    spec: &EncodingSpec,
    kind: ScoreKind,
    magnitude: f64,
    rng: &mut SplitMix64,
    fpr_levels: &[f64],
) -> Result<MiReport> {
    let perturb = |set: &[Sample], rng: &mut SplitMix64| -> Result<Vec<Sample>> {
        set.iter()
            .map(|s| perturb_target(s, magnitude, rng))
            .collect()
    };
    let m = perturb(members, rng)?;
    let n = perturb(nonmembers, rng)?;
    run_stealthy_mi(model, &m, &n, spec, kind, fpr_levels)
}
