use super::{Dataset, DefenseConfig, ExperimentConfig};
use crate::audit::{
    lira_report, lira_scores, run_standard_mi, shadow_lira, MiReport, ScoreKind, ShadowEnsemble,
};
use crate::defense::{teacher_soft_labels, TrainingDefense};
use crate::encoder::Sample;
use crate::error::Result;
use crate::nn::{Model, SgdConfig, Topology};
use crate::poison::{train, train_with, AttackConfig, TrainOptions, TrainReport, Variant};
use crate::rng::{derive_seed, mix64, tags, SplitMix64};

/// Resolves the configured defense against the dataset.
pub fn training_defense(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    topology: &Topology,
) -> Result<TrainingDefense> {
    Ok(match &cfg.defense {
        DefenseConfig::None => TrainingDefense::None,
        DefenseConfig::Dpsgd(d) => TrainingDefense::Dpsgd(*d),
        DefenseConfig::Mmd(m) => TrainingDefense::Mmd {
            config: *m,
            reference: ds.test.clone(),
        },
        DefenseConfig::SoftLabel => TrainingDefense::SoftLabel {
            targets: teacher_soft_labels(
                &ds.members,
                topology,
                &cfg.sgd,
                cfg.attack.epochs,
                cfg.attack.batch_size,
                derive_seed(cfg.seed, tags::TEACHER),
            )?,
        },
    })
}

/// Builds and trains the configured model on the members, calling
/// `on_epoch` after every epoch.
pub fn train_experiment<F>(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    on_epoch: F,
) -> Result<(Model, TrainReport)>
where
    F: FnMut(usize, &Model) -> Result<()>,
{
    let topology = cfg.topology(ds.dim, ds.num_classes)?;
    let mut model = Model::new(topology.clone(), cfg.model_seed())?;
    let options = TrainOptions {
        defense: training_defense(cfg, ds, &topology)?,
        eval_every: 0,
    };
    let report = train_with(
        &mut model,
        &ds.members,
        &ds.test,
        &cfg.attack_config(),
        &cfg.sgd,
        &options,
        on_epoch,
    )?;
    Ok((model, report))
}

/// LiRA against a trained target, with shadows trained (clean) on balanced
/// halves of `members ∪ nonmembers`.
#[derive(Debug, Clone)]
pub struct ShadowOutcome {
    pub targets: Vec<Sample>,
    pub is_member: Vec<bool>,
    pub scores: Vec<f64>,
    pub ensemble: ShadowEnsemble,
    pub lira: MiReport,
    /// Shadow-free global-threshold attack on the same targets.
    pub global: MiReport,
}

#[allow(clippy::too_many_arguments)]
pub fn shadow_audit(
    target: &Model,
    members: &[Sample],
    nonmembers: &[Sample],
    topology: &Topology,
    sgd: &SgdConfig,
    epochs: usize,
    batch_size: usize,
    num_models: usize,
    seed: u64,
    fpr_levels: &[f64],
) -> Result<ShadowOutcome> {
    let targets: Vec<Sample> = members.iter().chain(nonmembers).cloned().collect();
    let is_member: Vec<bool> = (0..targets.len()).map(|i| i < members.len()).collect();
    let root = derive_seed(seed, tags::SHADOW);
    let mut rng = SplitMix64::new(root);
    let ensemble = shadow_lira(&targets, num_models, &mut rng, |train_set, m| {
        let model_seed = mix64(root ^ (m as u64 + 1));
        let mut model = Model::new(topology.clone(), model_seed)?;
        let attack = AttackConfig::new(Variant::Clean, epochs, batch_size, model_seed);
        train(&mut model, train_set, &[], &attack, sgd)?;
        Ok(model)
    })?;
    let scores = lira_scores(target, &targets, &ensemble.fits()?)?;
    let lira = lira_report(&scores, &is_member, fpr_levels)?;
    let global = run_standard_mi(
        target,
        members,
        nonmembers,
        ScoreKind::LogitScaled,
        fpr_levels,
    )?;
    Ok(ShadowOutcome {
        targets,
        is_member,
        scores,
        ensemble,
        lira,
        global,
    })
}
