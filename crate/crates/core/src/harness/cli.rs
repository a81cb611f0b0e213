use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::{
    apply_baseline, load_checkpoint, save_checkpoint, save_csv, shadow_audit, train_experiment,
    write_report, Dataset, ExperimentConfig, RunRecord,
};
use crate::audit::{
    logit_scaled_score, run_mi_game, run_standard_mi, run_stealthy_mi, run_stealthy_mi_obfuscated,
    run_stealthy_mi_perturbed, Challenge, ScoreKind,
};
use crate::encoder::Sample;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::poison::{train, AttackConfig, Variant};
use crate::rng::{derive_seed, tags, SplitMix64};
use crate::tensor::Tensor;

#[derive(Parser, Debug)]
#[command(
    name = "memcode",
    version,
    about = "Membership-encoding poisoning experiments on desk-scale models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in config: paper-default, norm-free or replacement-30.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of training epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct AuditArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated FPR levels for the tpr_at map.
    #[arg(long, value_delimiter = ',')]
    fpr: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    score: Option<ScoreArg>,
    /// Run record (JSON) to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    run_id: Option<String>,
    /// Accuracy of the clean reference model; defaults to the audited model's.
    #[arg(long)]
    clean_acc: Option<f64>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ScoreArg {
    Loss,
    Confidence,
    LogitScaled,
    Rank,
}

impl From<ScoreArg> for ScoreKind {
    fn from(s: ScoreArg) -> Self {
        match s {
            ScoreArg::Loss => ScoreKind::Loss,
            ScoreArg::Confidence => ScoreKind::Confidence,
            ScoreArg::LogitScaled => ScoreKind::LogitScaled,
            ScoreArg::Rank => ScoreKind::Rank,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum AdversaryArg {
    Coin,
    Threshold,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the configured dataset as CSV plus a split file.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Split tags file; defaults to `<out>.split`.
        #[arg(long)]
        split_out: Option<PathBuf>,
    },
    /// Train the configured model and write a checkpoint and a training report.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Training report (JSON); defaults to `<out>.report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Standard membership inference: query the model with the targets.
    Audit(AuditArgs),
    /// Stealthy membership inference through encoding samples.
    Attack {
        #[command(flatten)]
        audit: AuditArgs,
        /// Release only rank-preserving obfuscated outputs.
        #[arg(long)]
        obfuscate: bool,
        /// Perturb every target by this magnitude before encoding.
        #[arg(long)]
        perturb: Option<f64>,
    },
    /// Shadow-model LiRA against a checkpoint.
    Shadow {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of shadow models; defaults to the config's.
        #[arg(long)]
        models: Option<usize>,
        /// Use a seeded random subset of N members and N nonmembers as targets.
        #[arg(long)]
        targets: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        fpr: Option<Vec<f64>>,
        /// Per-target scores (CSV).
        #[arg(long)]
        out: PathBuf,
        /// Run record (JSON) for the LiRA report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Monte-Carlo membership inference game over the dataset's samples.
    Game {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 64)]
        train_size: usize,
        #[arg(long, value_enum, default_value = "threshold")]
        adversary: AdversaryArg,
        /// Logit-scaled score at or above which the threshold adversary says "member".
        #[arg(long, default_value_t = 4.0)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge run records into a summary CSV and per-run ROC files.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Run whose accuracy is the clean reference for acc_drop.
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long, value_delimiter = ',')]
        fpr: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        roc_dir: Option<PathBuf>,
    },
}

fn resolve(args: &ConfigArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let (mut cfg, base) = match (&args.config, &args.preset) {
        (Some(p), _) => {
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (ExperimentConfig::load(p)?, base)
        }
        (None, Some(name)) => (ExperimentConfig::preset(name)?, PathBuf::from(".")),
        (None, None) => return Err(Error::config("give --config or --preset")),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.attack.epochs = e;
        cfg.audit.checkpoint_epochs.retain(|&c| c <= e);
    }
    cfg.validate()?;
    Ok((cfg, base))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn accuracy(model: &Model, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    model.accuracy(&Tensor::from_rows(&rows)?, &labels)
}

/// `k` samples chosen without replacement, in their original order.
pub(crate) fn subset(samples: &[Sample], k: usize, rng: &mut SplitMix64) -> Vec<Sample> {
    let mut idx = rng.sample_indices(samples.len(), k.min(samples.len()));
    idx.sort_unstable();
    idx.into_iter().map(|i| samples[i].clone()).collect()
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn load_target(args: &AuditArgs) -> Result<(ExperimentConfig, Dataset, Model)> {
    let (cfg, base) = resolve(&args.cfg)?;
    let ds = cfg.dataset(&base)?;
    let topology = cfg.topology(ds.dim, ds.num_classes)?;
    let ckpt = load_checkpoint(&args.checkpoint, Some(&topology))?;
    Ok((cfg, ds, ckpt.model))
}

fn record(
    args: &AuditArgs,
    cfg: &ExperimentConfig,
    model: &Model,
    ds: &Dataset,
    report: crate::audit::MiReport,
) -> Result<()> {
    let poison_acc = accuracy(model, &ds.test)?;
    let rec = RunRecord {
        run_id: args
            .run_id
            .clone()
            .unwrap_or_else(|| cfg.attack.variant.name().to_string()),
        variant: cfg.attack.variant.name().to_string(),
        defense: cfg.defense.name().to_string(),
        clean_acc: args.clean_acc.unwrap_or(poison_acc),
        poison_acc,
        report,
    };
    write_json(&args.out, &rec)?;
    println!(
        "auc {:.4}, written to {}",
        rec.report.auc,
        args.out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            cfg,
            out,
            split_out,
        } => {
            let (cfg, base) = resolve(&cfg)?;
            let ds = cfg.dataset(&base)?;
            let split = split_out.unwrap_or_else(|| with_suffix(&out, ".split"));
            save_csv(&ds, &out, Some(&split))?;
            println!(
                "{} rows written to {}",
                ds.members.len() + ds.nonmembers.len() + ds.test.len(),
                out.display()
            );
        }
        Command::Train { cfg, out, report } => {
            let (cfg, base) = resolve(&cfg)?;
            let ds = cfg.dataset(&base)?;
            let hash = cfg.hash();
            let keep = cfg.audit.checkpoint_epochs.clone();
            let (model, rep) = train_experiment(&cfg, &ds, |epoch, m| {
                if keep.contains(&epoch) && epoch != cfg.attack.epochs {
                    save_checkpoint(
                        m,
                        &with_suffix(&out, &format!(".epoch{epoch}")),
                        epoch,
                        &hash,
                    )?;
                }
                Ok(())
            })?;
            save_checkpoint(&model, &out, cfg.attack.epochs, &hash)?;
            write_json(
                &report.unwrap_or_else(|| with_suffix(&out, ".report.json")),
                &rep,
            )?;
            let last = rep.accuracy.last().map_or(0.0, |a| a.test);
            println!(
                "trained {} epochs, test accuracy {last:.4}, checkpoint {}",
                cfg.attack.epochs,
                out.display()
            );
        }
        Command::Audit(args) => {
            let (cfg, ds, model) = load_target(&args)?;
            let levels = args
                .fpr
                .clone()
                .unwrap_or_else(|| cfg.audit.fpr_levels.clone());
            let kind = args.score.map_or(cfg.audit.score_kind, ScoreKind::from);
            let report = run_standard_mi(&model, &ds.members, &ds.nonmembers, kind, &levels)?;
            record(&args, &cfg, &model, &ds, report)?;
        }
        Command::Attack {
            audit: args,
            obfuscate,
            perturb,
        } => {
            let (cfg, ds, model) = load_target(&args)?;
            let levels = args
                .fpr
                .clone()
                .unwrap_or_else(|| cfg.audit.fpr_levels.clone());
            let spec = cfg.attack.spec;
            let report = match (obfuscate, perturb) {
                (true, Some(_)) => {
                    return Err(Error::config("--obfuscate and --perturb are exclusive"))
                }
                (true, None) => {
                    let kind = args.score.map_or(ScoreKind::Rank, ScoreKind::from);
                    let mut rng = SplitMix64::new(derive_seed(cfg.seed, tags::OBFUSCATE));
                    run_stealthy_mi_obfuscated(
                        &model,
                        &ds.members,
                        &ds.nonmembers,
                        &spec,
                        kind,
                        &mut rng,
                        &levels,
                    )?
                }
                (false, Some(m)) => {
                    let kind = args.score.map_or(cfg.audit.score_kind, ScoreKind::from);
                    let mut rng = SplitMix64::new(derive_seed(cfg.seed, tags::PERTURB));
                    run_stealthy_mi_perturbed(
                        &model,
                        &ds.members,
                        &ds.nonmembers,
                        &spec,
                        kind,
                        m,
                        &mut rng,
                        &levels,
                    )?
                }
                (false, None) => {
                    let kind = args.score.map_or(cfg.audit.score_kind, ScoreKind::from);
                    run_stealthy_mi(&model, &ds.members, &ds.nonmembers, &spec, kind, &levels)?
                }
            };
            record(&args, &cfg, &model, &ds, report)?;
        }
        Command::Shadow {
            cfg: cargs,
            checkpoint,
            models,
            targets,
            fpr,
            out,
            report,
        } => {
            let (cfg, base) = resolve(&cargs)?;
            let ds = cfg.dataset(&base)?;
            let topology = cfg.topology(ds.dim, ds.num_classes)?;
            let target = load_checkpoint(&checkpoint, Some(&topology))?.model;
            let mut rng = SplitMix64::new(derive_seed(cfg.seed, tags::SHADOW ^ 1));
            let (members, nonmembers) = match targets {
                Some(k) => (
                    subset(&ds.members, k, &mut rng),
                    subset(&ds.nonmembers, k, &mut rng),
                ),
                None => (ds.members.clone(), ds.nonmembers.clone()),
            };
            let (members, nonmembers) = (members.as_slice(), nonmembers.as_slice());
            let levels = fpr.unwrap_or_else(|| cfg.audit.fpr_levels.clone());
            let outcome = shadow_audit(
                &target,
                members,
                nonmembers,
                &topology,
                &cfg.sgd,
                cfg.attack.epochs,
                cfg.attack.batch_size,
                models.unwrap_or(cfg.audit.shadow_models),
                cfg.seed,
                &levels,
            )?;
            let mut csv = String::from("target,label,member,lira_score\n");
            for (i, ((t, m), s)) in outcome
                .targets
                .iter()
                .zip(&outcome.is_member)
                .zip(&outcome.scores)
                .enumerate()
            {
                csv.push_str(&format!("{i},{},{},{s}\n", t.label, u8::from(*m)));
            }
            fs::write(&out, csv)?;
            if let Some(p) = report {
                let acc = accuracy(&target, &ds.test)?;
                let rec = RunRecord {
                    run_id: "shadow-lira".into(),
                    variant: cfg.attack.variant.name().into(),
                    defense: cfg.defense.name().into(),
                    clean_acc: acc,
                    poison_acc: acc,
                    report: outcome.lira.clone(),
                };
                write_json(&p, &rec)?;
            }
            println!(
                "LiRA auc {:.4} (global threshold {:.4})",
                outcome.lira.auc, outcome.global.auc
            );
        }
        Command::Game {
            cfg: cargs,
            trials,
            train_size,
            adversary,
            threshold,
            out,
        } => {
            let (cfg, base) = resolve(&cargs)?;
            let ds = cfg.dataset(&base)?;
            let pool: Vec<Sample> = ds.all().cloned().collect();
            if pool.len() <= train_size {
                return Err(Error::InsufficientData(format!(
                    "{} samples cannot supply {} + 1 draws",
                    pool.len(),
                    train_size
                )));
            }
            let topology = cfg.topology(ds.dim, ds.num_classes)?;
            let mut rng = SplitMix64::new(derive_seed(cfg.seed, tags::GAME));
            let result = run_mi_game(
                |n, rng| {
                    rng.sample_indices(pool.len(), n)
                        .into_iter()
                        .map(|i| pool[i].clone())
                        .collect()
                },
                train_size,
                |train_set, rng| {
                    let seed = rng.next_u64();
                    let mut model = Model::new(topology.clone(), seed)?;
                    let attack = AttackConfig::new(
                        Variant::Clean,
                        cfg.attack.epochs,
                        cfg.attack.batch_size,
                        seed,
                    );
                    train(&mut model, train_set, &[], &attack, &cfg.sgd)?;
                    Ok(model)
                },
                |c: &Challenge<'_, Model>, rng| match adversary {
                    AdversaryArg::Coin => rng.coin(),
                    AdversaryArg::Threshold => Tensor::from_rows(&[c.target.features.as_slice()])
                        .and_then(|x| c.model.predict_proba(&x))
                        .and_then(|p| logit_scaled_score(p.row(0), c.target.label))
                        .map(|s| s >= threshold)
                        .unwrap_or(false),
                },
                trials,
                &mut rng,
            )?;
            if let Some(p) = out {
                write_json(&p, &result)?;
            }
            println!(
                "accuracy {:.4} over {} trials (guessing stdev {:.4})",
                result.accuracy,
                result.trials,
                result.null_stdev()
            );
        }
        Command::Report {
            runs,
            baseline,
            fpr,
            out,
            roc_dir,
        } => {
            let mut records = runs
                .iter()
                .map(|p| Ok(serde_json::from_str::<RunRecord>(&fs::read_to_string(p)?)?))
                .collect::<Result<Vec<_>>>()?;
            if let Some(b) = baseline {
                apply_baseline(&mut records, &b)?;
            }
            let levels = fpr.unwrap_or_else(|| {
                let mut l: Vec<f64> = records
                    .iter()
                    .flat_map(|r| r.report.tpr_at.keys())
                    .filter_map(|k| k.parse().ok())
                    .collect();
                l.sort_by(f64::total_cmp);
                l.dedup();
                l
            });
            write_report(&records, &levels, &out, roc_dir.as_deref())?;
            println!("{} runs summarized in {}", records.len(), out.display());
        }
    }
    Ok(())
}

/// Entry point behind the `memcode` binary. Returns the process exit code:
/// 0 on success, 1 on usage errors, 2 on runtime errors.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
