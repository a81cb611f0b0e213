use std::time::Instant;

use crate::defense::{
    check_rows_sum_to_one, dpsgd_model_gradient, mmd_squared_with_grad, one_hot, top1_soft_label,
    MmdConfig, TrainingDefense, ATTACK_SOFT_TOP1,
};
use crate::encoder::{gen_encoding_sample, EncodingSample, Sample};
use crate::error::{Error, Result};
use crate::nn::{argmax, softmax, weighted_soft_cross_entropy, Mode, Model, SgdConfig};
use crate::norm::EncodingSpec;
use crate::rng::{derive_seed, tags, SplitMix64};
use crate::tensor::Tensor;

use super::{
    mgda_coefficients, replace::replacement_count, AttackConfig, EpochAccuracy, TrainReport,
    Variant,
};

const MMD_REFERENCE_TAG: u64 = 0x6D6D_6472_6566_0000;

/// Knobs of [`train_with`] beyond the attack and optimizer settings.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub defense: TrainingDefense,
    /// Record train/test accuracy every this many epochs; the final epoch is
    /// always recorded. 0 means final epoch only.
    pub eval_every: usize,
}

/// Rows of one forward pass with their soft targets and loss weights, plus
/// the MMD reference rows, which get a forward pass of their own.
#[derive(Default)]
struct StepRows {
    x: Vec<f64>,
    targets: Vec<f64>,
    weights: Vec<f64>,
    /// Which rows make up each training example (DP-SGD clipping unit).
    units: Vec<Vec<usize>>,
    /// `[start, end)` rows of original samples.
    originals: (usize, usize),
    reference: Vec<f64>,
}

impl StepRows {
    fn push(&mut self, features: &[f64], target: Vec<f64>, weight: f64) -> usize {
        self.x.extend_from_slice(features);
        self.targets.extend(target);
        self.weights.push(weight);
        self.weights.len() - 1
    }

    fn push_reference(&mut self, features: &[f64]) {
        self.reference.extend_from_slice(features);
    }

    fn len(&self) -> usize {
        self.weights.len()
    }

    fn reference_len(&self, d: usize) -> usize {
        self.reference.len() / d
    }

    fn tensors(&self, d: usize, c: usize) -> Result<(Tensor, Tensor)> {
        Ok((
            Tensor::matrix(self.len(), d, self.x.clone())?,
            Tensor::matrix(self.len(), c, self.targets.clone())?,
        ))
    }
}

struct Encoder<'a> {
    spec: EncodingSpec,
    num_classes: usize,
    cache: Option<Vec<EncodingSample>>,
    members: &'a [Sample],
}

impl<'a> Encoder<'a> {
    fn new(
        members: &'a [Sample],
        spec: EncodingSpec,
        num_classes: usize,
        cached: bool,
    ) -> Result<Self> {
        let cache = if cached {
            Some(
                members
                    .iter()
                    .map(|s| gen_encoding_sample(s, &spec, num_classes))
                    .collect::<Result<_>>()?,
            )
        } else {
            None
        };
        Ok(Self {
            spec,
            num_classes,
            cache,
            members,
        })
    }

    fn get(&self, idx: usize) -> Result<EncodingSample> {
        match &self.cache {
            Some(c) => Ok(c[idx].clone()),
            None => gen_encoding_sample(&self.members[idx], &self.spec, self.num_classes),
        }
    }
}

fn encoding_target(label: usize, c: usize, soft: bool) -> Vec<f64> {
    if soft {
        top1_soft_label(label, c, ATTACK_SOFT_TOP1)
    } else {
        one_hot(label, c)
    }
}

/// `λ · J_softmax(p)ᵀ g` added to each row of `grad`.
fn add_through_softmax(
    grad: &mut Tensor,
    rows: std::ops::Range<usize>,
    probs: &Tensor,
    g: &Tensor,
    lambda: f64,
) {
    for (k, row) in rows.enumerate() {
        let (p, gp) = (probs.row(row), g.row(k));
        let dot: f64 = p.iter().zip(gp).map(|(a, b)| a * b).sum();
        for (j, v) in grad.row_mut(row).iter_mut().enumerate() {
            *v += lambda * p[j] * (gp[j] - dot);
        }
    }
}

/// Forward, loss, optional MMD term, backward; leaves the gradient of the
/// main rows in the model. The reference rows are forwarded in training
/// mode through a copy of the model so they neither mix into the main
/// batch's normalization statistics nor move its running statistics; the
/// gradient through them is returned separately.
fn loss_and_backward(
    model: &mut Model,
    rows: &StepRows,
    mmd: Option<&MmdConfig>,
) -> Result<(f64, Option<Vec<f64>>)> {
    let topo = model.topology();
    let (d, c) = (topo.input_dim, topo.num_classes);
    let (x, targets) = rows.tensors(d, c)?;
    model.zero_grad();
    let logits = model.forward(&x)?;
    let (mut loss, mut grad) = weighted_soft_cross_entropy(&logits, &targets, &rows.weights)?;
    let mut reference_grad = None;
    if let Some(cfg) = mmd {
        let (o0, o1) = rows.originals;
        let nr = rows.reference_len(d);
        if cfg.lambda > 0.0 && o1 > o0 && nr > 0 {
            let mut shadow = model.clone();
            let ref_logits = shadow.forward(&Tensor::matrix(nr, d, rows.reference.clone())?)?;
            let probs = softmax(&logits);
            let ref_probs = softmax(&ref_logits);
            let po = probs.select_rows(&(o0..o1).collect::<Vec<_>>());
            let (v, go, gr) = mmd_squared_with_grad(&po, &ref_probs, cfg.bandwidth)?;
            loss += cfg.lambda * v;
            add_through_softmax(&mut grad, o0..o1, &probs, &go, cfg.lambda);
            let mut ref_grad = Tensor::zeros(ref_logits.shape().to_vec());
            add_through_softmax(&mut ref_grad, 0..nr, &ref_probs, &gr, cfg.lambda);
            shadow.zero_grad();
            shadow.backward(&ref_grad)?;
            reference_grad = Some(shadow.flat_grads());
        }
    }
    model.backward(&grad)?;
    Ok((loss, reference_grad))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

/// Malicious objective on one batch: mean cross-entropy over the samples
/// plus mean cross-entropy over their encoding samples, forwarded together.
/// Returns the loss and the flattened parameter gradient; the model's
/// normalization running statistics advance as in a training step.
pub fn malicious_loss(
    model: &mut Model,
    batch: &[Sample],
    spec: &EncodingSpec,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::empty("malicious loss over an empty batch"));
    }
    let c = model.topology().num_classes;
    let n = batch.len() as f64;
    let mut rows = StepRows::default();
    for s in batch {
        rows.push(&s.features, one_hot(s.label, c), 1.0 / n);
    }
    for s in batch {
        let e = gen_encoding_sample(s, spec, c)?;
        rows.push(&e.features, one_hot(e.label, c), 1.0 / n);
    }
    model.set_mode(Mode::Train);
    let (loss, _) = loss_and_backward(model, &rows, None)?;
    Ok((loss, model.flat_grads()))
}

/// Cross-entropy on the training batch plus `λ·MMD²` between the softmax
/// outputs on the training batch and on the validation batch. Attacking
/// variants add their encoding-sample term, which the regularizer does not
/// see. Returns the loss and the flattened parameter gradient.
pub fn mmd_regularized_loss(
    model: &mut Model,
    train_batch: &[Sample],
    validation_batch: &[Sample],
    mmd: &MmdConfig,
    attack: &AttackConfig,
) -> Result<(f64, Vec<f64>)> {
    mmd.validate()?;
    if train_batch.is_empty() {
        return Err(Error::empty("MMD-regularized loss over an empty batch"));
    }
    let c = model.topology().num_classes;
    let n = train_batch.len() as f64;
    let mut rows = StepRows::default();
    for s in train_batch {
        rows.push(&s.features, one_hot(s.label, c), 1.0 / n);
    }
    rows.originals = (0, train_batch.len());
    if matches!(
        attack.variant,
        Variant::Basic | Variant::DualNorm | Variant::FixedCoef
    ) {
        let w = if attack.variant == Variant::FixedCoef {
            attack.beta.unwrap_or(1.0)
        } else {
            1.0
        };
        for s in train_batch {
            let e = gen_encoding_sample(s, &attack.spec, c)?;
            rows.push(&e.features, one_hot(e.label, c), w / n);
        }
    }
    for s in validation_batch {
        rows.push_reference(&s.features);
    }
    model.set_mode(Mode::Train);
    let (loss, reference_grad) = loss_and_backward(model, &rows, Some(mmd))?;
    let mut g = model.flat_grads();
    if let Some(r) = reference_grad {
        add_into(&mut g, &r);
    }
    Ok((loss, g))
}

pub fn train(
    model: &mut Model,
    members: &[Sample],
    test: &[Sample],
    attack: &AttackConfig,
    sgd: &SgdConfig,
) -> Result<TrainReport> {
    train_with(
        model,
        members,
        test,
        attack,
        sgd,
        &TrainOptions::default(),
        |_, _| Ok(()),
    )
}

fn check_samples(samples: &[Sample], d: usize, c: usize, what: &str) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        if s.features.len() != d {
            return Err(Error::dim(format!(
                "{what} sample {i} has {} features, model expects {d}",
                s.features.len()
            )));
        }
        if s.label >= c {
            return Err(Error::Index(format!(
                "{what} sample {i} has label {} with {c} classes",
                s.label
            )));
        }
    }
    Ok(())
}

fn validate_defense(
    defense: &TrainingDefense,
    attack: &AttackConfig,
    members: &[Sample],
    d: usize,
    c: usize,
) -> Result<()> {
    match defense {
        TrainingDefense::None => Ok(()),
        TrainingDefense::Dpsgd(cfg) => {
            cfg.validate()?;
            if attack.variant == Variant::Mgda {
                return Err(Error::config(
                    "DP-SGD cannot be combined with the MGDA variant",
                ));
            }
            Ok(())
        }
        TrainingDefense::Mmd { config, reference } => {
            config.validate()?;
            if attack.variant == Variant::Mgda {
                return Err(Error::config(
                    "MMD regularization cannot be combined with the MGDA variant",
                ));
            }
            check_samples(reference, d, c, "reference")
        }
        TrainingDefense::SoftLabel { targets } => {
            if targets.len() != members.len() {
                return Err(Error::dim(format!(
                    "{} soft labels for {} members",
                    targets.len(),
                    members.len()
                )));
            }
            let flat: Vec<f64> = targets.iter().flatten().copied().collect();
            let t = Tensor::matrix(targets.len(), c, flat)
                .map_err(|_| Error::dim(format!("soft labels must have {c} columns")))?;
            check_rows_sum_to_one(&t)
        }
    }
}

/// Trains `model` on `members` under `attack`, calling `on_epoch(epoch, model)`
/// after every epoch (1-based) so callers can checkpoint or audit.
pub fn train_with<F>(
    model: &mut Model,
    members: &[Sample],
    test: &[Sample],
    attack: &AttackConfig,
    sgd: &SgdConfig,
    options: &TrainOptions,
    mut on_epoch: F,
) -> Result<TrainReport>
where
    F: FnMut(usize, &Model) -> Result<()>,
{
    attack.validate()?;
    sgd.validate()?;
    attack.check_topology(model.topology())?;
    let (d, c) = (model.topology().input_dim, model.topology().num_classes);
    check_samples(members, d, c, "member")?;
    check_samples(test, d, c, "test")?;
    validate_defense(&options.defense, attack, members, d, c)?;
    if members.is_empty() {
        return Err(Error::empty("no training samples"));
    }

    let started = Instant::now();
    let encoder = Encoder::new(
        members,
        attack.spec,
        c,
        attack.cache_encodings && attack.variant.is_attack(),
    )?;
    let mut shuffle_rng = SplitMix64::new(derive_seed(attack.seed, tags::SHUFFLE));
    let mut replace_rng = SplitMix64::new(derive_seed(attack.seed, tags::REPLACE));
    let mut dp_rng = SplitMix64::new(derive_seed(attack.seed, tags::DPSGD));
    let mut ref_rng = SplitMix64::new(derive_seed(attack.seed, MMD_REFERENCE_TAG));
    let soft = matches!(options.defense, TrainingDefense::SoftLabel { .. });
    let dp = match &options.defense {
        TrainingDefense::Dpsgd(cfg) => Some(*cfg),
        _ => None,
    };
    let mmd = match &options.defense {
        TrainingDefense::Mmd { config, reference } => Some((config, reference.as_slice())),
        _ => None,
    };
    let member_target = |i: usize| -> Vec<f64> {
        match &options.defense {
            TrainingDefense::SoftLabel { targets } => targets[i].clone(),
            _ => one_hot(members[i].label, c),
        }
    };

    let mut report = TrainReport {
        variant: Some(attack.variant),
        ..TrainReport::default()
    };
    let mut order: Vec<usize> = (0..members.len()).collect();
    for epoch in 0..attack.epochs {
        model.set_mode(Mode::Train);
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut epoch_forward = 0u64;
        for batch in order.chunks(attack.batch_size) {
            let n = batch.len();
            // Per-example (DP-SGD) losses are summed, otherwise averaged.
            let scale = if dp.is_some() { 1.0 } else { 1.0 / n as f64 };

            if attack.variant == Variant::Mgda {
                let mut orig = StepRows::default();
                let mut enc = StepRows::default();
                for &i in batch {
                    orig.push(&members[i].features, member_target(i), scale);
                    let e = encoder.get(i)?;
                    enc.push(&e.features, encoding_target(e.label, c, soft), scale);
                }
                let (l_train, _) = loss_and_backward(model, &orig, None)?;
                let g_train = model.flat_grads();
                let (l_syn, _) = loss_and_backward(model, &enc, None)?;
                let g_syn = model.flat_grads();
                let (a, b) = mgda_coefficients(&g_train, &g_syn)?;
                let g: Vec<f64> = g_train
                    .iter()
                    .zip(&g_syn)
                    .map(|(x, y)| a * x + b * y)
                    .collect();
                model.set_flat_grads(&g)?;
                model.sgd_step(sgd, epoch)?;
                loss_sum += (l_train + l_syn) * n as f64;
                epoch_forward += 2 * n as u64;
                continue;
            }

            let mut rows = StepRows::default();
            match attack.variant {
                Variant::Clean => {
                    for &i in batch {
                        let r = rows.push(&members[i].features, member_target(i), scale);
                        rows.units.push(vec![r]);
                    }
                }
                Variant::Replacement => {
                    let k = replacement_count(attack.replacement_ratio.unwrap_or(0.0), n);
                    let mut replaced = vec![false; n];
                    for j in replace_rng.sample_indices(n, k) {
                        replaced[j] = true;
                    }
                    for (j, &i) in batch.iter().enumerate() {
                        let r = if replaced[j] {
                            let e = encoder.get(i)?;
                            rows.push(&e.features, encoding_target(e.label, c, soft), scale)
                        } else {
                            rows.push(&members[i].features, member_target(i), scale)
                        };
                        rows.units.push(vec![r]);
                    }
                }
                Variant::Basic | Variant::DualNorm | Variant::FixedCoef => {
                    let beta = if attack.variant == Variant::FixedCoef {
                        attack.beta.unwrap_or(1.0)
                    } else {
                        1.0
                    };
                    for &i in batch {
                        rows.push(&members[i].features, member_target(i), scale);
                    }
                    for (j, &i) in batch.iter().enumerate() {
                        let e = encoder.get(i)?;
                        let r =
                            rows.push(&e.features, encoding_target(e.label, c, soft), beta * scale);
                        rows.units.push(vec![j, r]);
                    }
                }
                Variant::Mgda => unreachable!("handled above"),
            }
            rows.originals = (0, n);
            if let Some((_, reference)) = mmd {
                let picks = if reference.len() >= n {
                    ref_rng.sample_indices(reference.len(), n)
                } else {
                    (0..n).map(|_| ref_rng.index(reference.len())).collect()
                };
                for r in picks {
                    rows.push_reference(&reference[r].features);
                }
            }

            let (loss, reference_grad) = loss_and_backward(model, &rows, mmd.map(|(cfg, _)| cfg))?;
            epoch_forward += (rows.len() + rows.reference_len(d)) as u64;
            if let Some(cfg) = &dp {
                let mut g = dpsgd_model_gradient(model, &rows.units, cfg, &mut dp_rng)?;
                // Reference rows are non-member data and are not privatized.
                if let Some(r) = &reference_grad {
                    add_into(&mut g, r);
                }
                model.set_flat_grads(&g)?;
                loss_sum += loss;
            } else {
                if let Some(r) = &reference_grad {
                    let mut g = model.flat_grads();
                    add_into(&mut g, r);
                    model.set_flat_grads(&g)?;
                }
                loss_sum += loss * n as f64;
            }
            model.sgd_step(sgd, epoch)?;
        }
        if !loss_sum.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at epoch {}",
                epoch + 1
            )));
        }
        report.epoch_loss.push(loss_sum / members.len() as f64);
        report.epoch_forward_passes.push(epoch_forward);
        report.forward_pass_count += epoch_forward;

        let last = epoch + 1 == attack.epochs;
        if last || (options.eval_every > 0 && (epoch + 1) % options.eval_every == 0) {
            report.accuracy.push(EpochAccuracy {
                epoch: epoch + 1,
                train: accuracy(model, members)?,
                test: accuracy(model, test)?,
            });
        }
        on_epoch(epoch + 1, model)?;
    }
    model.set_mode(Mode::Eval);
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Eval-mode top-1 accuracy on `samples`; 0 for an empty set.
pub(crate) fn accuracy(model: &Model, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
    let logits = model.infer(&Tensor::from_rows(&rows)?)?;
    let hits = logits
        .iter_rows()
        .zip(samples)
        .filter(|(r, s)| argmax(r) == s.label)
        .count();
    Ok(hits as f64 / samples.len() as f64)
}
