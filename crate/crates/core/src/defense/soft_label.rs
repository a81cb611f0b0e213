use crate::encoder::Sample;
use crate::error::{Error, Result};
use crate::nn::{weighted_soft_cross_entropy, Model, NormKind, SgdConfig, Topology};
use crate::poison::{train, AttackConfig, Variant};
use crate::rng::{derive_seed, tags, SplitMix64};
use crate::tensor::Tensor;

/// Soft label with `top1` on `label` and the remainder spread evenly.
pub fn top1_soft_label(label: usize, num_classes: usize, top1: f64) -> Vec<f64> {
    let rest = (1.0 - top1) / (num_classes - 1) as f64;
    (0..num_classes)
        .map(|c| if c == label { top1 } else { rest })
        .collect()
}

pub fn one_hot(label: usize, num_classes: usize) -> Vec<f64> {
    (0..num_classes)
        .map(|c| if c == label { 1.0 } else { 0.0 })
        .collect()
}

pub(crate) fn check_rows_sum_to_one(targets: &Tensor) -> Result<()> {
    for (i, row) in targets.iter_rows().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&v| v < 0.0) {
            return Err(Error::Format(format!("soft label row {i} sums to {s}")));
        }
    }
    Ok(())
}

/// Mean cross-entropy of the model's predictions against soft targets,
/// computed with a forward pass in the model's current mode.
pub fn soft_label_loss(model: &mut Model, x: &Tensor, soft_labels: &Tensor) -> Result<f64> {
    check_rows_sum_to_one(soft_labels)?;
    let n = x.rows();
    if n == 0 {
        return Err(Error::empty("soft-label loss over an empty batch"));
    }
    let logits = model.forward(x)?;
    let w = vec![1.0 / n as f64; n];
    Ok(weighted_soft_cross_entropy(&logits, soft_labels, &w)?.0)
}

/// Soft labels from two teachers, each trained (clean) on a random half of
/// `members` and queried on the other half, so no sample's label comes from
/// a model that saw it.
pub fn teacher_soft_labels(
    members: &[Sample],
    topology: &Topology,
    sgd: &SgdConfig,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if members.len() < 2 {
        return Err(Error::InsufficientData(
            "soft-label teachers need at least 2 members".into(),
        ));
    }
    let mut rng = SplitMix64::new(derive_seed(seed, tags::TEACHER));
    let mut order: Vec<usize> = (0..members.len()).collect();
    rng.shuffle(&mut order);
    let (a, b) = order.split_at(members.len() / 2);
    let mut topology = topology.clone();
    topology.encoding = None;
    if topology.norm == NormKind::Dual {
        topology.norm = NormKind::Standard;
    }
    let mut soft = vec![Vec::new(); members.len()];
    for (k, (fit, query)) in [(a, b), (b, a)].into_iter().enumerate() {
        let train_set: Vec<Sample> = fit.iter().map(|&i| members[i].clone()).collect();
        let teacher_seed = rng.next_u64();
        let mut teacher = Model::new(topology.clone(), teacher_seed)?;
        let attack = AttackConfig::new(
            Variant::Clean,
            epochs,
            batch_size,
            derive_seed(seed, k as u64 + 1),
        );
        train(&mut teacher, &train_set, &[], &attack, sgd)?;
        let rows: Vec<&[f64]> = query
            .iter()
            .map(|&i| members[i].features.as_slice())
            .collect();
        let probs = teacher.predict_proba(&Tensor::from_rows(&rows)?)?;
        for (&i, p) in query.iter().zip(probs.iter_rows()) {
            soft[i] = p.to_vec();
        }
    }
    Ok(soft)
}
