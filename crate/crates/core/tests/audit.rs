use memcode::audit::{
    balanced_assignment, lira_fit, lira_score, roc_and_tpr, run_mi_game, run_standard_mi,
    run_stealthy_mi, MiScoreSet, Protocol, ScoreKind,
};
use memcode::harness::{gen_blobs, shadow_audit, BlobParams, Dataset};
use memcode::nn::{softmax, Model, NormKind, SgdConfig, Topology};
use memcode::norm::EncodingSpec;
use memcode::poison::{train, AttackConfig, Variant};
use memcode::rng::SplitMix64;
use memcode::{Sample, Tensor};
use proptest::prelude::*;

fn set(m: &[f64], n: &[f64]) -> MiScoreSet {
    MiScoreSet {
        member_scores: m.to_vec(),
        nonmember_scores: n.to_vec(),
        protocol: Protocol::Standard,
        score_kind: ScoreKind::LogitScaled,
    }
}

fn pairwise_auc(m: &[f64], n: &[f64]) -> f64 {
    let mut wins = 0.0;
    for a in m {
        for b in n {
            wins += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (m.len() * n.len()) as f64
}

#[test]
fn roc_matches_threshold_enumeration_on_twenty_plus_twenty() {
    let mut rng = SplitMix64::new(1);
    for _ in 0..50 {
        let m: Vec<f64> = (0..20).map(|_| rng.normal(0.5, 1.0)).collect();
        let n: Vec<f64> = (0..20).map(|_| rng.normal(0.0, 1.0)).collect();
        let r = roc_and_tpr(&set(&m, &n), &[0.05, 0.1]).unwrap();
        let mut ts: Vec<f64> = m.iter().chain(&n).copied().collect();
        ts.sort_by(|a, b| b.total_cmp(a));
        let mut want = vec![(0.0, 0.0)];
        for t in ts {
            let tp = m.iter().filter(|&&s| s >= t).count() as f64 / 20.0;
            let fp = n.iter().filter(|&&s| s >= t).count() as f64 / 20.0;
            want.push((fp, tp));
        }
        assert_eq!(r.roc, want);
        assert!((r.auc - pairwise_auc(&m, &n)).abs() < 1e-12);
        assert_eq!(
            r.tpr_at.keys().cloned().collect::<Vec<_>>(),
            vec!["0.05".to_string(), "0.1".to_string()]
        );
    }
}

proptest! {
    /// ROC and AUC depend only on the order of the scores.
    #[test]
    fn roc_is_invariant_under_monotone_maps(
        m in prop::collection::vec(-5.0f64..5.0, 1..40),
        n in prop::collection::vec(-5.0f64..5.0, 1..40),
    ) {
        let a = roc_and_tpr(&set(&m, &n), &[]).unwrap();
        let f = |v: &f64| (2.0 * v).exp() + v;
        let mf: Vec<f64> = m.iter().map(f).collect();
        let nf: Vec<f64> = n.iter().map(f).collect();
        let b = roc_and_tpr(&set(&mf, &nf), &[]).unwrap();
        prop_assert_eq!(&a.roc, &b.roc);
        prop_assert!((a.auc - b.auc).abs() < 1e-12);
        prop_assert!((a.auc - pairwise_auc(&m, &n)).abs() < 1e-12);
        for w in a.roc.windows(2) {
            prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn shadow_assignment_is_balanced(targets in 1usize..60, half in 2usize..10, seed in any::<u64>()) {
        let models = 2 * half;
        let mb = balanced_assignment(targets, models, &mut SplitMix64::new(seed)).unwrap();
        prop_assert_eq!(mb.len(), models);
        for t in 0..targets {
            prop_assert_eq!(mb.iter().filter(|row| row[t]).count(), half);
        }
    }
}

#[test]
fn lira_fit_matches_two_pass_statistics() {
    let mut rng = SplitMix64::new(2);
    for k in [2usize, 5, 8, 64] {
        let a: Vec<f64> = (0..k).map(|_| rng.normal(3.0, 2.0)).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.normal(-1.0, 0.5)).collect();
        let stats = |v: &[f64]| {
            let mu = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (v.len() - 1) as f64;
            (mu, var.sqrt())
        };
        let fit = lira_fit(&a, &b).unwrap();
        let ((mi, si), (mo, so)) = (stats(&a), stats(&b));
        assert!((fit.mu_in - mi).abs() < 1e-12 && (fit.sigma_in - si).abs() < 1e-12);
        assert!((fit.mu_out - mo).abs() < 1e-12 && (fit.sigma_out - so).abs() < 1e-12);
    }
    let sym = lira_fit(&[0.0, 2.0], &[-1.0, 1.0]).unwrap();
    assert!(lira_score(0.5, &sym).abs() < 1e-12);
}

fn overfit_blobs(seed: u64) -> Dataset {
    let params = BlobParams {
        num_classes: 4,
        dim: 16,
        per_class_members: 25,
        per_class_nonmembers: 25,
        per_class_test: 0,
        class_spread: 0.4,
        within_spread: 1.0,
    };
    gen_blobs(&params, seed).unwrap()
}

fn quick_train(
    members: &[Sample],
    variant: Variant,
    norm: NormKind,
    epochs: usize,
    seed: u64,
) -> Model {
    let mut t = Topology::mlp(members[0].features.len(), &[64, 64], 4, norm);
    if norm == NormKind::Dual {
        t.encoding = Some(EncodingSpec::default());
    }
    let mut model = Model::new(t, seed).unwrap();
    let sgd = SgdConfig {
        schedule: vec![],
        ..SgdConfig::default()
    };
    train(
        &mut model,
        members,
        &[],
        &AttackConfig::new(variant, epochs, 16, seed),
        &sgd,
    )
    .unwrap();
    model
}

#[test]
fn standard_mi_separates_on_overfit_and_not_at_init() {
    let ds = overfit_blobs(3);
    let untrained = Model::new(Topology::mlp(16, &[64, 64], 4, NormKind::Standard), 4).unwrap();
    let r0 = run_standard_mi(
        &untrained,
        &ds.members,
        &ds.nonmembers,
        ScoreKind::LogitScaled,
        &[],
    )
    .unwrap();
    assert!((r0.auc - 0.5).abs() <= 0.1, "untrained AUC {}", r0.auc);

    let model = quick_train(&ds.members, Variant::Clean, NormKind::Standard, 60, 5);
    let r = run_standard_mi(
        &model,
        &ds.members,
        &ds.nonmembers,
        ScoreKind::LogitScaled,
        &[],
    )
    .unwrap();
    assert!(r.auc > 0.6, "overfit AUC {}", r.auc);
    let s = run_stealthy_mi(
        &model,
        &ds.members,
        &ds.nonmembers,
        &EncodingSpec::default(),
        ScoreKind::LogitScaled,
        &[],
    )
    .unwrap();
    assert!(
        (s.auc - 0.5).abs() <= 0.1,
        "stealthy AUC on clean model {}",
        s.auc
    );
}

#[test]
fn stealthy_mi_separates_on_a_poisoned_model() {
    let ds = overfit_blobs(6);
    let model = quick_train(&ds.members, Variant::DualNorm, NormKind::Dual, 40, 7);
    let r = run_stealthy_mi(
        &model,
        &ds.members,
        &ds.nonmembers,
        &EncodingSpec::default(),
        ScoreKind::LogitScaled,
        &[],
    )
    .unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&r.member_scores) > mean(&r.nonmember_scores));
    assert!(r.auc > 0.75, "stealthy AUC {}", r.auc);
}

#[test]
fn lira_end_to_end_members_score_higher() {
    let ds = overfit_blobs(8);
    let (members, nonmembers) = (&ds.members[..], &ds.nonmembers[..]);
    let target = quick_train(members, Variant::Clean, NormKind::Standard, 40, 9);
    let topology = target.topology().clone();
    let sgd = SgdConfig {
        schedule: vec![],
        ..SgdConfig::default()
    };
    let out = shadow_audit(
        &target,
        members,
        nonmembers,
        &topology,
        &sgd,
        40,
        16,
        8,
        1,
        &[0.1],
    )
    .unwrap();
    assert_eq!(out.targets.len(), 200);
    for t in 0..200 {
        assert_eq!(out.ensemble.in_scores[t].len(), 4);
        assert_eq!(out.ensemble.out_scores[t].len(), 4);
    }
    let (mut m, mut n) = (0.0, 0.0);
    for (s, &is) in out.scores.iter().zip(&out.is_member) {
        if is {
            m += s;
        } else {
            n += s;
        }
    }
    assert!(
        m / 100.0 > n / 100.0,
        "member mean {} vs nonmember mean {}",
        m / 100.0,
        n / 100.0
    );
    assert!(out.lira.auc > 0.5);
}

#[test]
fn threshold_adversary_beats_chance_in_the_game() {
    let centers: Vec<Vec<f64>> = {
        let mut rng = SplitMix64::new(10);
        (0..4)
            .map(|_| (0..8).map(|_| rng.normal(0.0, 0.4)).collect())
            .collect()
    };
    let draw = |n: usize, rng: &mut SplitMix64| -> Vec<Sample> {
        (0..n)
            .map(|_| {
                let c = rng.index(4);
                Sample::new(centers[c].iter().map(|m| m + rng.gaussian()).collect(), c)
            })
            .collect()
    };
    let trainer = |set: &[Sample], rng: &mut SplitMix64| -> memcode::Result<Model> {
        Ok(quick_train(
            set,
            Variant::Clean,
            NormKind::None,
            60,
            rng.next_u64(),
        ))
    };
    let adversary = |ch: &memcode::audit::Challenge<'_, Model>, _: &mut SplitMix64| {
        let x = Tensor::matrix(1, 8, ch.target.features.clone()).unwrap();
        let p = softmax(&ch.model.infer(&x).unwrap());
        p.row(0)[ch.target.label] > 0.9
    };
    let res = run_mi_game(draw, 24, trainer, adversary, 300, &mut SplitMix64::new(11)).unwrap();
    assert!(res.accuracy > 0.5 + 3.0 * res.null_stdev(), "{res:?}");
}
