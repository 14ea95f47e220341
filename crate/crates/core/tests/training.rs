mod common;

use dynaug::augment::{invocation_count, AugmentConfig};
use dynaug::checkpoint::{self, CheckpointMeta};
use dynaug::model::{ArchConfig, Variant};
use dynaug::nn::Parameterized;
use dynaug::rng::RngStream;
use dynaug::series::{sine_square, Dataset};
use dynaug::train::{
    eval_consistency, evaluate, run_trials, run_trials_with_seeds, train, tta_evaluate,
    tta_predict, tta_probabilities, TrainConfig, Trainer,
};

/// 32 training series of length 32, normalized.
fn toy() -> Dataset {
    sine_square(32, 64, 32, 11).unwrap().prepare().unwrap().0
}

/// Reduced widths keep the toy runs fast on one core.
fn toy_cfg(data: &Dataset, variant: Variant, lambda: f64, iterations: usize) -> TrainConfig {
    let (c, t) = data.shape();
    TrainConfig {
        iterations,
        batch_size: 16,
        arch_cfg: ArchConfig::standard(c, t, 2).with_widths(&[8, 16, 16], 32),
        ..TrainConfig::for_dataset(data, variant, lambda)
    }
}

#[test]
fn proposed_fits_the_toy_within_500_iterations() {
    let data = toy();
    let cfg = toy_cfg(&data, Variant::Proposed, 1.0, 500);
    let mut t = Trainer::new(cfg, &data).unwrap();
    let mut reached = None;
    while t.iteration() < 500 {
        t.step().unwrap();
        if t.iteration() % 25 == 0 && evaluate(t.model(), &data.train).unwrap() == 1.0 {
            reached = Some(t.iteration());
            break;
        }
    }
    assert!(
        reached.is_some(),
        "train accuracy below 1.0 after 500 iterations"
    );
}

#[test]
fn zero_steps_leave_the_initial_model() {
    let data = toy();
    let cfg = toy_cfg(&data, Variant::Proposed, 1.0, 1);
    let a = Trainer::new(cfg.clone(), &data).unwrap();
    let b = Trainer::new(cfg, &data).unwrap();
    assert_eq!(a.model(), b.model());
    assert!(a.log().rows.is_empty());
}

#[test]
fn same_seed_gives_bit_identical_checkpoints() {
    let data = toy();
    let cfg = toy_cfg(&data, Variant::Proposed, 1.0, 20);
    let (m1, l1) = train(&cfg, &data).unwrap();
    let (m2, l2) = train(&cfg, &data).unwrap();
    let meta = cfg.checkpoint_meta(&m1, 20);
    assert_eq!(
        checkpoint::to_bytes(&m1, &meta).unwrap(),
        checkpoint::to_bytes(&m2, &meta).unwrap()
    );
    assert_eq!(l1, l2);
    let (m3, _) = train(&TrainConfig { seed: 1, ..cfg }, &data).unwrap();
    assert_ne!(m1, m3);
}

#[test]
fn checkpoint_file_round_trip_preserves_predictions() {
    let data = toy();
    let cfg = toy_cfg(&data, Variant::Concat, 0.1, 10);
    let (model, _) = train(&cfg, &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let meta: CheckpointMeta = cfg.checkpoint_meta(&model, 10);
    checkpoint::save(&path, &model, &meta).unwrap();
    let (back, meta2) = checkpoint::load(&path).unwrap();
    assert_eq!(meta, meta2);
    let values = |m: &dynaug::model::GatedModel| {
        m.params()
            .iter()
            .map(|p| p.value.clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(values(&back), values(&model));
    assert_eq!(back.buffers(), model.buffers());
    assert_eq!(
        evaluate(&back, &data.test).unwrap(),
        evaluate(&model, &data.test).unwrap()
    );
}

#[test]
fn no_aug_never_augments() {
    let data = toy();
    let cfg = toy_cfg(&data, Variant::NoAug, 10.0, 30);
    let before = invocation_count();
    let (model, log) = train(&cfg, &data).unwrap();
    evaluate(&model, &data.test).unwrap();
    assert_eq!(invocation_count(), before);
    assert_eq!(model.n_views(), 1);
    assert!(model.gate.is_none());
    assert!(log
        .rows
        .iter()
        .all(|r| r.loss.con == 0.0 && r.loss.lambda == 0.0));
}

#[test]
fn classifier_input_widths() {
    let data = toy();
    for (variant, width) in [
        (Variant::Proposed, 32),
        (Variant::Concat, 5 * 32),
        (Variant::NoAug, 32),
    ] {
        let t = Trainer::new(toy_cfg(&data, variant, 1.0, 1), &data).unwrap();
        assert_eq!(t.model().classifier_input_width(), width);
    }
}

#[test]
fn divergence_is_reported_with_its_iteration() {
    let data = toy();
    let mut cfg = toy_cfg(&data, Variant::Proposed, 1.0, 50);
    cfg.learning_rate = 1e200;
    match train(&cfg, &data) {
        Err(dynaug::Error::Diverged { iteration, .. }) => assert!(iteration >= 2),
        other => panic!("expected divergence, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn trials_use_consecutive_seeds() {
    let data = toy();
    let cfg = toy_cfg(&data, Variant::NoAug, 0.0, 5);
    let one = run_trials(&cfg, &data, 1, None).unwrap();
    assert_eq!(one.std, 0.0);
    assert_eq!(one.mean, one.per_trial_accuracy[0]);
    let same = run_trials_with_seeds(&cfg, &data, &[3, 3, 3], None).unwrap();
    assert_eq!(same.std, 0.0);
    let dir = tempfile::tempdir().unwrap();
    let two = run_trials(&TrainConfig { seed: 3, ..cfg }, &data, 2, Some(dir.path())).unwrap();
    assert_eq!(two.per_trial_accuracy[0], same.per_trial_accuracy[0]);
    assert_eq!(two.checkpoints.len(), 2);
    assert!(dir.path().join("trial_1/train_log.csv").exists());
    let mean = two.per_trial_accuracy.iter().sum::<f64>() / 2.0;
    assert!((two.mean - mean).abs() < 1e-12);
}

#[test]
fn tta_is_deterministic_and_matches_plain_eval_without_noise() {
    let data = toy();
    let (model, _) = train(&toy_cfg(&data, Variant::NoAug, 0.0, 30), &data).unwrap();
    let cfg = AugmentConfig::default();
    let x = &data.test[0];
    let a = tta_predict(&model, x, &cfg, &mut RngStream::new(4)).unwrap();
    let b = tta_predict(&model, x, &cfg, &mut RngStream::new(4)).unwrap();
    assert_eq!(a, b);
    // Zero-sigma warps are identities except window warping, so disable that
    // by a unit scale: every view equals x.
    let flat = AugmentConfig {
        ww_scales: vec![1.0],
        ..cfg.zero_sigma()
    };
    let p = tta_probabilities(&model, x, &flat, &mut RngStream::new(0)).unwrap();
    let plain = dynaug::train::predict_logits(&model, std::slice::from_ref(x)).unwrap();
    let direct = dynaug::nn::softmax_rows(&plain);
    for (u, v) in p.iter().zip(direct.row(0)) {
        assert!((u - v).abs() < 1e-12);
    }
    assert_eq!(
        tta_evaluate(&model, &data.test, &flat, 0).unwrap(),
        evaluate(&model, &data.test).unwrap()
    );
}

#[test]
fn large_lambda_lowers_eval_consistency() {
    let data = toy();
    let cfg = AugmentConfig::default();
    let (with, _) = train(&toy_cfg(&data, Variant::Proposed, 10.0, 200), &data).unwrap();
    let (without, _) = train(&toy_cfg(&data, Variant::Proposed, 0.0, 200), &data).unwrap();
    let a = eval_consistency(&with, &data.test, &cfg, 9).unwrap();
    let b = eval_consistency(&without, &data.test, &cfg, 9).unwrap();
    assert!(a < b, "L_con with lambda 10: {a}, without: {b}");
}

#[test]
fn analysis_leaves_the_model_untouched() {
    let data = toy();
    let (model, _) = train(&toy_cfg(&data, Variant::Proposed, 1.0, 10), &data).unwrap();
    let before: Vec<_> = model.params().iter().map(|p| p.value.clone()).collect();
    let recs =
        dynaug::analyze::collect_alphas(&model, &data.test, &AugmentConfig::default(), 2).unwrap();
    assert_eq!(recs.len(), data.test.len());
    let after: Vec<_> = model.params().iter().map(|p| p.value.clone()).collect();
    assert_eq!(before, after);
}

#[test]
fn loss_block_means_do_not_increase_over_500_iterations() {
    let data = toy();
    let (_, log) = train(&toy_cfg(&data, Variant::Proposed, 1.0, 500), &data).unwrap();
    let totals = log.totals();
    let blocks: Vec<f64> = totals
        .chunks(100)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    assert_eq!(blocks.len(), 5);
    for w in blocks.windows(2) {
        assert!(w[1] <= w[0], "block means {blocks:?}");
    }
}

#[test]
fn five_trials_on_the_toy_average_at_least_95_percent() {
    let data = sine_square(64, 64, 32, 0).unwrap().prepare().unwrap().0;
    let (c, t) = data.shape();
    let cfg = TrainConfig {
        arch_cfg: ArchConfig::standard(c, t, 2).with_widths(&[16, 32, 64], 128),
        ..toy_cfg(&data, Variant::Proposed, 1.0, 300)
    };
    let report = run_trials(&cfg, &data, 5, None).unwrap();
    assert!(report.mean >= 0.95, "{:?}", report.per_trial_accuracy);
}
