//! Analytic gradients against central finite differences.

use mdn_motion::config::{LossTerm, LossWeights, TrainConfig};
use mdn_motion::data::Sample;
use mdn_motion::grad::{batch_loss_value, check_fixture, finite_diff_check, loss_and_grad, loss_and_grad_weighted};
use mdn_motion::model::{Mode, Model, Motion3D, Pose2D};

fn tiny_cfg() -> TrainConfig {
    TrainConfig {
        joints: 2,
        frames: 3,
        components: 3,
        hidden_width: 16,
        ..Default::default()
    }
}

fn random_model(cfg: &TrainConfig, seed: u64) -> Model {
    check_fixture(cfg, 0, seed).unwrap().0
}

fn random_batch(cfg: &TrainConfig, n: usize, seed: u64) -> Vec<Sample> {
    check_fixture(cfg, n, seed).unwrap().1
}

#[test]
fn every_term_and_total_match_finite_differences() {
    let cfg = tiny_cfg();
    let model = random_model(&cfg, 1);
    let batch = random_batch(&cfg, 4, 2);
    for term in LossTerm::ALL {
        let report = finite_diff_check(&model, &batch, &LossWeights::only(term), 1e-4, 1e-3).unwrap();
        assert!(
            report.passed,
            "{}: max rel err {} in {}",
            term.name(),
            report.max_rel_error,
            report.worst_segment
        );
    }
    let report = finite_diff_check(&model, &batch, &cfg.weights, 1e-4, 1e-3).unwrap();
    assert!(report.passed, "total: {} in {}", report.max_rel_error, report.worst_segment);
    assert!(!report.step_underflow);
}

#[test]
fn zero_tolerance_fails_and_names_segment() {
    let cfg = tiny_cfg();
    let model = random_model(&cfg, 3);
    let batch = random_batch(&cfg, 4, 4);
    let report = finite_diff_check(&model, &batch, &cfg.weights, 1e-4, 0.0).unwrap();
    assert!(!report.passed);
    assert!(model.params.layout().get(&report.worst_segment).is_some());
}

#[test]
fn tiny_step_is_flagged() {
    let cfg = tiny_cfg();
    let model = random_model(&cfg, 5);
    let batch = random_batch(&cfg, 4, 6);
    let report = finite_diff_check(&model, &batch, &cfg.weights, 1e-12, 1e-3).unwrap();
    assert!(report.step_underflow);
}

#[test]
fn train_mode_gradient_with_fixed_masks() {
    // Batch statistics and a fixed dropout seed make the train-mode loss a
    // deterministic function of the weights.
    let cfg = tiny_cfg();
    let model = random_model(&cfg, 7);
    let batch = random_batch(&cfg, 5, 8);
    let seed = 99;
    let analytic = loss_and_grad(&model, &batch, Mode::Train, seed).unwrap().grad;
    let scale = analytic.values().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for i in 0..model.params.len() {
        let mut probe = model.clone();
        let theta = probe.params.values()[i];
        let h = 1e-4 * theta.abs().max(1.0);
        probe.params.values_mut()[i] = theta + h;
        let plus = batch_loss_value(&probe, &batch, &cfg.weights, Mode::Train, seed).unwrap().total;
        probe.params.values_mut()[i] = theta - h;
        let minus = batch_loss_value(&probe, &batch, &cfg.weights, Mode::Train, seed).unwrap().total;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic.values()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6 * scale));
    }
    assert!(worst < 1e-3, "train-mode max rel err {worst}");
}

#[test]
fn nll_gradient_vanishes_at_the_mean() {
    let cfg = TrainConfig {
        components: 1,
        ..tiny_cfg()
    };
    let model = Model::zeros(&cfg).unwrap();
    // zero network: mu = 0, sigma = 1 + 1e-6
    let batch = vec![Sample {
        id: 0,
        input: Pose2D::new(vec![[0.3, -0.2], [1.0, 0.5]]),
        target: Motion3D::zeros(cfg.frames, cfg.joints),
        mode: None,
    }];
    let lg = loss_and_grad_weighted(&model, &batch, &LossWeights::only(LossTerm::Mixture), Mode::Deterministic, 0)
        .unwrap();
    let d = cfg.motion_dim() as f64;
    let sigma: f64 = 1.0 + 1e-6;
    let expected = 0.5 * d * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
    assert!((lg.loss.l_md - expected).abs() < 1e-12);
    assert!(lg.grad.slice("head_mu.bias").iter().all(|g| *g == 0.0));
}

#[test]
fn duplicated_batch_leaves_loss_and_gradient_unchanged() {
    let cfg = tiny_cfg();
    let model = random_model(&cfg, 11);
    let batch = random_batch(&cfg, 3, 12);
    let doubled: Vec<Sample> = batch.iter().chain(batch.iter()).cloned().collect();
    let a = loss_and_grad(&model, &batch, Mode::Deterministic, 0).unwrap();
    let b = loss_and_grad(&model, &doubled, Mode::Deterministic, 0).unwrap();
    assert!((a.loss.total - b.loss.total).abs() < 1e-12 * a.loss.total.abs().max(1.0));
    for (x, y) in a.grad.values().iter().zip(b.grad.values()) {
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-9));
    }
}

#[test]
fn velocity_energy_has_no_alpha_or_sigma_gradient() {
    let cfg = tiny_cfg();
    let model = random_model(&cfg, 13);
    let batch = random_batch(&cfg, 4, 14);
    let lg = loss_and_grad_weighted(&model, &batch, &LossWeights::only(LossTerm::Velocity), Mode::Deterministic, 0)
        .unwrap();
    for seg in ["head_alpha.weight", "head_alpha.bias", "head_sigma.weight", "head_sigma.bias"] {
        assert!(lg.grad.slice(seg).iter().all(|g| *g == 0.0), "{seg}");
    }
    let lg = loss_and_grad_weighted(&model, &batch, &LossWeights::only(LossTerm::Dirichlet), Mode::Deterministic, 0)
        .unwrap();
    assert!(lg.grad.slice("head_mu.weight").iter().all(|g| *g == 0.0));
}

#[test]
fn gradient_is_deterministic() {
    let cfg = tiny_cfg();
    let model = random_model(&cfg, 15);
    let batch = random_batch(&cfg, 6, 16);
    let a = loss_and_grad(&model, &batch, Mode::Train, 5).unwrap();
    let b = loss_and_grad(&model, &batch, Mode::Train, 5).unwrap();
    assert_eq!(a.grad, b.grad);
    assert_eq!(a.loss, b.loss);
}
