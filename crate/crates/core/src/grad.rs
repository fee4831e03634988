//! Batch objective with its exact parameter gradient, and a central
//! finite-difference checker for it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{LossWeights, TrainConfig};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::losses::{total_loss_grad, LossBreakdown, MixtureGrad};
use crate::model::activations::derive_seed;
use crate::model::{backward, forward, ForwardTrace, Mode, Model, Motion3D, Pose2D};
use crate::tensor::GradientVector;

/// Result of one forward/backward pass over a batch.
#[derive(Debug, Clone)]
pub struct LossAndGrad {
    /// Batch-mean loss terms.
    pub loss: LossBreakdown,
    pub grad: GradientVector,
    pub trace: ForwardTrace,
}

/// Mean loss over `batch` and its gradient, using the model's configured
/// loss weights. `seed` drives dropout masks in train mode.
pub fn loss_and_grad(model: &Model, batch: &[Sample], mode: Mode, seed: u64) -> Result<LossAndGrad> {
    let weights = model.cfg.weights;
    loss_and_grad_weighted(model, batch, &weights, mode, seed)
}

pub fn loss_and_grad_weighted(
    model: &Model,
    batch: &[Sample],
    weights: &LossWeights,
    mode: Mode,
    seed: u64,
) -> Result<LossAndGrad> {
    let (loss, grads, trace) = batch_loss(model, batch, weights, mode, seed)?;
    if !loss.is_finite() {
        return Err(Error::numeric("loss"));
    }
    let grad = backward(model, &trace, &grads);
    if let Some(seg) = grad.first_non_finite() {
        return Err(Error::numeric(seg));
    }
    Ok(LossAndGrad { loss, grad, trace })
}

/// Mean loss only; no backward pass.
pub fn batch_loss_value(
    model: &Model,
    batch: &[Sample],
    weights: &LossWeights,
    mode: Mode,
    seed: u64,
) -> Result<LossBreakdown> {
    Ok(batch_loss(model, batch, weights, mode, seed)?.0)
}

fn batch_loss(
    model: &Model,
    batch: &[Sample],
    weights: &LossWeights,
    mode: Mode,
    seed: u64,
) -> Result<(LossBreakdown, Vec<MixtureGrad>, ForwardTrace)> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let poses: Vec<&Pose2D> = batch.iter().map(|s| &s.input).collect();
    let trace = forward(model, &poses, mode, seed)?;
    let lambdas = model.cfg.lambdas();
    let inv_n = 1.0 / batch.len() as f64;
    let per_sample: Vec<(LossBreakdown, MixtureGrad)> = trace
        .mixtures
        .par_iter()
        .zip(batch.par_iter())
        .map(|(mix, s)| {
            let mut g = MixtureGrad::zeros(mix.components(), mix.dim());
            let b = total_loss_grad(mix, &s.target, weights, &lambdas, &mut g)?;
            g.alphas.iter_mut().chain(&mut g.sigmas).chain(&mut g.mus).for_each(|v| *v *= inv_n);
            Ok((b, g))
        })
        .collect::<Result<_>>()?;
    let (parts, grads): (Vec<_>, Vec<_>) = per_sample.into_iter().unzip();
    Ok((LossBreakdown::mean(&parts), grads, trace))
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_segment: String,
    /// Maximum relative error per segment, in layout order.
    pub per_segment: Vec<(String, f64)>,
    pub tolerance: f64,
    pub passed: bool,
    /// Set when the step is so small that the differences are dominated
    /// by floating-point rounding.
    pub step_underflow: bool,
}

/// Steps below this leave central differences dominated by rounding.
pub const MIN_RELIABLE_STEP: f64 = 1e-8;

/// Compares the analytic gradient with central differences of step
/// `step · max(1, |θ_i|)` for every parameter, always in deterministic
/// mode. Relative error is `|a − n| / max(|a|, |n|, floor)` with
/// `floor = 1e-6 · max(1, ‖a‖_∞)`, so entries that are zero up to
/// rounding are compared on the scale of the whole gradient.
pub fn finite_diff_check(
    model: &Model,
    batch: &[Sample],
    weights: &LossWeights,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let analytic = loss_and_grad_weighted(model, batch, weights, Mode::Deterministic, 0)?.grad;
    let scale = analytic.values().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-6 * scale;
    let layout = model.params.layout().clone();

    let numeric: Vec<f64> = (0..model.params.len())
        .into_par_iter()
        .map(|i| {
            let mut probe = model.clone();
            let theta = probe.params.values()[i];
            let h = step * theta.abs().max(1.0);
            probe.params.values_mut()[i] = theta + h;
            let plus = batch_loss_value(&probe, batch, weights, Mode::Deterministic, 0)?.total;
            probe.params.values_mut()[i] = theta - h;
            let minus = batch_loss_value(&probe, batch, weights, Mode::Deterministic, 0)?.total;
            Ok((plus - minus) / (2.0 * h))
        })
        .collect::<Result<_>>()?;

    let mut per_segment = Vec::new();
    for seg in layout.segments() {
        let worst = seg
            .range()
            .map(|i| {
                let (a, n) = (analytic.values()[i], numeric[i]);
                (a - n).abs() / a.abs().max(n.abs()).max(floor)
            })
            .fold(0.0f64, f64::max);
        per_segment.push((seg.name.clone(), worst));
    }
    let (worst_segment, max_rel_error) = per_segment
        .iter()
        .fold((String::new(), -1.0), |acc, (n, e)| if *e > acc.1 { (n.clone(), *e) } else { acc });
    Ok(GradCheckReport {
        passed: max_rel_error < tolerance,
        max_rel_error,
        worst_segment,
        per_segment,
        tolerance,
        step_underflow: step < MIN_RELIABLE_STEP,
    })
}

/// A model and batch for gradient checking. Every parameter, including
/// the batch-norm affine terms, is perturbed away from its initial value
/// and the running statistics are randomized, so no gradient path is
/// trivially zero.
pub fn check_fixture(cfg: &TrainConfig, batch_size: usize, seed: u64) -> Result<(Model, Vec<Sample>)> {
    let mut model = Model::init(cfg, derive_seed(seed, 1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let names: Vec<String> = model.params.layout().segments().iter().map(|s| s.name.clone()).collect();
    for name in names {
        let spread = if name.starts_with("head_") { 0.3 } else { 0.1 };
        for v in model.params.slice_mut(&name) {
            *v += rng.random_range(-spread..spread);
        }
    }
    for bn in &mut model.bn {
        bn.mean.iter_mut().for_each(|m| *m = rng.random_range(-0.5..0.5));
        bn.var.iter_mut().for_each(|v| *v = rng.random_range(0.5..2.0));
    }
    let batch = (0..batch_size)
        .map(|i| {
            let input = Pose2D::new(
                (0..cfg.joints)
                    .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                    .collect(),
            );
            let data = (0..cfg.motion_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            Ok(Sample {
                id: i as u64,
                input,
                target: Motion3D::new(cfg.frames, cfg.joints, data)?,
                mode: None,
            })
        })
        .collect::<Result<_>>()?;
    Ok((model, batch))
}
