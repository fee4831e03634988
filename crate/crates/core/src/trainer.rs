//! Minibatch Adam training with an exponentially decaying learning rate.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, TrainState};
use crate::config::TrainConfig;
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::grad::loss_and_grad;
use crate::losses::LossBreakdown;
use crate::model::activations::derive_seed;
use crate::model::{Mode, Model, Normalization};
use crate::tensor::{GradientVector, Layout, ParameterVector};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

// Seed streams, kept apart so shuffles and dropout never share draws.
const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1 << 40;
const STREAM_DROPOUT: u64 = 2 << 40;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: GradientVector,
    pub v: GradientVector,
    pub step: u64,
}

impl AdamState {
    pub fn new(layout: Layout) -> Self {
        Self {
            m: GradientVector::zeros(layout.clone()),
            v: GradientVector::zeros(layout),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. A non-finite gradient aborts before
/// anything is modified.
pub fn adam_step(
    params: &mut ParameterVector,
    grad: &GradientVector,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !grad.same_layout(params) || state.m.layout() != params.layout() {
        return Err(Error::Config("gradient layout does not match parameters".into()));
    }
    if let Some(seg) = grad.first_non_finite() {
        return Err(Error::numeric(seg));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    let (m, v) = (state.m.values_mut(), state.v.values_mut());
    for (i, (theta, g)) in params.values_mut().iter_mut().zip(grad.values()).enumerate() {
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        *theta -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// `lr0 · γ^epoch`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.lr_decay.powi(epoch as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    /// Seconds spent in the epoch. Not written to the CSV log, which must
    /// be reproducible byte for byte.
    pub wall_time: f64,
}

pub const LOG_HEADER: &str = "epoch,l_md,l_v,l_a,l_d,l_f,total,lr";

impl TrainLogRow {
    pub fn csv_line(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch, l.l_md, l.l_v, l.l_a, l.l_d, l.l_f, l.total, self.lr
        )
    }
}

pub fn write_log(rows: &[TrainLogRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = format!("{LOG_HEADER}\n");
    for r in rows {
        text.push_str(&r.csv_line());
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// A finished (or resumed-to-completion) run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    /// Rows for the epochs run by this call.
    pub log: Vec<TrainLogRow>,
}

/// Training failure. Numeric failures carry the last checkpoint whose
/// weights were all finite.
#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("numeric failure in epoch {epoch}: non-finite value in {segment}")]
    Numeric {
        epoch: usize,
        segment: String,
        last_good: Box<Checkpoint>,
        log: Vec<TrainLogRow>,
    },
    #[error(transparent)]
    Other(#[from] Error),
}

fn check_dims(ds: &Dataset, cfg: &TrainConfig) -> Result<()> {
    if ds.joints != cfg.joints {
        return Err(Error::dim("dataset joints", cfg.joints, ds.joints));
    }
    if ds.frames != cfg.frames {
        return Err(Error::dim("dataset frames", cfg.frames, ds.frames));
    }
    if cfg.batch_size < 2 {
        return Err(Error::Config("batch_size must be at least 2 for batch normalization".into()));
    }
    if ds.len() < 2 {
        return Err(Error::Argument("training needs at least 2 samples".into()));
    }
    ds.validate()
}

/// Freshly initialized checkpoint for `cfg`, with normalization fitted to
/// `ds` when enabled.
pub fn initial_checkpoint(ds: &Dataset, cfg: &TrainConfig) -> Result<Checkpoint> {
    check_dims(ds, cfg)?;
    let mut model = Model::init(cfg, derive_seed(cfg.seed, STREAM_INIT))?;
    if cfg.normalize {
        let inputs: Vec<Vec<f64>> = ds.samples.iter().map(|s| s.input.flat()).collect();
        let targets: Vec<&[f64]> = ds.samples.iter().map(|s| s.target.as_slice()).collect();
        model.norm = Normalization::fit(&inputs, &targets);
    }
    let adam = AdamState::new(model.params.layout().clone());
    Ok(Checkpoint {
        model,
        train: Some(TrainState { epoch: 0, adam }),
    })
}

/// Trains from scratch for `cfg.epochs` epochs.
pub fn fit(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput, TrainError> {
    let start = initial_checkpoint(ds, cfg)?;
    resume(ds, start)
}

/// Continues training until the checkpoint's configured epoch count.
pub fn resume(ds: &Dataset, start: Checkpoint) -> Result<TrainOutput, TrainError> {
    let cfg = start.model.cfg.clone();
    check_dims(ds, &cfg)?;
    let mut ck = start;
    let mut state = ck.train.take().unwrap_or_else(|| TrainState {
        epoch: 0,
        adam: AdamState::new(ck.model.params.layout().clone()),
    });
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..ds.len()).collect();

    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        let started = Instant::now();
        let lr = lr_at(epoch, &cfg);
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SHUFFLE + epoch as u64)));

        let last_good = Checkpoint {
            model: ck.model.clone(),
            train: Some(state.clone()),
        };
        let fail = |segment: String, log: Vec<TrainLogRow>, last_good: Checkpoint| TrainError::Numeric {
            epoch,
            segment,
            last_good: Box::new(last_good),
            log,
        };

        let mut sum = LossBreakdown::default();
        let mut seen = 0usize;
        // a trailing singleton batch cannot be batch-normalized and is skipped
        for (bi, chunk) in order.chunks(cfg.batch_size).filter(|c| c.len() >= 2).enumerate() {
            let batch: Vec<Sample> = chunk.iter().map(|&i| ds.samples[i].clone()).collect();
            let seed = derive_seed(cfg.seed, STREAM_DROPOUT + ((epoch as u64) << 20) + bi as u64);
            let lg = match loss_and_grad(&ck.model, &batch, Mode::Train, seed) {
                Ok(lg) => lg,
                Err(Error::Numeric { segment }) => return Err(fail(segment, log, last_good)),
                Err(e) => return Err(e.into()),
            };
            match adam_step(&mut ck.model.params, &lg.grad, &mut state.adam, lr) {
                Ok(()) => {}
                Err(Error::Numeric { segment }) => return Err(fail(segment, log, last_good)),
                Err(e) => return Err(e.into()),
            }
            if let Some(seg) = ck.model.params.first_non_finite() {
                return Err(fail(seg.to_string(), log, last_good));
            }
            for (stats, (mean, var)) in ck.model.bn.iter_mut().zip(lg.trace.batch_stats()) {
                stats.update(&mean, &var, batch.len());
            }
            let w = batch.len() as f64;
            let l = lg.loss;
            sum.l_md += w * l.l_md;
            sum.l_v += w * l.l_v;
            sum.l_a += w * l.l_a;
            sum.l_d += w * l.l_d;
            sum.l_f += w * l.l_f;
            sum.total += w * l.total;
            seen += batch.len();
        }
        let n = seen.max(1) as f64;
        let loss = LossBreakdown {
            l_md: sum.l_md / n,
            l_v: sum.l_v / n,
            l_a: sum.l_a / n,
            l_d: sum.l_d / n,
            l_f: sum.l_f / n,
            total: sum.total / n,
        };
        if !loss.is_finite() {
            return Err(fail("loss".into(), log, last_good));
        }
        log.push(TrainLogRow {
            epoch,
            lr,
            loss,
            wall_time: started.elapsed().as_secs_f64(),
        });
        state.epoch += 1;
    }
    ck.train = Some(state);
    Ok(TrainOutput { checkpoint: ck, log })
}

/// The single-Gaussian regression comparator: identical training with
/// `M = 1`.
pub fn train_baseline_single_mode(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput, TrainError> {
    let mut single = cfg.clone();
    single.components = 1;
    single.dirichlet_lambda = vec![cfg.dirichlet_lambda.first().copied().unwrap_or(2.0)];
    fit(ds, &single)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticSpec};

    fn layout() -> Layout {
        let mut l = Layout::new();
        l.push("w", &[2, 2]);
        l.push("b", &[2]);
        l
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ParameterVector::zeros(layout());
        let mut g = GradientVector::zeros(layout());
        g.values_mut().fill(0.5);
        let mut st = AdamState::new(layout());
        adam_step(&mut p, &g, &mut st, 1e-4).unwrap();
        for v in p.values() {
            // g / (|g| + eps) with g = 0.5
            let expected = -1e-4 * 0.5 / (0.5 + ADAM_EPS);
            assert!((v - expected).abs() < 1e-18);
            assert!((v + 1e-4).abs() < 1e-11);
        }
    }

    #[test]
    fn zero_gradient_from_fresh_state_is_noop() {
        let mut p = ParameterVector::from_values(layout(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(layout());
        adam_step(&mut p, &GradientVector::zeros(layout()), &mut st, 1e-3).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn nan_gradient_leaves_params_untouched() {
        let mut p = ParameterVector::zeros(layout());
        let mut g = GradientVector::zeros(layout());
        g.slice_mut("b")[0] = f64::NAN;
        let mut st = AdamState::new(layout());
        let err = adam_step(&mut p, &g, &mut st, 1e-3).unwrap_err();
        assert!(matches!(err, Error::Numeric { ref segment } if segment == "b"));
        assert_eq!(p, ParameterVector::zeros(layout()));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn identical_calls_identical_results() {
        let mut g = GradientVector::zeros(layout());
        g.values_mut().iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 - 2.5);
        let run = || {
            let mut p = ParameterVector::zeros(layout());
            let mut st = AdamState::new(layout());
            adam_step(&mut p, &g, &mut st, 1e-3).unwrap();
            adam_step(&mut p, &g, &mut st, 1e-3).unwrap();
            (p, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 1e-4);
        assert!((lr_at(1, &cfg) - 9.6e-5).abs() < 1e-20);
        let flat = TrainConfig {
            lr_decay: 1.0,
            ..Default::default()
        };
        assert_eq!(lr_at(37, &flat), 1e-4);
        let lrs: Vec<f64> = (0..50).map(|e| lr_at(e, &cfg)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    fn tiny_run(epochs: usize) -> (Dataset, TrainConfig) {
        let ds = generate(&SyntheticSpec {
            joints: 3,
            frames: 4,
            n_samples: 40,
            noise_std: 2.0,
            ..Default::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            joints: 3,
            frames: 4,
            components: 3,
            hidden_width: 16,
            batch_size: 8,
            epochs,
            lr0: 1e-3,
            seed: 5,
            ..Default::default()
        };
        (ds, cfg)
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (ds, cfg) = tiny_run(0);
        let out = fit(&ds, &cfg).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(out.checkpoint, initial_checkpoint(&ds, &cfg).unwrap());
    }

    #[test]
    fn seeded_training_is_bitwise_reproducible() {
        let (ds, cfg) = tiny_run(3);
        let a = fit(&ds, &cfg).unwrap();
        let b = fit(&ds, &cfg).unwrap();
        let lines = |o: &TrainOutput| o.log.iter().map(TrainLogRow::csv_line).collect::<Vec<_>>();
        assert_eq!(lines(&a), lines(&b));
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    }

    #[test]
    fn resume_reproduces_remaining_trajectory() {
        let (ds, cfg) = tiny_run(4);
        let full = fit(&ds, &cfg).unwrap();
        let half_cfg = TrainConfig { epochs: 2, ..cfg.clone() };
        let half = fit(&ds, &half_cfg).unwrap();
        let mut ck = Checkpoint::from_bytes(&half.checkpoint.to_bytes(), Path::new("mem")).unwrap();
        ck.model.cfg.epochs = 4;
        let rest = resume(&ds, ck).unwrap();
        assert_eq!(rest.log.len(), 2);
        assert_eq!(rest.log[1].csv_line(), full.log[3].csv_line());
        assert_eq!(rest.checkpoint.to_bytes(), full.checkpoint.to_bytes());
    }

    #[test]
    fn resume_from_final_is_noop() {
        let (ds, cfg) = tiny_run(2);
        let done = fit(&ds, &cfg).unwrap();
        let again = resume(&ds, done.checkpoint.clone()).unwrap();
        assert!(again.log.is_empty());
        assert_eq!(again.checkpoint.to_bytes(), done.checkpoint.to_bytes());
    }

    #[test]
    fn log_is_finite_and_clips_hold() {
        let (ds, cfg) = tiny_run(3);
        let out = fit(&ds, &cfg).unwrap();
        assert!(out.log.iter().all(|r| r.loss.is_finite()));
        let model = &out.checkpoint.model;
        for s in ds.samples.iter().take(5) {
            let trace = crate::model::forward(model, &[&s.input], Mode::Deterministic, 0).unwrap();
            trace.mixtures[0].check_invariants(cfg.sigma_clip, cfg.alpha_clip).unwrap();
        }
    }

    #[test]
    fn batch_size_one_rejected() {
        let (ds, mut cfg) = tiny_run(1);
        cfg.batch_size = 1;
        assert!(matches!(fit(&ds, &cfg), Err(TrainError::Other(_))));
    }

    #[test]
    fn exploding_run_reports_last_good_checkpoint() {
        let (ds, mut cfg) = tiny_run(5);
        cfg.lr0 = 1e200;
        cfg.lr_decay = 1.0;
        match fit(&ds, &cfg) {
            Err(TrainError::Numeric { last_good, .. }) => {
                assert!(last_good.model.params.first_non_finite().is_none());
            }
            other => panic!("expected numeric failure, got {other:?}"),
        }
    }
}
