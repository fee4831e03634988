//! Elementwise activations, batch normalization and dropout.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Forward-pass mode. `Deterministic` disables dropout and normalizes with
/// running statistics; `Train` samples dropout masks and uses batch
/// statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Deterministic,
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn elu_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Numerically stable softmax. Returns an empty vector for empty input.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Running per-feature statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNormStats {
    pub fn new(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            var: vec![1.0; width],
        }
    }

    /// Exponential moving average update from one training batch.
    /// `batch_var` is the biased batch variance; the running estimate
    /// stores the unbiased one.
    pub fn update(&mut self, batch_mean: &[f64], batch_var: &[f64], batch_size: usize) {
        let unbias = batch_size as f64 / (batch_size as f64 - 1.0);
        for (rm, bm) in self.mean.iter_mut().zip(batch_mean) {
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * bm;
        }
        for (rv, bv) in self.var.iter_mut().zip(batch_var) {
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * bv * unbias;
        }
    }
}

/// Intermediate values of a batch-norm pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct BatchNormOutput {
    pub out: Array2<f64>,
    /// `(x - mean) / sqrt(var + eps)` before the affine scale and shift.
    pub normed: Array2<f64>,
    pub inv_std: Array1<f64>,
    /// Batch mean and biased variance; `None` in deterministic mode.
    pub batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

/// Batch normalization over the rows of `x` (one row per sample).
pub fn batchnorm(
    x: ArrayView2<f64>,
    gamma: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    running: &BatchNormStats,
    mode: Mode,
) -> Result<BatchNormOutput> {
    let n = x.nrows();
    let (mean, var, batch_stats) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::Argument(
                    "batch normalization in train mode needs at least 2 samples".into(),
                ));
            }
            let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
            let var = x.var_axis(Axis(0), 0.0);
            let stats = (mean.to_vec(), var.to_vec());
            (mean, var, Some(stats))
        }
        Mode::Deterministic => (
            Array1::from(running.mean.clone()),
            Array1::from(running.var.clone()),
            None,
        ),
    };
    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let normed = (&x - &mean) * &inv_std;
    let out = &normed * &gamma + beta;
    Ok(BatchNormOutput {
        out,
        normed,
        inv_std,
        batch_stats,
    })
}

/// Inverted-dropout mask: entries are `0` or `1 / (1 - rate)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })
}

/// Applies dropout in train mode; identity in deterministic mode.
pub fn dropout(v: ArrayView2<f64>, rate: f64, seed: u64, mode: Mode) -> Array2<f64> {
    match mode {
        Mode::Deterministic => v.to_owned(),
        Mode::Train if rate == 0.0 => v.to_owned(),
        Mode::Train => &v * &dropout_mask(v.nrows(), v.ncols(), rate, seed),
    }
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
