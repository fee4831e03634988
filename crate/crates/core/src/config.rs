//! Training and architecture hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights applied to each loss term when forming the total objective.
///
/// `mixture` multiplies the mixture negative log-likelihood and is 1 for
/// every ordinary run; setting it to zero isolates the prior terms, which
/// gradient checks use to verify each term on its own.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub mixture: f64,
    pub velocity: f64,
    pub accuracy: f64,
    pub dirichlet: f64,
    pub first_frame: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mixture: 1.0,
            velocity: 0.1,
            accuracy: 0.05,
            dirichlet: 1.0,
            first_frame: 1.0,
        }
    }
}

impl LossWeights {
    /// All weights zero except the named term.
    pub fn only(term: LossTerm) -> Self {
        let mut w = Self {
            mixture: 0.0,
            velocity: 0.0,
            accuracy: 0.0,
            dirichlet: 0.0,
            first_frame: 0.0,
        };
        match term {
            LossTerm::Mixture => w.mixture = 1.0,
            LossTerm::Velocity => w.velocity = 1.0,
            LossTerm::Accuracy => w.accuracy = 1.0,
            LossTerm::Dirichlet => w.dirichlet = 1.0,
            LossTerm::FirstFrame => w.first_frame = 1.0,
        }
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossTerm {
    Mixture,
    Velocity,
    Accuracy,
    Dirichlet,
    FirstFrame,
}

impl LossTerm {
    pub const ALL: [LossTerm; 5] = [
        LossTerm::Mixture,
        LossTerm::Velocity,
        LossTerm::Accuracy,
        LossTerm::Dirichlet,
        LossTerm::FirstFrame,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Mixture => "l_md",
            LossTerm::Velocity => "l_v",
            LossTerm::Accuracy => "l_a",
            LossTerm::Dirichlet => "l_d",
            LossTerm::FirstFrame => "l_f",
        }
    }
}

/// Every hyperparameter of the network, the objective and the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Joints per pose (C).
    pub joints: usize,
    /// Predicted frames (T).
    pub frames: usize,
    /// Mixture components (M).
    pub components: usize,
    pub hidden_width: usize,
    pub residual_rounds: usize,
    pub dropout_rate: f64,
    pub weights: LossWeights,
    /// Dirichlet concentration, either one value shared by all components
    /// or exactly `components` values.
    pub dirichlet_lambda: Vec<f64>,
    pub lr0: f64,
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub sigma_clip: [f64; 2],
    pub alpha_clip: [f64; 2],
    /// Standardize inputs and targets with a scalar scale fitted on the
    /// training set. The affine map is frozen into the checkpoint.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            joints: 16,
            frames: 15,
            components: 10,
            hidden_width: 1024,
            residual_rounds: 2,
            dropout_rate: 0.5,
            weights: LossWeights::default(),
            dirichlet_lambda: vec![2.0],
            lr0: 1e-4,
            lr_decay: 0.96,
            epochs: 100,
            batch_size: 64,
            sigma_clip: [1e-5, 1e5],
            alpha_clip: [1e-8, 1.0],
            normalize: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Length of one flattened motion, 3·T·C.
    pub fn motion_dim(&self) -> usize {
        3 * self.frames * self.joints
    }

    pub fn input_dim(&self) -> usize {
        2 * self.joints
    }

    /// Per-component Dirichlet concentrations, broadcast to length M.
    pub fn lambdas(&self) -> Vec<f64> {
        if self.dirichlet_lambda.len() == 1 {
            vec![self.dirichlet_lambda[0]; self.components]
        } else {
            self.dirichlet_lambda.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.joints == 0 || self.frames == 0 || self.components == 0 {
            return bad("joints, frames and components must be positive");
        }
        if self.hidden_width == 0 || self.residual_rounds == 0 {
            return bad("hidden_width and residual_rounds must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        let w = &self.weights;
        if [w.mixture, w.velocity, w.accuracy, w.dirichlet, w.first_frame]
            .iter()
            .any(|x| !x.is_finite() || *x < 0.0)
        {
            return bad("loss weights must be finite and non-negative");
        }
        let n = self.dirichlet_lambda.len();
        if n != 1 && n != self.components {
            return bad("dirichlet_lambda must hold 1 or `components` values");
        }
        if self.dirichlet_lambda.iter().any(|l| !(*l >= 1.0)) {
            return bad("dirichlet_lambda values must be >= 1");
        }
        if !(self.lr0 > 0.0) || !(self.lr_decay > 0.0) {
            return bad("lr0 and lr_decay must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        let [smin, smax] = self.sigma_clip;
        if !(smin > 0.0 && smin <= smax) {
            return bad("sigma_clip must satisfy 0 < min <= max");
        }
        let [amin, amax] = self.alpha_clip;
        if !(amin > 0.0 && amin <= amax && amax <= 1.0) {
            return bad("alpha_clip must satisfy 0 < min <= max <= 1");
        }
        if amin * self.components as f64 > 1.0 {
            return bad("alpha_clip min times components exceeds 1");
        }
        Ok(())
    }
}
