//! Flat key-value run configuration shared by the CLI commands.
//!
//! One TOML document carries training hyperparameters, synthetic
//! generator settings and file paths. Unknown keys are rejected; missing
//! keys fall back to [`TrainConfig::default`] and
//! [`SyntheticSpec::default`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{LossWeights, TrainConfig};
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    // paths
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    // shared by model and generator
    pub joints: Option<usize>,
    pub frames: Option<usize>,
    pub seed: Option<u64>,
    // model and optimizer
    pub components: Option<usize>,
    pub hidden_width: Option<usize>,
    pub residual_rounds: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub w_md: Option<f64>,
    pub w_v: Option<f64>,
    pub w_a: Option<f64>,
    pub w_d: Option<f64>,
    pub w_f: Option<f64>,
    pub dirichlet_lambda: Option<Vec<f64>>,
    pub lr0: Option<f64>,
    pub lr_decay: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    pub alpha_min: Option<f64>,
    pub alpha_max: Option<f64>,
    pub normalize: Option<bool>,
    // synthetic generator
    pub n_modes: Option<usize>,
    pub mode_probs: Option<Vec<f64>>,
    pub noise_std: Option<f64>,
    pub amplitude: Option<f64>,
    pub pose_jitter: Option<f64>,
    pub n_samples: Option<usize>,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let dw = LossWeights::default();
        let cfg = TrainConfig {
            joints: self.joints.unwrap_or(d.joints),
            frames: self.frames.unwrap_or(d.frames),
            components: self.components.unwrap_or(d.components),
            hidden_width: self.hidden_width.unwrap_or(d.hidden_width),
            residual_rounds: self.residual_rounds.unwrap_or(d.residual_rounds),
            dropout_rate: self.dropout_rate.unwrap_or(d.dropout_rate),
            weights: LossWeights {
                mixture: self.w_md.unwrap_or(dw.mixture),
                velocity: self.w_v.unwrap_or(dw.velocity),
                accuracy: self.w_a.unwrap_or(dw.accuracy),
                dirichlet: self.w_d.unwrap_or(dw.dirichlet),
                first_frame: self.w_f.unwrap_or(dw.first_frame),
            },
            dirichlet_lambda: self.dirichlet_lambda.clone().unwrap_or(d.dirichlet_lambda),
            lr0: self.lr0.unwrap_or(d.lr0),
            lr_decay: self.lr_decay.unwrap_or(d.lr_decay),
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            sigma_clip: [
                self.sigma_min.unwrap_or(d.sigma_clip[0]),
                self.sigma_max.unwrap_or(d.sigma_clip[1]),
            ],
            alpha_clip: [
                self.alpha_min.unwrap_or(d.alpha_clip[0]),
                self.alpha_max.unwrap_or(d.alpha_clip[1]),
            ],
            normalize: self.normalize.unwrap_or(d.normalize),
            seed: self.seed.unwrap_or(d.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        let d = SyntheticSpec::default();
        let spec = SyntheticSpec {
            n_modes: self.n_modes.unwrap_or(d.n_modes),
            mode_probs: self.mode_probs.clone().unwrap_or(d.mode_probs),
            noise_std: self.noise_std.unwrap_or(d.noise_std),
            amplitude: self.amplitude.unwrap_or(d.amplitude),
            pose_jitter: self.pose_jitter.unwrap_or(d.pose_jitter),
            n_samples: self.n_samples.unwrap_or(d.n_samples),
            joints: self.joints.unwrap_or(d.joints),
            frames: self.frames.unwrap_or(d.frames),
            seed: self.seed.unwrap_or(d.seed),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Every key filled in from `train` and `spec`, for provenance.
    pub fn resolved(&self, train: &TrainConfig, spec: Option<&SyntheticSpec>) -> Self {
        let w = &train.weights;
        let mut out = Self {
            dataset: self.dataset.clone(),
            checkpoint: self.checkpoint.clone(),
            out_dir: self.out_dir.clone(),
            joints: Some(train.joints),
            frames: Some(train.frames),
            seed: Some(train.seed),
            components: Some(train.components),
            hidden_width: Some(train.hidden_width),
            residual_rounds: Some(train.residual_rounds),
            dropout_rate: Some(train.dropout_rate),
            w_md: Some(w.mixture),
            w_v: Some(w.velocity),
            w_a: Some(w.accuracy),
            w_d: Some(w.dirichlet),
            w_f: Some(w.first_frame),
            dirichlet_lambda: Some(train.dirichlet_lambda.clone()),
            lr0: Some(train.lr0),
            lr_decay: Some(train.lr_decay),
            epochs: Some(train.epochs),
            batch_size: Some(train.batch_size),
            sigma_min: Some(train.sigma_clip[0]),
            sigma_max: Some(train.sigma_clip[1]),
            alpha_min: Some(train.alpha_clip[0]),
            alpha_max: Some(train.alpha_clip[1]),
            normalize: Some(train.normalize),
            ..Default::default()
        };
        if let Some(s) = spec {
            out.n_modes = Some(s.n_modes);
            out.mode_probs = Some(s.probs());
            out.noise_std = Some(s.noise_std);
            out.amplitude = Some(s.amplitude);
            out.pose_jitter = Some(s.pose_jitter);
            out.n_samples = Some(s.n_samples);
        }
        out
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
