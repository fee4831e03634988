//! Mixture density networks that predict several plausible 3D motion
//! sequences from a single root-centered 2D pose.
//!
//! The crate covers the whole pipeline: a residual MLP feature extractor
//! with a mixture-density head ([`model`]), the training objective
//! ([`losses`]) with an exact hand-written gradient ([`grad`]), Adam
//! training ([`trainer`]), best-of-M MPJPE and APD metrics ([`metrics`]),
//! and a synthetic multimodal benchmark with dataset I/O ([`data`]).

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod grad;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod run_config;
pub mod tensor;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{LossTerm, LossWeights, TrainConfig};
pub use data::{Dataset, Sample, SyntheticSpec};
pub use error::{Error, Result};
pub use model::{MixtureParams, Mode, Model, Motion3D, Pose2D, Pose3D};
