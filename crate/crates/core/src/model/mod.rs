//! Network architecture, forward pass and domain types.

pub mod activations;
mod network;
mod types;

pub use activations::{BatchNormStats, Mode};
pub use network::{
    backward, fe_forward, forward, layout, md_forward, predict, ForwardTrace, Model,
    Normalization, SIGMA_FLOOR,
};
pub use types::{MixtureParams, Motion3D, Pose2D, Pose3D};
