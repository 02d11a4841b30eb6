//! Difference/similarity odometry network: a residual feature pyramid
//! shared by both frames, an attention-weighted difference branch, a
//! cosine-similarity branch, and a fully connected regression head.

pub mod config;
pub mod model;

pub use config::{BlockKind, NetConfig, Variant};
pub use model::{rmse, rmse_loss, DifferenceOutputs, FeaturePyramid, OdomNet};

use crate::autonn::AutonnError;

#[derive(Debug, thiserror::Error)]
pub enum OdomNetError {
    #[error("invalid network config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("train mode needs a dropout seed")]
    MissingSeed,
    #[error(transparent)]
    Autonn(#[from] AutonnError),
}
