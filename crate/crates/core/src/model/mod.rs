//! Mesh transformer with a reconstruction branch and a text-conditioned
//! regression branch sharing one encoder.

mod config;
mod layers;
mod net;
mod params;

pub use config::{FusionMode, ModelConfig};
pub use layers::{attention, Block, Ctx, Linear, Norm};
pub use net::{
    config_sidecar, is_decoder_param, scale_features, AbutmentNet, Architecture, FusionVars, Objective, ReconVars,
    RegressionVars, StepVars, DECODER_PREFIX,
};
pub use params::AbutmentParams;

use crate::tensor::{CheckpointError, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("{what}: expected width {expected}, got {got}")]
    Width { what: &'static str, expected: usize, got: usize },
    #[error("model was built without reconstruction decoder")]
    MissingDecoder,
    #[error("text prompt is required")]
    MissingPrompt,
    #[error(transparent)]
    Tensor(TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("model io: {0}")]
    Io(#[from] std::io::Error),
}
