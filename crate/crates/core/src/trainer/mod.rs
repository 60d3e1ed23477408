//! Training schedules, evaluation, prediction and ablation sweeps.

mod config;
mod data;
mod run;
mod train;

pub use config::{Paradigm, TrainConfig};
pub use data::{load_sample, load_split, preprocess_mesh, subset, synthesize_sample, Sample};
pub use run::{
    evaluate_checkpoint, load_samples, make_encoder, predict_mesh, render_sweep, run_training, sweep, PromptFields,
    SweepKind, SweepRow, CHECKPOINT_FILE, RESOLVED_CONFIG_FILE, RUNLOG_FILE,
};
pub use train::{
    encoder_checksum, evaluate, is_encoder_param, predict_all, pretrain, pretrain_with_hook, train, train_ssat,
    train_ssat_with_hook, train_ssl_ft, train_ssl_ft_with_hook, EpochRecord, PhaseTiming, RunLog, StepHook, StepRecord,
    FINETUNE, JOINT, PRETRAIN,
};

use crate::mesh::MeshError;
use crate::model::ModelError;
use crate::objectives::{LossBreakdown, ObjectiveError};
use crate::patch::PatchError;
use crate::remesh::RemeshError;
use crate::synth::SynthError;
use crate::tensor::CheckpointError;
use crate::text::TextError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("sample {id}")]
    Sample {
        id: usize,
        #[source]
        source: Box<TrainError>,
    },
    #[error("non-finite loss in {phase} at step {step}: {loss:?}")]
    NonFinite { phase: String, step: usize, loss: Box<LossBreakdown> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Remesh(#[from] RemeshError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
