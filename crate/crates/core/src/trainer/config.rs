use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::ModelConfig;
use crate::objectives::LossConfig;
use crate::remesh::RemeshConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Paradigm {
    /// Both branches optimized together every step.
    #[default]
    Ssat,
    /// Reconstruction pretraining, then regression fine-tuning.
    SslFt,
}

impl std::str::FromStr for Paradigm {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self, TrainError> {
        match s {
            "ssat" => Ok(Self::Ssat),
            "ssl-ft" | "ssl_ft" => Ok(Self::SslFt),
            other => Err(TrainError::Config(format!("unknown paradigm `{other}` (ssat or ssl-ft)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub paradigm: Paradigm,
    /// Joint epochs, or fine-tuning epochs for the two-stage schedule.
    pub epochs: usize,
    pub pretrain_epochs: usize,
    /// Stop each phase after this many optimizer steps; 0 means no cap.
    pub max_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Fraction of the training split used, taken per seeded shuffle.
    pub train_fraction: f64,
    /// Evaluate on the test split every this many epochs; 0 disables.
    pub eval_every: usize,
    pub log_wall_clock: bool,
    pub manifest: Option<PathBuf>,
    /// Directory for packed preprocessed samples.
    pub cache_dir: Option<PathBuf>,
    /// Precomputed prompt embeddings replacing the hash encoder.
    pub text_embeddings: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub remesh: RemeshConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            paradigm: Paradigm::Ssat,
            epochs: 20,
            pretrain_epochs: 300,
            max_steps: 0,
            batch_size: 4,
            learning_rate: 1e-4,
            weight_decay: 0.05,
            grad_clip: 1.0,
            seed: 0,
            train_fraction: 1.0,
            eval_every: 0,
            log_wall_clock: true,
            manifest: None,
            cache_dir: None,
            text_embeddings: None,
            output_dir: PathBuf::from("runs"),
            loss: LossConfig::default(),
            model: ModelConfig::desk(),
            remesh: RemeshConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if self.paradigm == Paradigm::SslFt && self.pretrain_epochs == 0 {
            return bad("pretrain_epochs must be positive for ssl-ft");
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) || !(self.grad_clip > 0.0) {
            return bad("learning_rate and grad_clip must be positive, weight_decay non-negative");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad("train_fraction must be in (0, 1]");
        }
        self.loss.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        self.model.validate()?;
        self.remesh.validate()?;
        if self.model.levels != self.remesh.subdivision_levels {
            return bad("model.levels must equal remesh.subdivision_levels");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
