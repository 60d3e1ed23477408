use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::text::{EncodeMode, DEFAULT_TEXT_WIDTH};

/// Which side of the text fusion supplies the attention queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Patch features query the projected text.
    #[default]
    MeshQuery,
    /// Projected text queries the patch features.
    TextQuery,
    /// No text input; pooled patch features only.
    Disabled,
}

/// Fields missing from a config file take their values from [`ModelConfig::desk`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default = "ModelConfig::desk", deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub text_width: usize,
    /// Width of the fused vector fed to the regression stack; 0 means `embed_dim`.
    pub fusion_dim: usize,
    /// Hidden width of the regression stack; 0 means `embed_dim`.
    pub head_hidden: usize,
    pub base_faces: usize,
    pub levels: u32,
    pub mask_ratio: f64,
    pub fusion: FusionMode,
    pub text_mode: EncodeMode,
    /// Millimeters per unit when feeding lengths to the network.
    pub length_scale: f64,
    /// Regression outputs are `label_offset + label_scale * raw`.
    pub label_offset: [f64; 3],
    pub label_scale: [f64; 3],
    /// Std of the truncated-normal init for the mask token; linear layers use Xavier.
    pub init_std: f64,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 384,
            encoder_blocks: 12,
            decoder_blocks: 6,
            heads: 6,
            mlp_ratio: 4.0,
            text_width: DEFAULT_TEXT_WIDTH,
            fusion_dim: 0,
            head_hidden: 0,
            base_faces: 500,
            levels: 3,
            mask_ratio: 0.5,
            fusion: FusionMode::MeshQuery,
            text_mode: EncodeMode::Sentence,
            length_scale: 10.0,
            label_offset: [3.0, 5.25, 7.0],
            label_scale: [2.0, 1.75, 3.0],
            init_std: 0.02,
            norm_eps: 1e-6,
        }
    }
}

impl ModelConfig {
    /// Small preset that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        Self { embed_dim: 64, encoder_blocks: 2, decoder_blocks: 1, heads: 4, ..Self::default() }
    }

    pub fn fusion_width(&self) -> usize {
        if self.fusion_dim == 0 {
            self.embed_dim
        } else {
            self.fusion_dim
        }
    }

    pub fn hidden_width(&self) -> usize {
        if self.head_hidden == 0 {
            self.embed_dim
        } else {
            self.head_hidden
        }
    }

    pub fn mlp_width(&self) -> usize {
        ((self.embed_dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!("embed_dim {} must be a positive multiple of heads {}", self.embed_dim, self.heads));
        }
        if self.text_width == 0 {
            return bad("text_width must be positive".into());
        }
        if !(self.mlp_ratio > 0.0) {
            return bad("mlp_ratio must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return bad(format!("mask_ratio {} outside [0, 1]", self.mask_ratio));
        }
        if self.levels > crate::remesh::MAX_LEVELS {
            return bad(format!("levels {} too deep", self.levels));
        }
        if !(self.length_scale > 0.0) || !(self.init_std > 0.0) || !(self.norm_eps > 0.0) {
            return bad("length_scale, init_std and norm_eps must be positive".into());
        }
        if self.label_scale.iter().any(|s| !(*s > 0.0)) {
            return bad("label_scale entries must be positive".into());
        }
        Ok(())
    }
}
