//! The dual-branch network: shared patch embedding and encoder, a masked
//! reconstruction decoder, text fusion and the three regression heads.

use std::path::{Path, PathBuf};

use super::layers::{attention, Block, Builder, Ctx, Linear, Norm};
use super::{AbutmentParams, FusionMode, ModelConfig, ModelError};
use crate::mesh::FEATURE_DIM;
use crate::objectives::{LossBreakdown, LossConfig};
use crate::patch::{feature_width, MaskSpec, PatchFeatureSet};
use crate::remesh::vertices_per_patch;
use crate::tensor::{Archive, Axis, Graph, ParamId, ParamStore, Tensor, TensorError, Var};
use crate::text::TextEmbedding;

pub const DECODER_PREFIX: &str = "decoder.";

pub fn is_decoder_param(name: &str) -> bool {
    name.starts_with(DECODER_PREFIX)
}

/// Divides areas by `ls^2` and centers by `ls`; unitless entries are kept.
pub fn scale_features(features: &Tensor, ls: f64) -> Tensor {
    let mut out = features.clone();
    out.set_requires_grad(false);
    for chunk in out.values_mut().chunks_mut(FEATURE_DIM) {
        chunk[0] /= ls * ls;
        for c in &mut chunk[7..10] {
            *c /= ls;
        }
    }
    out
}

fn scaled_centers(centers: &Tensor, ls: f64) -> Tensor {
    let mut out = Tensor::from_vec(centers.shape(), centers.values().to_vec()).expect("shape");
    out.values_mut().iter_mut().for_each(|v| *v /= ls);
    out
}

#[derive(Debug, Clone)]
struct Embed {
    fc1: Linear,
    fc2: Linear,
    pos: Linear,
}

#[derive(Debug, Clone)]
struct Decoder {
    mask_token: ParamId,
    pos: Linear,
    blocks: Vec<Block>,
    norm: Norm,
    vertex_head: Linear,
    face_head: Linear,
}

#[derive(Debug, Clone)]
struct Fusion {
    text_proj: Option<Linear>,
    out: Linear,
}

#[derive(Debug, Clone)]
struct Head {
    stack: [Linear; 3],
    outputs: [Linear; 3],
}

/// Intermediate values of the text fusion.
#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    pub projected_text: Option<Var>,
    pub fused: Var,
    pub max_pooled: Var,
    pub mean_pooled: Var,
    pub output: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ReconVars {
    /// Encoder output over the visible patches only.
    pub encoded_visible: Option<Var>,
    pub vertices: Var,
    pub face_features: Var,
    pub l_cd: Var,
    pub l_mse_face: Var,
    pub l_re: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct RegressionVars {
    pub prediction: Var,
    pub l_l1: Var,
    pub l_mse_reg: Var,
    pub l_rg: Var,
}

/// Loss nodes of one sample. Absent branches contribute zero.
#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    pub recon: Option<ReconVars>,
    pub regression: Option<RegressionVars>,
    pub total: Var,
}

impl StepVars {
    pub fn breakdown(&self, g: &Graph, loss: &LossConfig) -> LossBreakdown {
        let v = |x: Option<Var>| x.map(|x| g.scalar(x)).unwrap_or(0.0);
        let l_cd = v(self.recon.map(|r| r.l_cd));
        let l_mse_face = v(self.recon.map(|r| r.l_mse_face));
        let l_l1 = v(self.regression.map(|r| r.l_l1));
        let l_mse_reg = v(self.regression.map(|r| r.l_mse_reg));
        let l_re = l_cd + loss.face_weight * l_mse_face;
        let l_rg = l_l1 + l_mse_reg;
        LossBreakdown { l_cd, l_mse_face, l_re, l_l1, l_mse_reg, l_rg, l_total: g.scalar(self.total) }
    }
}

/// Which terms a training step optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Weighted reconstruction plus regression.
    Joint,
    Reconstruction,
    Regression,
}

/// Parameter layout of the network; evaluation reads values from whichever
/// store the [`Ctx`] points at.
#[derive(Debug, Clone)]
pub struct Architecture {
    config: ModelConfig,
    embed: Embed,
    encoder: Vec<Block>,
    decoder: Option<Decoder>,
    fusion: Fusion,
    head: Head,
}

impl Architecture {
    fn build(config: &ModelConfig, store: &mut ParamStore, seed: u64, with_decoder: bool) -> Result<Self, ModelError> {
        config.validate()?;
        let c = config;
        let d = c.embed_dim;
        let fw = feature_width(c.levels);
        let mut b = Builder { store, seed, std: c.init_std };
        let embed = Embed {
            fc1: b.linear("embed.fc1", fw, d)?,
            fc2: b.linear("embed.fc2", d, d)?,
            pos: b.linear("embed.pos", 3, d)?,
        };
        let encoder = (0..c.encoder_blocks)
            .map(|i| b.block(&format!("encoder.blocks.{i}"), d, c.mlp_width(), c.heads))
            .collect::<Result<Vec<_>, _>>()?;
        let decoder = if with_decoder {
            Some(Decoder {
                mask_token: b.weight("decoder.mask_token", &[1, d])?,
                pos: b.linear("decoder.pos", 3, d)?,
                blocks: (0..c.decoder_blocks)
                    .map(|i| b.block(&format!("decoder.blocks.{i}"), d, c.mlp_width(), c.heads))
                    .collect::<Result<Vec<_>, _>>()?,
                norm: b.norm("decoder.norm", d)?,
                vertex_head: b.linear("decoder.vertex_head", d, 3 * vertices_per_patch(c.levels))?,
                face_head: b.linear("decoder.face_head", d, fw)?,
            })
        } else {
            None
        };
        let fusion = Fusion {
            text_proj: match c.fusion {
                FusionMode::Disabled => None,
                _ => Some(b.linear("fusion.text_proj", c.text_width, d)?),
            },
            out: b.linear("fusion.out", 2 * d, c.fusion_width())?,
        };
        let h = c.hidden_width();
        let head = Head {
            stack: [
                b.linear("head.fc1", c.fusion_width(), h)?,
                b.linear("head.fc2", h, h)?,
                b.linear("head.fc3", h, h)?,
            ],
            outputs: [
                b.linear("head.transgingival", h, 1)?,
                b.linear("head.diameter", h, 1)?,
                b.linear("head.height", h, 1)?,
            ],
        };
        Ok(Self { config: config.clone(), embed, encoder, decoder, fusion, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn has_decoder(&self) -> bool {
        self.decoder.is_some()
    }

    fn check_input(&self, pfs: &PatchFeatureSet) -> Result<(), ModelError> {
        let expected = feature_width(self.config.levels);
        if pfs.feature_width() != expected {
            return Err(ModelError::Width { what: "patch features", expected, got: pfs.feature_width() });
        }
        Ok(())
    }

    /// Patch tokens `[patches, d]`: MLP of the features plus a linear map of the centers.
    pub fn embed(&self, cx: &mut Ctx, pfs: &PatchFeatureSet) -> Result<Var, ModelError> {
        self.check_input(pfs)?;
        let ls = self.config.length_scale;
        let f = cx.g.constant(scale_features(&pfs.features, ls));
        let c = cx.g.constant(scaled_centers(&pfs.centers, ls));
        let h = self.embed.fc1.forward(cx, f)?;
        let h = cx.g.gelu(h);
        let h = self.embed.fc2.forward(cx, h)?;
        let p = self.embed.pos.forward(cx, c)?;
        Ok(cx.g.add(h, p)?)
    }

    pub fn encode(&self, cx: &mut Ctx, x: Var) -> Result<Var, ModelError> {
        let mut x = x;
        for blk in &self.encoder {
            x = blk.forward(cx, x, self.config.norm_eps)?;
        }
        Ok(x)
    }

    /// Reconstruction heads at the masked positions, `None` when nothing is masked.
    /// Vertex predictions are in millimeters relative to the patch center;
    /// face-feature predictions are in scaled units.
    pub fn decode(
        &self,
        cx: &mut Ctx,
        encoded_visible: Option<Var>,
        mask: &MaskSpec,
        centers: &Tensor,
    ) -> Result<Option<(Var, Var)>, ModelError> {
        let dec = self.decoder.as_ref().ok_or(ModelError::MissingDecoder)?;
        let n = mask.patch_count();
        if centers.rows() != n {
            return Err(ModelError::Width { what: "mask vs centers", expected: centers.rows(), got: n });
        }
        if mask.masked.is_empty() {
            return Ok(None);
        }
        let token = cx.p(dec.mask_token);
        let masked_tokens = cx.g.embedding_lookup(token, &vec![0; mask.masked.len()])?;
        let stacked = match encoded_visible {
            Some(v) => {
                if cx.g.value(v).rows() != mask.visible.len() {
                    return Err(ModelError::Width {
                        what: "visible tokens",
                        expected: mask.visible.len(),
                        got: cx.g.value(v).rows(),
                    });
                }
                cx.g.concat(&[v, masked_tokens], Axis::Rows)?
            }
            None => masked_tokens,
        };
        // Stacked rows are visible-then-masked; gather back to patch order.
        let mut order = vec![0usize; n];
        for (row, &p) in mask.visible.iter().chain(&mask.masked).enumerate() {
            order[p] = row;
        }
        let tokens = cx.g.embedding_lookup(stacked, &order)?;
        let c = cx.g.constant(scaled_centers(centers, self.config.length_scale));
        let pos = dec.pos.forward(cx, c)?;
        let mut x = cx.g.add(tokens, pos)?;
        for blk in &dec.blocks {
            x = blk.forward(cx, x, self.config.norm_eps)?;
        }
        let x = dec.norm.forward(cx, x, self.config.norm_eps)?;
        let xm = cx.g.embedding_lookup(x, &mask.masked)?;
        let v = dec.vertex_head.forward(cx, xm)?;
        let v = cx.g.scale(v, self.config.length_scale);
        let f = dec.face_head.forward(cx, xm)?;
        Ok(Some((v, f)))
    }

    pub fn fuse(&self, cx: &mut Ctx, encoded: Var, text: &TextEmbedding) -> Result<FusionVars, ModelError> {
        let d = self.config.embed_dim as f64;
        let (projected_text, fused) = match (self.config.fusion, &self.fusion.text_proj) {
            (FusionMode::Disabled, _) | (_, None) => (None, encoded),
            (mode, Some(proj)) => {
                if text.width() != self.config.text_width {
                    return Err(ModelError::Width {
                        what: "text embedding",
                        expected: self.config.text_width,
                        got: text.width(),
                    });
                }
                if text.tokens() == 0 {
                    return Err(ModelError::MissingPrompt);
                }
                let t = cx.g.constant(text.vectors.clone());
                let pj = proj.forward(cx, t)?;
                let scale = 1.0 / d.sqrt();
                let fused = if mode == FusionMode::MeshQuery {
                    let a = attention(cx.g, encoded, pj, pj, scale)?;
                    cx.g.add(encoded, a)?
                } else {
                    let a = attention(cx.g, pj, encoded, encoded, scale)?;
                    cx.g.add(pj, a)?
                };
                (Some(pj), fused)
            }
        };
        let max_pooled = cx.g.max_pool(fused, Axis::Rows)?;
        let mean_pooled = cx.g.mean_pool(fused, Axis::Rows)?;
        let cat = cx.g.concat(&[max_pooled, mean_pooled], Axis::Cols)?;
        let output = self.fusion.out.forward(cx, cat)?;
        Ok(FusionVars { projected_text, fused, max_pooled, mean_pooled, output })
    }

    /// Parameters in millimeters, `[1, 3]`.
    pub fn regress(&self, cx: &mut Ctx, fused: Var) -> Result<Var, ModelError> {
        let mut h = fused;
        for fc in &self.head.stack {
            h = fc.forward(cx, h)?;
            h = cx.g.gelu(h);
        }
        let outs = self.head.outputs.iter().map(|o| o.forward(cx, h)).collect::<Result<Vec<_>, _>>()?;
        let raw = cx.g.concat(&outs, Axis::Cols)?;
        let scale = cx.g.constant(Tensor::from_vec(&[1, 3], self.config.label_scale.to_vec())?);
        let offset = cx.g.constant(Tensor::from_vec(&[1, 3], self.config.label_offset.to_vec())?);
        let scaled = cx.g.mul(raw, scale)?;
        Ok(cx.g.add(scaled, offset)?)
    }

    /// Full-input regression forward from already embedded tokens.
    pub fn forward_regression_from(&self, cx: &mut Ctx, x: Var, text: &TextEmbedding) -> Result<Var, ModelError> {
        let fe = self.encode(cx, x)?;
        let fo = self.fuse(cx, fe, text)?;
        self.regress(cx, fo.output)
    }

    fn recon_terms(
        &self,
        cx: &mut Ctx,
        x: Var,
        pfs: &PatchFeatureSet,
        mask: &MaskSpec,
        loss: &LossConfig,
    ) -> Result<Option<ReconVars>, ModelError> {
        if mask.patch_count() != pfs.patch_count() {
            return Err(ModelError::Width { what: "mask", expected: pfs.patch_count(), got: mask.patch_count() });
        }
        let encoded = if mask.visible.is_empty() {
            None
        } else {
            let xv = cx.g.embedding_lookup(x, &mask.visible)?;
            Some(self.encode(cx, xv)?)
        };
        let Some((v, f)) = self.decode(cx, encoded, mask, &pfs.centers)? else {
            return Ok(None);
        };
        let target_v = cx.g.constant(pfs.patch_vertex_rel.select_rows(&mask.masked));
        let l_cd = cx.g.chamfer(v, target_v, loss.squared_chamfer)?;
        let target_f = cx.g.constant(scale_features(&pfs.features.select_rows(&mask.masked), self.config.length_scale));
        let diff = cx.g.sub(f, target_f)?;
        let sq = cx.g.square(diff);
        let s = cx.g.sum(sq);
        let l_mse_face = cx.g.scale(s, 1.0 / mask.masked.len() as f64);
        let weighted = cx.g.scale(l_mse_face, loss.face_weight);
        let l_re = cx.g.add(l_cd, weighted)?;
        Ok(Some(ReconVars { encoded_visible: encoded, vertices: v, face_features: f, l_cd, l_mse_face, l_re }))
    }

    fn regression_terms(
        &self,
        cx: &mut Ctx,
        x: Var,
        text: &TextEmbedding,
        label: &AbutmentParams,
        loss: &LossConfig,
    ) -> Result<RegressionVars, ModelError> {
        let prediction = self.forward_regression_from(cx, x, text)?;
        let y = cx.g.constant(Tensor::from_vec(&[1, 3], label.to_array().to_vec())?);
        let l_l1 = cx.g.smooth_l1(prediction, y, loss.smooth_l1_threshold)?;
        let diff = cx.g.sub(prediction, y)?;
        let sq = cx.g.square(diff);
        let l_mse_reg = cx.g.mean(sq)?;
        let l_rg = cx.g.add(l_l1, l_mse_reg)?;
        Ok(RegressionVars { prediction, l_l1, l_mse_reg, l_rg })
    }

    /// Loss graph for one sample. The patch embedding is computed once and
    /// shared by both branches.
    pub fn step_loss(
        &self,
        cx: &mut Ctx,
        objective: Objective,
        pfs: &PatchFeatureSet,
        text: &TextEmbedding,
        label: &AbutmentParams,
        mask: &MaskSpec,
        loss: &LossConfig,
    ) -> Result<StepVars, ModelError> {
        let x = self.embed(cx, pfs)?;
        let recon = match objective {
            Objective::Regression => None,
            _ => self.recon_terms(cx, x, pfs, mask, loss)?,
        };
        let regression = match objective {
            Objective::Reconstruction => None,
            _ => Some(self.regression_terms(cx, x, text, label, loss)?),
        };
        let total = match (objective, recon, regression) {
            (Objective::Joint, Some(r), Some(g)) => {
                let w = cx.g.scale(r.l_re, loss.recon_weight);
                cx.g.add(w, g.l_rg)?
            }
            (_, _, Some(g)) => g.l_rg,
            (_, Some(r), None) => r.l_re,
            (_, None, None) => cx.g.constant(Tensor::scalar(0.0)),
        };
        Ok(StepVars { recon, regression, total })
    }
}

/// Parameters plus their layout.
#[derive(Debug, Clone)]
pub struct AbutmentNet {
    arch: Architecture,
    store: ParamStore,
}

pub fn config_sidecar(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("config.json")
}

impl AbutmentNet {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut store = ParamStore::new();
        let arch = Architecture::build(config, &mut store, seed, true)?;
        Ok(Self { arch, store })
    }

    /// Regression path only; no decoder parameters exist.
    pub fn new_inference(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut store = ParamStore::new();
        let arch = Architecture::build(config, &mut store, seed, false)?;
        Ok(Self { arch, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn parts_mut(&mut self) -> (&Architecture, &mut ParamStore) {
        (&self.arch, &mut self.store)
    }

    pub fn predict(&self, pfs: &PatchFeatureSet, text: &TextEmbedding) -> Result<AbutmentParams, ModelError> {
        let mut g = Graph::new();
        let mut cx = Ctx::new(&mut g, &self.store);
        let x = self.arch.embed(&mut cx, pfs)?;
        let y = self.arch.forward_regression_from(&mut cx, x, text)?;
        let v = g.value(y).values();
        Ok(AbutmentParams::new(v[0], v[1], v[2]))
    }

    /// The fused vector fed to the regression stack.
    pub fn fused_output(&self, pfs: &PatchFeatureSet, text: &TextEmbedding) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new();
        let mut cx = Ctx::new(&mut g, &self.store);
        let x = self.arch.embed(&mut cx, pfs)?;
        let fe = self.arch.encode(&mut cx, x)?;
        let fo = self.arch.fuse(&mut cx, fe, text)?;
        Ok(g.value(fo.output).values().to_vec())
    }

    pub fn archive(&self) -> Archive {
        Archive::from_store(&self.store)
    }

    /// Writes the parameter archive and a JSON config sidecar.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        self.archive().save(path)?;
        let json = serde_json::to_string_pretty(self.config()).expect("config serializes");
        std::fs::write(config_sidecar(path), json)?;
        Ok(())
    }

    pub fn read_config(path: &Path) -> Result<ModelConfig, ModelError> {
        let text = std::fs::read_to_string(config_sidecar(path))?;
        serde_json::from_str(&text).map_err(|e| ModelError::Config(e.to_string()))
    }

    pub fn from_archive(config: &ModelConfig, archive: &Archive, with_decoder: bool) -> Result<Self, ModelError> {
        let mut net = if with_decoder { Self::new(config, 0)? } else { Self::new_inference(config, 0)? };
        archive.apply_to(&mut net.store, |_| true)?;
        Ok(net)
    }

    /// Loads everything, decoder included.
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let config = Self::read_config(path)?;
        Self::from_archive(&config, &Archive::load(path)?, true)
    }

    /// Loads only the parameters the regression path reads.
    pub fn load_for_inference(path: &Path) -> Result<Self, ModelError> {
        let config = Self::read_config(path)?;
        Self::from_archive(&config, &Archive::load(path)?, false)
    }
}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Tensor(e)
    }
}
