//! File-backed entry points used by the command line.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::{load_split, preprocess_mesh, Sample};
use super::train::{evaluate, train, RunLog};
use super::{TrainConfig, TrainError};
use crate::mesh::Mesh;
use crate::model::{AbutmentNet, AbutmentParams};
use crate::objectives::IouReport;
use crate::remesh::RemeshConfig;
use crate::synth::{load_manifest, Split};
use crate::text::{render_prompt, EncodeMode, FileEncoder, HashEncoder, TextEncoder};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const RUNLOG_FILE: &str = "runlog.jsonl";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

pub fn make_encoder(cfg: &TrainConfig) -> Result<Box<dyn TextEncoder>, TrainError> {
    let enc: Box<dyn TextEncoder> = match &cfg.text_embeddings {
        Some(p) => Box::new(FileEncoder::load(p)?),
        None => Box::new(HashEncoder::new(cfg.model.text_width, cfg.seed)),
    };
    if enc.width() != cfg.model.text_width {
        return Err(TrainError::Config(format!(
            "text embeddings have width {} but model.text_width is {}",
            enc.width(),
            cfg.model.text_width
        )));
    }
    Ok(enc)
}

/// Reads the manifest named in the config and returns `(train, test)` samples.
pub fn load_samples(cfg: &TrainConfig) -> Result<(Vec<Sample>, Vec<Sample>), TrainError> {
    let path = cfg.manifest.as_deref().ok_or_else(|| TrainError::Config("no manifest given".into()))?;
    let (manifest, root) = load_manifest(path)?;
    let enc = make_encoder(cfg)?;
    let mode = cfg.model.text_mode;
    let cache = cfg.cache_dir.as_deref();
    let train = load_split(&manifest.records, Split::Train, &root, &cfg.remesh, enc.as_ref(), mode, cache)?;
    let test = load_split(&manifest.records, Split::Test, &root, &cfg.remesh, enc.as_ref(), mode, cache)?;
    Ok((train, test))
}

/// Trains on the manifest, then writes the checkpoint, run log and resolved
/// config into `cfg.output_dir`.
pub fn run_training(cfg: &TrainConfig) -> Result<RunLog, TrainError> {
    cfg.validate()?;
    let (train_set, test_set) = load_samples(cfg)?;
    let (net, mut log) = train(cfg, &train_set, &test_set)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let ckpt = cfg.output_dir.join(CHECKPOINT_FILE);
    net.save(&ckpt)?;
    log.checkpoint = Some(ckpt);
    std::fs::write(cfg.output_dir.join(RUNLOG_FILE), log.to_jsonl())?;
    std::fs::write(cfg.output_dir.join(RESOLVED_CONFIG_FILE), cfg.to_toml())?;
    Ok(log)
}

/// Evaluates a saved checkpoint on one split of the configured manifest.
pub fn evaluate_checkpoint(cfg: &TrainConfig, checkpoint: &Path, split: Split) -> Result<IouReport, TrainError> {
    let net = AbutmentNet::load_for_inference(checkpoint)?;
    let mut cfg = cfg.clone();
    cfg.model = net.config().clone();
    cfg.remesh.subdivision_levels = cfg.model.levels;
    let path = cfg.manifest.as_deref().ok_or_else(|| TrainError::Config("no manifest given".into()))?;
    let (manifest, root) = load_manifest(path)?;
    let enc = make_encoder(&cfg)?;
    let cache = cfg.cache_dir.as_deref();
    let samples = load_split(&manifest.records, split, &root, &cfg.remesh, enc.as_ref(), cfg.model.text_mode, cache)?;
    if samples.is_empty() {
        return Err(TrainError::Config(format!("the {split:?} split is empty").to_lowercase()));
    }
    evaluate(&net, &samples)
}

pub struct PromptFields<'a> {
    pub location: &'a str,
    pub system: &'a str,
    pub series: &'a str,
}

pub fn predict_mesh(
    net: &AbutmentNet,
    mesh: &Mesh,
    remesh: &RemeshConfig,
    prompt: PromptFields,
    encoder: &dyn TextEncoder,
    mode: EncodeMode,
) -> Result<AbutmentParams, TrainError> {
    let pfs = preprocess_mesh(mesh, remesh)?;
    let prompt = render_prompt(prompt.location, prompt.system, prompt.series)?;
    let text = encoder.encode(&prompt, mode)?;
    Ok(net.predict(&pfs, &text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    TrainFraction,
    MaskRatio,
}

impl SweepKind {
    pub fn column(&self) -> &'static str {
        match self {
            SweepKind::TrainFraction => "train_fraction",
            SweepKind::MaskRatio => "mask_ratio",
        }
    }
}

impl std::str::FromStr for SweepKind {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self, TrainError> {
        match s {
            "train-fraction" | "fraction" => Ok(Self::TrainFraction),
            "mask-ratio" | "mask" => Ok(Self::MaskRatio),
            other => Err(TrainError::Config(format!("unknown sweep `{other}` (train-fraction or mask-ratio)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub iou: IouReport,
    pub seconds: f64,
}

/// Retrains once per value and reports test IoU for each.
pub fn sweep(
    cfg: &TrainConfig,
    kind: SweepKind,
    values: &[f64],
    train_set: &[Sample],
    test_set: &[Sample],
) -> Result<Vec<SweepRow>, TrainError> {
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let mut c = cfg.clone();
        match kind {
            SweepKind::TrainFraction => c.train_fraction = v,
            SweepKind::MaskRatio => c.model.mask_ratio = v,
        }
        let (net, log) = train(&c, train_set, test_set)?;
        let iou = match log.final_eval {
            Some(r) => r,
            None => evaluate(&net, test_set)?,
        };
        log::info!("sweep {}={v}: mean iou {:.2}", kind.column(), iou.mean());
        rows.push(SweepRow { value: v, iou, seconds: log.total_seconds() });
    }
    Ok(rows)
}

pub fn render_sweep(kind: SweepKind, rows: &[SweepRow]) -> String {
    let mut out = format!("{},iou_transgingival,iou_diameter,iou_height,iou_mean,seconds\n", kind.column());
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.3},{:.3},{:.3},{:.3},{:.2}",
            r.value,
            r.iou.transgingival,
            r.iou.diameter,
            r.iou.height,
            r.iou.mean(),
            r.seconds
        );
    }
    out
}
