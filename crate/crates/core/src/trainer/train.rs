use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::data::{subset, Sample};
use super::{Paradigm, TrainConfig, TrainError};
use crate::model::{AbutmentNet, AbutmentParams, Ctx, Objective};
use crate::objectives::{mean_iou_percent, IouReport, LossBreakdown};
use crate::patch::MaskSpec;
use crate::seed::derive_seed;
use crate::tensor::{clip_grad_norm, cosine_lr, AdamW, Archive, Graph, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub phase: String,
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub grad_norm: f64,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: String,
    pub epoch: usize,
    pub mean_loss: LossBreakdown,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<IouReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub phases: Vec<PhaseTiming>,
    /// `(label, sha256)` of the encoder parameters at phase boundaries.
    pub encoder_checksums: Vec<(String, String)>,
    pub final_eval: Option<IouReport>,
    pub checkpoint: Option<PathBuf>,
}

impl RunLog {
    pub fn total_seconds(&self) -> f64 {
        self.phases.iter().map(|p| p.seconds).sum()
    }

    pub fn phase_steps<'a>(&'a self, phase: &'a str) -> impl Iterator<Item = &'a StepRecord> + 'a {
        self.steps.iter().filter(move |s| s.phase == phase)
    }

    /// One JSON object per line: steps, epochs, phases, then a summary.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        #[serde(tag = "kind", rename_all = "lowercase")]
        enum Line<'a> {
            Step(&'a StepRecord),
            Epoch(&'a EpochRecord),
            Phase(&'a PhaseTiming),
            Summary {
                encoder_checksums: &'a [(String, String)],
                final_eval: &'a Option<IouReport>,
                checkpoint: &'a Option<PathBuf>,
            },
        }
        let mut lines: Vec<Line> = Vec::new();
        lines.extend(self.steps.iter().map(Line::Step));
        lines.extend(self.epochs.iter().map(Line::Epoch));
        lines.extend(self.phases.iter().map(Line::Phase));
        lines.push(Line::Summary {
            encoder_checksums: &self.encoder_checksums,
            final_eval: &self.final_eval,
            checkpoint: &self.checkpoint,
        });
        lines.iter().map(|l| serde_json::to_string(l).expect("log serializes") + "\n").collect()
    }
}

pub const PRETRAIN: &str = "pretrain";
pub const FINETUNE: &str = "finetune";
pub const JOINT: &str = "joint";

/// Called after gradients for a step are accumulated, before the update.
pub type StepHook<'a> = dyn FnMut(&str, usize, &ParamStore) + 'a;

pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with("embed.") || name.starts_with("encoder.")
}

/// SHA-256 over the names and raw bytes of the embedding and encoder parameters.
pub fn encoder_checksum(store: &ParamStore) -> String {
    let mut h = Sha256::new();
    for (_, p) in store.iter().filter(|(_, p)| is_encoder_param(&p.name)) {
        h.update(p.name.as_bytes());
        for v in p.tensor.values() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn predict_all(net: &AbutmentNet, samples: &[Sample]) -> Result<Vec<AbutmentParams>, TrainError> {
    samples.iter().map(|s| Ok(net.predict(&s.pfs, &s.text)?)).collect()
}

pub fn evaluate(net: &AbutmentNet, samples: &[Sample]) -> Result<IouReport, TrainError> {
    let pred = predict_all(net, samples)?;
    let truth: Vec<_> = samples.iter().map(|s| s.label).collect();
    Ok(mean_iou_percent(&pred, &truth)?)
}

fn mean_breakdown(items: &[LossBreakdown]) -> LossBreakdown {
    let n = items.len().max(1) as f64;
    let mut m = LossBreakdown::default();
    for b in items {
        m.l_cd += b.l_cd / n;
        m.l_mse_face += b.l_mse_face / n;
        m.l_re += b.l_re / n;
        m.l_l1 += b.l_l1 / n;
        m.l_mse_reg += b.l_mse_reg / n;
        m.l_rg += b.l_rg / n;
        m.l_total += b.l_total / n;
    }
    m
}

struct Phase<'a> {
    name: &'a str,
    objective: Objective,
    epochs: usize,
}

fn run_phase(
    net: &mut AbutmentNet,
    phase: Phase,
    cfg: &TrainConfig,
    train: &[Sample],
    eval: &[Sample],
    log: &mut RunLog,
    hook: &mut StepHook,
) -> Result<(), TrainError> {
    if train.is_empty() {
        return Err(TrainError::Config("no training samples".into()));
    }
    let started = Instant::now();
    let batches = train.len().div_ceil(cfg.batch_size);
    let mut total = phase.epochs * batches;
    if cfg.max_steps > 0 {
        total = total.min(cfg.max_steps);
    }
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut step = 0;
    let mask_ratio = net.config().mask_ratio;
    'epochs: for epoch in 0..phase.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[3, epoch as u64])));
        let mut epoch_losses = Vec::new();
        for batch in order.chunks(cfg.batch_size) {
            if step >= total {
                break 'epochs;
            }
            net.store_mut().zero_grad();
            let mut batch_losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &train[i];
                let mask = MaskSpec::sample(
                    s.pfs.patch_count(),
                    mask_ratio,
                    derive_seed(cfg.seed, &[2, epoch as u64, s.id as u64]),
                )?;
                let (arch, store) = net.parts_mut();
                let mut g = Graph::new();
                let vars = {
                    let mut cx = Ctx::new(&mut g, store);
                    arch.step_loss(&mut cx, phase.objective, &s.pfs, &s.text, &s.label, &mask, &cfg.loss)?
                };
                let b = vars.breakdown(&g, &cfg.loss);
                if !b.l_total.is_finite() {
                    return Err(TrainError::NonFinite { phase: phase.name.to_string(), step, loss: Box::new(b) });
                }
                let grads = g.backward(vars.total);
                store.accumulate(&g, &grads, 1.0 / batch.len() as f64);
                batch_losses.push(b);
            }
            hook(phase.name, step, net.store());
            let grad_norm = clip_grad_norm(net.store_mut(), cfg.grad_clip);
            let lr = cosine_lr(cfg.learning_rate, step, total);
            opt.step(net.store_mut(), lr);
            let loss = mean_breakdown(&batch_losses);
            log::debug!("{} step {step} loss {:.5}", phase.name, loss.l_total);
            log.steps.push(StepRecord { phase: phase.name.to_string(), epoch, step, lr, grad_norm, loss });
            epoch_losses.extend(batch_losses);
            step += 1;
        }
        let last = epoch + 1 == phase.epochs || step >= total;
        let due = cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || last);
        let eval_report = if due && !eval.is_empty() { Some(evaluate(net, eval)?) } else { None };
        log.epochs.push(EpochRecord {
            phase: phase.name.to_string(),
            epoch,
            mean_loss: mean_breakdown(&epoch_losses),
            eval: eval_report,
        });
        if let Some(r) = eval_report {
            log::info!(
                "{} epoch {epoch} eval iou {:.2}/{:.2}/{:.2}",
                phase.name,
                r.transgingival,
                r.diameter,
                r.height
            );
        }
    }
    let seconds = started.elapsed().as_secs_f64();
    if cfg.log_wall_clock {
        log::info!("{} finished {step} steps in {seconds:.2}s", phase.name);
    }
    log.phases.push(PhaseTiming { phase: phase.name.to_string(), seconds, steps: step });
    Ok(())
}

fn training_subset(cfg: &TrainConfig, train: &[Sample]) -> Vec<Sample> {
    subset(train, cfg.train_fraction, cfg.seed)
}

fn finish(net: &AbutmentNet, eval: &[Sample], log: &mut RunLog) -> Result<(), TrainError> {
    if !eval.is_empty() {
        log.final_eval = Some(evaluate(net, eval)?);
    }
    Ok(())
}

pub fn train_ssat(cfg: &TrainConfig, train: &[Sample], eval: &[Sample]) -> Result<(AbutmentNet, RunLog), TrainError> {
    train_ssat_with_hook(cfg, train, eval, &mut |_, _, _| {})
}

pub fn train_ssat_with_hook(
    cfg: &TrainConfig,
    train: &[Sample],
    eval: &[Sample],
    hook: &mut StepHook,
) -> Result<(AbutmentNet, RunLog), TrainError> {
    cfg.validate()?;
    let train = training_subset(cfg, train);
    let mut net = AbutmentNet::new(&cfg.model, derive_seed(cfg.seed, &[1]))?;
    let mut log = RunLog::default();
    let phase = Phase { name: JOINT, objective: Objective::Joint, epochs: cfg.epochs };
    run_phase(&mut net, phase, cfg, &train, eval, &mut log, hook)?;
    finish(&net, eval, &mut log)?;
    Ok((net, log))
}

/// Reconstruction-only training for `pretrain_epochs`.
pub fn pretrain(cfg: &TrainConfig, train: &[Sample]) -> Result<(AbutmentNet, RunLog), TrainError> {
    pretrain_with_hook(cfg, train, &mut |_, _, _| {})
}

pub fn pretrain_with_hook(
    cfg: &TrainConfig,
    train: &[Sample],
    hook: &mut StepHook,
) -> Result<(AbutmentNet, RunLog), TrainError> {
    cfg.validate()?;
    if cfg.pretrain_epochs == 0 {
        return Err(TrainError::Config("pretrain_epochs must be positive".into()));
    }
    let train = training_subset(cfg, train);
    let mut log = RunLog::default();
    let mut net = AbutmentNet::new(&cfg.model, derive_seed(cfg.seed, &[1]))?;
    let phase = Phase { name: PRETRAIN, objective: Objective::Reconstruction, epochs: cfg.pretrain_epochs };
    run_phase(&mut net, phase, cfg, &train, &[], &mut log, hook)?;
    log.encoder_checksums.push((format!("{PRETRAIN}-end"), encoder_checksum(net.store())));
    Ok((net, log))
}

pub fn train_ssl_ft(cfg: &TrainConfig, train: &[Sample], eval: &[Sample]) -> Result<(AbutmentNet, RunLog), TrainError> {
    train_ssl_ft_with_hook(cfg, train, eval, &mut |_, _, _| {})
}

/// Reconstruction pretraining, then a fresh network whose embedding and
/// encoder are loaded from the pretrained weights is fine-tuned on regression.
pub fn train_ssl_ft_with_hook(
    cfg: &TrainConfig,
    train: &[Sample],
    eval: &[Sample],
    hook: &mut StepHook,
) -> Result<(AbutmentNet, RunLog), TrainError> {
    let (pre, mut log) = pretrain_with_hook(cfg, train, hook)?;
    let train = training_subset(cfg, train);

    let mut archive = Archive::from_store(pre.store());
    archive.retain(is_encoder_param);
    let mut net = AbutmentNet::new(&cfg.model, derive_seed(cfg.seed, &[4]))?;
    archive.apply_to(net.store_mut(), is_encoder_param)?;
    log.encoder_checksums.push((format!("{FINETUNE}-start"), encoder_checksum(net.store())));
    let phase = Phase { name: FINETUNE, objective: Objective::Regression, epochs: cfg.epochs };
    run_phase(&mut net, phase, cfg, &train, eval, &mut log, hook)?;
    finish(&net, eval, &mut log)?;
    Ok((net, log))
}

pub fn train(cfg: &TrainConfig, train: &[Sample], eval: &[Sample]) -> Result<(AbutmentNet, RunLog), TrainError> {
    match cfg.paradigm {
        Paradigm::Ssat => train_ssat(cfg, train, eval),
        Paradigm::SslFt => train_ssl_ft(cfg, train, eval),
    }
}
