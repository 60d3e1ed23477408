//! Reconstruction and regression losses and the interval IoU metric.

use serde::{Deserialize, Serialize};

use crate::model::AbutmentParams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObjectiveError {
    #[error("{0}: empty point set")]
    EmptySet(&'static str),
    #[error("{op}: size mismatch ({lhs} vs {rhs})")]
    SizeMismatch { op: &'static str, lhs: usize, rhs: usize },
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(String),
}

/// Loss weights: `face_weight` scales the face-feature MSE inside the
/// reconstruction loss, `recon_weight` scales the reconstruction loss inside
/// the total, and `smooth_l1_threshold` is the smooth-L1 transition point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub face_weight: f64,
    pub recon_weight: f64,
    pub smooth_l1_threshold: f64,
    /// Use squared point distances in the Chamfer term.
    pub squared_chamfer: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { face_weight: 1.0, recon_weight: 0.1, smooth_l1_threshold: 1.0, squared_chamfer: false }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.face_weight >= 0.0) || !(self.recon_weight >= 0.0) {
            return Err(ObjectiveError::InvalidConfig("loss weights must be non-negative".into()));
        }
        if !(self.smooth_l1_threshold > 0.0) {
            return Err(ObjectiveError::InvalidConfig("smooth-L1 threshold must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cd: f64,
    pub l_mse_face: f64,
    pub l_re: f64,
    pub l_l1: f64,
    pub l_mse_reg: f64,
    pub l_rg: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RegressionLosses {
    pub l_l1: f64,
    pub l_mse_reg: f64,
    pub l_rg: f64,
}

fn nearest_mean(from: &[[f64; 3]], to: &[[f64; 3]], squared: bool) -> f64 {
    let total: f64 = from
        .iter()
        .map(|p| {
            let best = to
                .iter()
                .map(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
                .fold(f64::INFINITY, f64::min);
            if squared {
                best
            } else {
                best.sqrt()
            }
        })
        .sum();
    total / from.len() as f64
}

/// Symmetric Chamfer distance with unsquared Euclidean point distances.
pub fn chamfer_l2(predicted: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<f64, ObjectiveError> {
    chamfer(predicted, truth, false)
}

/// Chamfer distance; `squared` switches to squared point distances.
pub fn chamfer(predicted: &[[f64; 3]], truth: &[[f64; 3]], squared: bool) -> Result<f64, ObjectiveError> {
    if predicted.is_empty() || truth.is_empty() {
        return Err(ObjectiveError::EmptySet("chamfer"));
    }
    Ok(nearest_mean(predicted, truth, squared) + nearest_mean(truth, predicted, squared))
}

/// Mean over rows (masked patches) of the squared L2 norm of the row difference.
pub fn face_feature_mse(predicted: &Tensor, truth: &Tensor) -> Result<f64, ObjectiveError> {
    if predicted.shape() != truth.shape() {
        return Err(ObjectiveError::SizeMismatch { op: "face_feature_mse", lhs: predicted.len(), rhs: truth.len() });
    }
    let rows = predicted.rows();
    if rows == 0 {
        return Err(ObjectiveError::EmptySet("face_feature_mse"));
    }
    let sq: f64 = predicted.values().iter().zip(truth.values()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sq / rows as f64)
}

/// Piecewise smooth-L1 penalty for one scalar pair.
pub fn smooth_l1(x: f64, y: f64, threshold: f64) -> f64 {
    let e = (x - y).abs();
    if e < threshold {
        0.5 * e * e / threshold
    } else {
        e - 0.5 * threshold
    }
}

/// Smooth-L1 and MSE, each averaged over all `3 x batch` scalars, and their sum.
pub fn regression_loss(
    predicted: &[AbutmentParams],
    truth: &[AbutmentParams],
    cfg: &LossConfig,
) -> Result<RegressionLosses, ObjectiveError> {
    if predicted.len() != truth.len() {
        return Err(ObjectiveError::SizeMismatch { op: "regression_loss", lhs: predicted.len(), rhs: truth.len() });
    }
    if predicted.is_empty() {
        return Err(ObjectiveError::EmptySet("regression_loss"));
    }
    let mut l1 = 0.0;
    let mut mse = 0.0;
    for (p, t) in predicted.iter().zip(truth) {
        for (x, y) in p.to_array().iter().zip(t.to_array()) {
            l1 += smooth_l1(*x, y, cfg.smooth_l1_threshold);
            mse += (x - y) * (x - y);
        }
    }
    let n = (3 * predicted.len()) as f64;
    let (l_l1, l_mse_reg) = (l1 / n, mse / n);
    Ok(RegressionLosses { l_l1, l_mse_reg, l_rg: l_l1 + l_mse_reg })
}

/// Combines the parts into a full breakdown.
pub fn total_loss(l_cd: f64, l_mse_face: f64, reg: RegressionLosses, cfg: &LossConfig) -> LossBreakdown {
    let l_re = l_cd + cfg.face_weight * l_mse_face;
    LossBreakdown {
        l_cd,
        l_mse_face,
        l_re,
        l_l1: reg.l_l1,
        l_mse_reg: reg.l_mse_reg,
        l_rg: reg.l_rg,
        l_total: cfg.recon_weight * l_re + reg.l_rg,
    }
}

/// IoU of the unit intervals `[pv, pv + 1]` and `[gt, gt + 1]`.
pub fn interval_iou(pv: f64, gt: f64) -> f64 {
    let d = (pv - gt).abs();
    if !d.is_finite() || d >= 1.0 {
        0.0
    } else {
        (1.0 - d) / (1.0 + d)
    }
}

/// Per-parameter mean interval IoU, scaled by 100.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub transgingival: f64,
    pub diameter: f64,
    pub height: f64,
    pub count: usize,
}

impl IouReport {
    pub fn mean(&self) -> f64 {
        (self.transgingival + self.diameter + self.height) / 3.0
    }

    pub fn min(&self) -> f64 {
        self.transgingival.min(self.diameter).min(self.height)
    }
}

pub fn mean_iou_percent(predicted: &[AbutmentParams], truth: &[AbutmentParams]) -> Result<IouReport, ObjectiveError> {
    if predicted.len() != truth.len() {
        return Err(ObjectiveError::SizeMismatch { op: "mean_iou_percent", lhs: predicted.len(), rhs: truth.len() });
    }
    if predicted.is_empty() {
        return Ok(IouReport::default());
    }
    let mut acc = [0.0; 3];
    for (p, t) in predicted.iter().zip(truth) {
        let (p, t) = (p.to_array(), t.to_array());
        for k in 0..3 {
            acc[k] += interval_iou(p[k], t[k]);
        }
    }
    let n = predicted.len() as f64;
    Ok(IouReport {
        transgingival: 100.0 * acc[0] / n,
        diameter: 100.0 * acc[1] / n,
        height: 100.0 * acc[2] / n,
        count: predicted.len(),
    })
}
