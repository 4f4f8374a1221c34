//! Training losses with analytic gradients.

use nalgebra::Vector2;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{LossConfig, SimilarityMap};
use crate::error::{Error, Result};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `label`, in the
/// `max(x,0) - x*y + log(1 + e^-|x|)` form.
pub(crate) fn bce_with_logits(logit: f64, label: f64) -> f64 {
    logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionLoss {
    pub loss: f64,
    /// d loss / d logit.
    pub grad: Vec<f64>,
}

/// Mean binary cross-entropy of in-frustum logits.
pub fn detection_loss(logits: &[f64], labels: &[bool]) -> Result<DetectionLoss> {
    if logits.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logits vs {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if logits.is_empty() {
        return Ok(DetectionLoss {
            loss: 0.0,
            grad: Vec::new(),
        });
    }
    let n = logits.len() as f64;
    let y = |b: bool| if b { 1.0 } else { 0.0 };
    let loss = logits
        .iter()
        .zip(labels)
        .map(|(&x, &l)| bce_with_logits(x, y(l)))
        .sum::<f64>()
        / n;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(&x, &l)| (sigmoid(x) - y(l)) / n)
        .collect();
    Ok(DetectionLoss { loss, grad })
}

/// How the negative weighting of the contrastive loss is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IclMode {
    /// `α_n = γ·max(0, s_n − m_n)`, exponent `α_n(s_n − m_n)`.
    #[default]
    Literal,
    /// Negative optimum at `−m_n`: `α_n = γ·max(0, s_n + m_n)`, exponent `α_n(s_n − m_n)`.
    Circle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IclLoss {
    pub loss: f64,
    pub grad_pos: Vec<f64>,
    pub grad_neg: Vec<f64>,
}

/// Contrastive loss over positive and negative cosine similarities.
///
/// `L = log(1 + Σ_j exp(α_p(1 − s_p + m_p)) · Σ_k exp(α_n(s_n − m_n)))`
/// with `α_p = γ·max(0, 1 + m_p − s_p)`. The `α` weights are treated as
/// constants in the gradient.
pub fn icl_loss(s_pos: &[f64], s_neg: &[f64], cfg: &LossConfig) -> IclLoss {
    let zero = IclLoss {
        loss: 0.0,
        grad_pos: vec![0.0; s_pos.len()],
        grad_neg: vec![0.0; s_neg.len()],
    };
    if s_pos.is_empty() || s_neg.is_empty() {
        return zero;
    }
    let (alpha_p, alpha_n) = icl_weights(s_pos, s_neg, cfg);
    icl_loss_with_weights(s_pos, s_neg, &alpha_p, &alpha_n, cfg)
}

/// [`icl_loss`] with caller-fixed weights; the loss is then smooth in the
/// similarities and its gradient is exact.
pub fn icl_loss_with_weights(s_pos: &[f64], s_neg: &[f64], alpha_p: &[f64], alpha_n: &[f64], cfg: &LossConfig) -> IclLoss {
    if s_pos.is_empty() || s_neg.is_empty() {
        return IclLoss {
            loss: 0.0,
            grad_pos: vec![0.0; s_pos.len()],
            grad_neg: vec![0.0; s_neg.len()],
        };
    }
    let a: Vec<f64> = s_pos
        .iter()
        .zip(alpha_p)
        .map(|(&s, &al)| al * (1.0 - s + cfg.m_p))
        .collect();
    let b: Vec<f64> = s_neg
        .iter()
        .zip(alpha_n)
        .map(|(&s, &al)| al * (s - cfg.m_n))
        .collect();
    let (lse_a, lse_b) = (log_sum_exp(&a), log_sum_exp(&b));
    let z = lse_a + lse_b;
    let outer = sigmoid(z);
    let grad_pos = a
        .iter()
        .zip(alpha_p)
        .map(|(&ai, &al)| -outer * (ai - lse_a).exp() * al)
        .collect();
    let grad_neg = b
        .iter()
        .zip(alpha_n)
        .map(|(&bi, &al)| outer * (bi - lse_b).exp() * al)
        .collect();
    IclLoss {
        loss: softplus(z),
        grad_pos,
        grad_neg,
    }
}

/// Adaptive weights `(α_p, α_n)` for the given similarities.
pub fn icl_weights(s_pos: &[f64], s_neg: &[f64], cfg: &LossConfig) -> (Vec<f64>, Vec<f64>) {
    let ap = s_pos
        .iter()
        .map(|&s| cfg.gamma * (1.0 + cfg.m_p - s).max(0.0))
        .collect();
    let an = s_neg
        .iter()
        .map(|&s| match cfg.icl_mode {
            IclMode::Literal => cfg.gamma * (s - cfg.m_n).max(0.0),
            IclMode::Circle => cfg.gamma * (s + cfg.m_n).max(0.0),
        })
        .collect();
    (ap, an)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtaLoss {
    pub loss: f64,
    pub grad: Vec<Vector2<f64>>,
}

/// Sum of Euclidean distances between predicted and target positions.
pub fn dta_loss(pred: &[Vector2<f64>], target: &[Vector2<f64>]) -> Result<DtaLoss> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            let n = d.norm();
            loss += n;
            if n > 0.0 {
                d / n
            } else {
                Vector2::zeros()
            }
        })
        .collect();
    Ok(DtaLoss { loss, grad })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineLosses {
    /// Cross-entropy term, averaged over samples.
    pub loss_s: f64,
    /// Distance term, summed over samples.
    pub loss_d: f64,
    /// d loss_s / d map values, one array per map.
    pub grad_maps: Vec<Array2<f64>>,
    /// d loss_d / d predicted position.
    pub grad_pred: Vec<Vector2<f64>>,
}

/// Fine-level losses. `targets` and `preds` are expressed in each map's
/// coordinate frame (the frame [`super::soft_argmax`] returns); the
/// cross-entropy target cell is the cell nearest to the target.
pub fn fine_losses(maps: &[SimilarityMap], targets: &[Vector2<f64>], preds: &[Vector2<f64>]) -> Result<FineLosses> {
    if maps.len() != targets.len() || maps.len() != preds.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} maps, {} targets, {} predictions",
            maps.len(),
            targets.len(),
            preds.len()
        )));
    }
    let kappa = maps.len().max(1) as f64;
    let mut loss_s = 0.0;
    let mut grad_maps = Vec::with_capacity(maps.len());
    for (map, t) in maps.iter().zip(targets) {
        let (rows, cols) = map.values.dim();
        let local = t - map.origin;
        let (tr, tc) = (local.y.round() as i64, local.x.round() as i64);
        if tr < 0 || tc < 0 || tr >= rows as i64 || tc >= cols as i64 {
            return Err(Error::TargetOutsideWindow {
                row: tr,
                col: tc,
                w: rows.max(cols),
            });
        }
        let max = map.max();
        let mut p = map.values.mapv(|v| (v - max).exp());
        let z = p.sum();
        p /= z;
        let target = (tr as usize, tc as usize);
        loss_s -= map.values[target] - max - z.ln();
        p[target] -= 1.0;
        p /= kappa;
        grad_maps.push(p);
    }
    loss_s /= kappa;
    let dta = dta_loss(preds, targets)?;
    Ok(FineLosses {
        loss_s,
        loss_d: dta.loss,
        grad_maps,
        grad_pred: dta.grad,
    })
}

/// Individual loss terms of the joint objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub att: f64,
    pub det: f64,
    pub coarse_s: f64,
    pub coarse_d: f64,
    pub fine_s: f64,
    pub fine_d: f64,
}

pub fn total_loss(parts: &LossParts, cfg: &LossConfig) -> f64 {
    cfg.lambda_att * parts.att
        + cfg.lambda_det * parts.det
        + cfg.lambda_coarse * (parts.coarse_s + parts.coarse_d)
        + cfg.lambda_fine * (parts.fine_s + parts.fine_d)
}
