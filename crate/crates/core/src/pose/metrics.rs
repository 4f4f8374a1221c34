use serde::{Deserialize, Serialize};

use super::{EvalConfig, RegistrationResult};
use crate::error::{Error, Result};
use crate::geom::Pose;
use nalgebra::Matrix3;

const GIMBAL_TOL: f64 = 1e-6;

/// Intrinsic XYZ Euler angles `(a, b, c)` in radians with `R = Rx(a) Ry(b) Rz(c)`.
/// At gimbal lock (`|b| = 90°`) `c` is fixed to 0.
pub fn euler_xyz(r: &Matrix3<f64>) -> [f64; 3] {
    let b = r[(0, 2)].clamp(-1.0, 1.0).asin();
    if (b.abs() - std::f64::consts::FRAC_PI_2).abs() < GIMBAL_TOL {
        return [r[(2, 1)].atan2(r[(1, 1)]), b, 0.0];
    }
    let a = (-r[(1, 2)]).atan2(r[(2, 2)]);
    let c = (-r[(0, 1)]).atan2(r[(0, 0)]);
    [a, b, c]
}

/// `(RRE degrees, RTE meters)`: the sum of absolute Euler angles of
/// `R_gt^T R_pred`, and the distance between the two translations.
pub fn registration_errors(pred: &Pose, gt: &Pose) -> (f64, f64) {
    // Identical rotations give exactly zero instead of round-off residue.
    let rre = if pred.rotation == gt.rotation {
        0.0
    } else {
        let rel = gt.rotation.transpose() * pred.rotation;
        euler_xyz(&rel).iter().map(|a| a.abs().to_degrees()).sum()
    };
    let rte = (gt.translation - pred.translation).norm();
    (rre, rte)
}

/// Fraction of results with `rre < tau_r` and `rte < tau_t`.
pub fn registration_recall(results: &[RegistrationResult], cfg: &EvalConfig) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::invalid("registration recall of an empty result list"));
    }
    let ok = results.iter().filter(|r| r.rre < cfg.tau_r && r.rte < cfg.tau_t).count();
    Ok(ok as f64 / results.len() as f64)
}

/// Median with the mean of the two middle values for even counts; NaN sorts last.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Aggregate over a result list. Both median and mean are reported; the
/// caller labels which one it quotes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub images: usize,
    pub solved: usize,
    pub recall: f64,
    pub median_rre: f64,
    pub mean_rre: f64,
    pub median_rte: f64,
    pub mean_rte: f64,
}

pub fn summarize(results: &[RegistrationResult], cfg: &EvalConfig) -> Result<MetricSummary> {
    let recall = registration_recall(results, cfg)?;
    let rre: Vec<f64> = results.iter().map(|r| r.rre).collect();
    let rte: Vec<f64> = results.iter().map(|r| r.rte).collect();
    Ok(MetricSummary {
        images: results.len(),
        solved: results.iter().filter(|r| r.solved).count(),
        recall,
        median_rre: median(&rre),
        mean_rre: mean(&rre),
        median_rte: median(&rte),
        mean_rte: mean(&rte),
    })
}
