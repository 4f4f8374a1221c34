//! Central finite-difference checks of the analytic loss gradients.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector2;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attention::{gal_loss, AttentionMap, Direction, MaskLabel, TriMask};
use crate::error::{Error, Result};
use crate::matching::{
    detection_loss, dta_loss, fine_losses, icl_loss_with_weights, icl_weights, soft_argmax, soft_argmax_backward,
    IclMode, LossConfig, SimilarityMap,
};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Gal,
    Det,
    Icl,
    Dta,
    Fine,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [LossKind::Gal, LossKind::Det, LossKind::Icl, LossKind::Dta, LossKind::Fine];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Gal => "gal",
            LossKind::Det => "det",
            LossKind::Icl => "icl",
            LossKind::Dta => "dta",
            LossKind::Fine => "fine",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown loss '{s}' (gal, det, icl, dta, fine)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub step: f64,
    /// Negate the analytic gradient; the check must then fail.
    pub inject_sign_flip: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 0,
            tolerance: DEFAULT_TOLERANCE,
            step: FD_STEP,
            inject_sign_flip: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub loss: LossKind,
    pub trial: usize,
    pub dim: usize,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub rel_error: f64,
    pub pass: bool,
}

/// `‖a − n‖ / max(‖a‖, ‖n‖, 1e-8)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    diff / norm(analytic).max(norm(numeric)).max(1e-8)
}

/// Central differences of `f` at `x`.
pub fn numeric_gradient(x: &[f64], step: f64, f: &dyn Fn(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut xp = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        xp[i] = x[i] + step;
        let hi = f(&xp)?;
        xp[i] = x[i] - step;
        let lo = f(&xp)?;
        xp[i] = x[i];
        g.push((hi - lo) / (2.0 * step));
    }
    Ok(g)
}

/// A scalar loss over a flat parameter vector with its analytic gradient.
struct Problem {
    x: Vec<f64>,
    eval: Box<dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)>>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normals(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * normal(rng)).collect()
}

fn random_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> TriMask {
    let labels = Array2::from_shape_fn((rows, cols), |_| match rng.random_range(0..3) {
        0 => MaskLabel::Positive,
        1 => MaskLabel::Negative,
        _ => MaskLabel::Unsupervised,
    });
    TriMask { labels }
}

fn gal_problem(rng: &mut ChaCha8Rng) -> Problem {
    let (p, g) = (rng.random_range(2..12), rng.random_range(2..10));
    let (mi, mp) = (random_mask(rng, p, g), random_mask(rng, g, p));
    let x = normals(rng, 2 * p * g, 3.0);
    Problem {
        x,
        eval: Box::new(move |x| {
            let a = AttentionMap {
                logits: Array2::from_shape_vec((p, g), x[..p * g].to_vec()).expect("shape"),
                direction: Direction::I2P,
            };
            let b = AttentionMap {
                logits: Array2::from_shape_vec((g, p), x[p * g..].to_vec()).expect("shape"),
                direction: Direction::P2I,
            };
            let out = gal_loss(&a, &b, &mi, &mp)?;
            let grad = out.grad_i2p.iter().chain(out.grad_p2i.iter()).copied().collect();
            Ok((out.loss, grad))
        }),
    }
}

fn det_problem(rng: &mut ChaCha8Rng) -> Problem {
    let n = rng.random_range(1..40);
    let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    Problem {
        x: normals(rng, n, 3.0),
        eval: Box::new(move |x| {
            let out = detection_loss(x, &labels)?;
            Ok((out.loss, out.grad))
        }),
    }
}

/// Weights are computed once at the sample point and held fixed.
fn icl_problem(rng: &mut ChaCha8Rng, trial: usize) -> Problem {
    let cfg = LossConfig {
        icl_mode: if trial % 2 == 0 { IclMode::Literal } else { IclMode::Circle },
        m_n: if trial % 4 < 2 { LossConfig::default().m_n } else { rng.random_range(-0.5..0.5) },
        ..LossConfig::default()
    };
    let (np, nn) = (rng.random_range(1..8), rng.random_range(1..24));
    let x: Vec<f64> = (0..np + nn).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (ap, an) = icl_weights(&x[..np], &x[np..], &cfg);
    Problem {
        x,
        eval: Box::new(move |x| {
            let out = icl_loss_with_weights(&x[..np], &x[np..], &ap, &an, &cfg);
            Ok((out.loss, out.grad_pos.into_iter().chain(out.grad_neg).collect()))
        }),
    }
}

fn random_maps(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(1..5), rng.random_range(2..9), rng.random_range(2..9))
}

fn maps_from(x: &[f64], k: usize, rows: usize, cols: usize, origins: &[Vector2<f64>]) -> Vec<SimilarityMap> {
    (0..k)
        .map(|i| {
            let v = x[i * rows * cols..(i + 1) * rows * cols].to_vec();
            SimilarityMap::with_origin(Array2::from_shape_vec((rows, cols), v).expect("shape"), origins[i])
        })
        .collect()
}

/// Soft-argmax positions of full maps against continuous targets.
fn dta_problem(rng: &mut ChaCha8Rng) -> Problem {
    let (k, rows, cols) = random_maps(rng);
    let temp = rng.random_range(0.5..2.0);
    let origins: Vec<Vector2<f64>> = (0..k).map(|_| Vector2::new(normal(rng), normal(rng))).collect();
    let targets: Vec<Vector2<f64>> = origins
        .iter()
        .map(|o| o + Vector2::new(rng.random_range(0.0..cols as f64), rng.random_range(0.0..rows as f64)))
        .collect();
    Problem {
        x: normals(rng, k * rows * cols, 1.0),
        eval: Box::new(move |x| {
            let maps = maps_from(x, k, rows, cols, &origins);
            let preds: Vec<Vector2<f64>> = maps.iter().map(|m| soft_argmax(m, temp)).collect::<Result<_>>()?;
            let out = dta_loss(&preds, &targets)?;
            let mut grad = Vec::with_capacity(x.len());
            for (m, g) in maps.iter().zip(&out.grad) {
                grad.extend(soft_argmax_backward(m, temp, g)?.iter().copied());
            }
            Ok((out.loss, grad))
        }),
    }
}

/// Cross-entropy on the target cell plus distance of the soft-argmax.
fn fine_problem(rng: &mut ChaCha8Rng) -> Problem {
    let (k, rows, cols) = random_maps(rng);
    let temp = rng.random_range(0.5..2.0);
    let origins: Vec<Vector2<f64>> = (0..k).map(|_| Vector2::new(normal(rng), normal(rng))).collect();
    let targets: Vec<Vector2<f64>> = origins
        .iter()
        .map(|o| {
            o + Vector2::new(
                rng.random_range(0.0..(cols - 1) as f64),
                rng.random_range(0.0..(rows - 1) as f64),
            )
        })
        .collect();
    Problem {
        x: normals(rng, k * rows * cols, 1.0),
        eval: Box::new(move |x| {
            let maps = maps_from(x, k, rows, cols, &origins);
            let preds: Vec<Vector2<f64>> = maps.iter().map(|m| soft_argmax(m, temp)).collect::<Result<_>>()?;
            let out = fine_losses(&maps, &targets, &preds)?;
            let mut grad = Vec::with_capacity(x.len());
            for ((m, gm), gp) in maps.iter().zip(&out.grad_maps).zip(&out.grad_pred) {
                let back = soft_argmax_backward(m, temp, gp)?;
                grad.extend(gm.iter().zip(back.iter()).map(|(a, b)| a + b));
            }
            Ok((out.loss_s + out.loss_d, grad))
        }),
    }
}

fn problem(kind: LossKind, rng: &mut ChaCha8Rng, trial: usize) -> Problem {
    match kind {
        LossKind::Gal => gal_problem(rng),
        LossKind::Det => det_problem(rng),
        LossKind::Icl => icl_problem(rng, trial),
        LossKind::Dta => dta_problem(rng),
        LossKind::Fine => fine_problem(rng),
    }
}

/// Runs `cfg.trials` random checks of one loss.
pub fn check_loss(kind: LossKind, cfg: &GradcheckConfig) -> Result<Vec<TrialResult>> {
    if cfg.trials == 0 || !(cfg.step > 0.0) || !(cfg.tolerance > 0.0) {
        return Err(Error::InvalidArgument("need trials >= 1, step > 0, tolerance > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(kind as u64);
    (0..cfg.trials)
        .map(|trial| {
            let p = problem(kind, &mut rng, trial);
            let (_, mut analytic) = (p.eval)(&p.x)?;
            if cfg.inject_sign_flip {
                analytic.iter_mut().for_each(|g| *g = -*g);
            }
            let numeric = numeric_gradient(&p.x, cfg.step, &|x| Ok((p.eval)(x)?.0))?;
            let rel = relative_error(&analytic, &numeric);
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            Ok(TrialResult {
                loss: kind,
                trial,
                dim: p.x.len(),
                analytic_norm: norm(&analytic),
                numeric_norm: norm(&numeric),
                rel_error: rel,
                pass: rel <= cfg.tolerance,
            })
        })
        .collect()
}
