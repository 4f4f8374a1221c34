use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::epnp::{epnp, reprojection_error, PointPixel};
use super::focal::refine_focal;
use super::{RansacConfig, RegistrationResult};
use crate::error::{Error, Result};
use crate::geom::{CameraModel, Pose};

const BATCH: usize = 64;
const MAX_REFITS: usize = 20;

#[derive(Debug, Clone)]
struct Hypothesis {
    iteration: usize,
    inliers: usize,
    error: f64,
    pose: Pose,
}

impl Hypothesis {
    fn better_than(&self, other: &Hypothesis) -> bool {
        (self.inliers, other.error, other.iteration) > (other.inliers, self.error, self.iteration)
    }
}

fn score(pose: &Pose, cam: &CameraModel, pairs: &[PointPixel], threshold: f64) -> (usize, f64) {
    let mut n = 0;
    let mut err = 0.0;
    for p in pairs {
        let e = reprojection_error(pose, cam, p);
        if e < threshold {
            n += 1;
            err += e;
        }
    }
    (n, err)
}

fn inliers_of(pose: &Pose, cam: &CameraModel, pairs: &[PointPixel], threshold: f64) -> Vec<usize> {
    (0..pairs.len())
        .filter(|&i| reprojection_error(pose, cam, &pairs[i]) < threshold)
        .collect()
}

fn hypothesis(iteration: usize, pairs: &[PointPixel], cam: &CameraModel, cfg: &RansacConfig) -> Option<Hypothesis> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(iteration as u64);
    let idx = sample(&mut rng, pairs.len(), 4);
    let minimal: Vec<PointPixel> = idx.iter().map(|i| pairs[i]).collect();
    let pose = epnp(&minimal, cam).ok()?;
    let (inliers, error) = score(&pose, cam, pairs, cfg.reprojection_threshold);
    Some(Hypothesis {
        iteration,
        inliers,
        error,
        pose,
    })
}

fn required_iterations(inlier_ratio: f64, confidence: f64, max: usize) -> usize {
    if confidence >= 1.0 {
        return max;
    }
    let w4 = inlier_ratio.powi(4);
    if w4 <= 0.0 {
        return max;
    }
    if w4 >= 1.0 {
        return 1;
    }
    let n = (1.0 - confidence).ln() / (1.0 - w4).ln();
    if n.is_finite() {
        (n.ceil() as usize).clamp(1, max)
    } else {
        max
    }
}

/// Robust pose from noisy correspondences.
///
/// Each iteration draws 4 pairs from its own RNG stream (`seed`, stream =
/// iteration index), so results do not depend on the thread count.
/// Iterations run in batches; after each batch the best hypothesis so far
/// fixes the adaptive iteration budget. The winner is refit on its inliers
/// until the inlier set stops changing.
pub fn epnp_ransac(pairs: &[PointPixel], cam: &CameraModel, cfg: &RansacConfig) -> Result<RegistrationResult> {
    cfg.validate()?;
    if pairs.len() < 4 {
        return Err(Error::invalid(format!("RANSAC needs at least 4 correspondences, got {}", pairs.len())));
    }
    let mut best: Option<Hypothesis> = None;
    let mut budget = cfg.max_iterations;
    let mut done = 0;
    while done < budget {
        let end = (done + BATCH).min(budget);
        let batch: Vec<Option<Hypothesis>> = (done..end)
            .into_par_iter()
            .map(|it| hypothesis(it, pairs, cam, cfg))
            .collect();
        for h in batch.into_iter().flatten() {
            if best.as_ref().map_or(true, |b| h.better_than(b)) {
                best = Some(h);
            }
        }
        done = end;
        if let Some(b) = &best {
            let ratio = b.inliers as f64 / pairs.len() as f64;
            budget = required_iterations(ratio, cfg.confidence, cfg.max_iterations);
        }
    }

    let Some(best) = best else {
        return Ok(RegistrationResult::failed(0));
    };
    let mut pose = best.pose;
    let mut inliers = inliers_of(&pose, cam, pairs, cfg.reprojection_threshold);
    for _ in 0..MAX_REFITS {
        if inliers.len() < 4 {
            break;
        }
        let subset: Vec<PointPixel> = inliers.iter().map(|&i| pairs[i]).collect();
        let Ok(refit) = epnp(&subset, cam) else {
            break;
        };
        let next = inliers_of(&refit, cam, pairs, cfg.reprojection_threshold);
        if next.len() < inliers.len() {
            break;
        }
        let stable = next == inliers;
        pose = refit;
        inliers = next;
        if stable {
            break;
        }
    }
    if inliers.len() < cfg.min_inliers {
        let mut r = RegistrationResult::failed(0);
        r.inlier_ids = inliers;
        return Ok(r);
    }
    let mut focal_scale = 1.0;
    if cfg.refine_focal {
        let subset: Vec<PointPixel> = inliers.iter().map(|&i| pairs[i]).collect();
        let r = refine_focal(&subset, cam, &pose);
        if r.refined {
            pose = r.pose;
            focal_scale = r.scale;
        }
    }
    Ok(RegistrationResult {
        image_id: 0,
        pose,
        inlier_ids: inliers,
        solved: true,
        rre: f64::NAN,
        rte: f64::NAN,
        success: false,
        focal_scale,
    })
}
