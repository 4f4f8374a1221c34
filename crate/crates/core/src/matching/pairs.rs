use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CorrespondenceSet;
use crate::error::{Error, Result};
use crate::geom::{in_frustum, CameraModel, Pose};
use crate::grouping::{patch_of_pixel, GroupSet, PatchGrid};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpointFilter {
    /// Groups with score strictly above the threshold.
    pub kept: Vec<usize>,
    /// Geometric in-frustum label of each group center (detection targets).
    pub labels: Vec<bool>,
}

/// Thresholds per-group in-frustum probabilities and derives the geometric
/// labels used to supervise them.
pub fn superpoint_filter(
    scores: &[f64],
    threshold: f64,
    groups: &GroupSet,
    cam: &CameraModel,
    pose: &Pose,
) -> Result<SuperpointFilter> {
    if scores.len() != groups.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores for {} groups",
            scores.len(),
            groups.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::invalid(format!("score {s} outside [0, 1]")));
    }
    let kept = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > threshold)
        .map(|(i, _)| i)
        .collect();
    let labels = groups.centers.iter().map(|c| in_frustum(cam, pose, c)).collect();
    Ok(SuperpointFilter { kept, labels })
}

/// Patches farther than `r` (Chebyshev, grid units) from `patch`.
pub fn negative_candidates(patch: usize, grid: &PatchGrid, r: usize) -> Vec<usize> {
    (0..grid.len()).filter(|&q| grid.chebyshev(patch, q) > r).collect()
}

/// Sampled supervision pairs. Every list is aligned with `positives`
/// except where no candidate exists, in which case the entry is skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrainingPairs {
    /// (group, patch) with the group center projecting into the patch.
    pub positives: Vec<(usize, usize)>,
    /// (group, patch) cross-modal negatives.
    pub point_image: Vec<(usize, usize)>,
    /// (patch, patch) intra-image negatives.
    pub image_image: Vec<(usize, usize)>,
    /// (group, group) intra-cloud negatives.
    pub point_point: Vec<(usize, usize)>,
}

/// Samples `kappa` positives from `gt` (with replacement when `gt` has fewer
/// pairs) and one negative of each kind per positive.
pub fn sample_training_pairs(
    gt: &CorrespondenceSet,
    grid: &PatchGrid,
    kappa: usize,
    safe_radius_r: usize,
    seed: u64,
) -> Result<TrainingPairs> {
    if gt.is_empty() {
        return Err(Error::invalid("no ground-truth correspondences to sample from"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt_patches: Vec<(usize, usize)> = gt
        .pairs
        .iter()
        .map(|c| patch_of_pixel(grid, &c.pixel).map(|(r, col)| (c.group, grid.linear(r, col))))
        .collect::<Result<_>>()?;

    let chosen: Vec<usize> = if kappa <= gt_patches.len() {
        let mut idx: Vec<usize> = (0..gt_patches.len()).collect();
        for i in 0..kappa {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
        }
        idx.truncate(kappa);
        idx
    } else {
        (0..kappa).map(|_| rng.random_range(0..gt_patches.len())).collect()
    };

    let mut out = TrainingPairs::default();
    for i in chosen {
        let (g, p) = gt_patches[i];
        out.positives.push((g, p));
        let cands = negative_candidates(p, grid, safe_radius_r);
        if !cands.is_empty() {
            out.point_image.push((g, cands[rng.random_range(0..cands.len())]));
            out.image_image.push((p, cands[rng.random_range(0..cands.len())]));
        }
        let far: Vec<usize> = gt_patches
            .iter()
            .filter(|&&(_, q)| grid.chebyshev(p, q) > safe_radius_r)
            .map(|&(h, _)| h)
            .collect();
        if !far.is_empty() {
            out.point_point.push((g, far[rng.random_range(0..far.len())]));
        }
    }
    Ok(out)
}
