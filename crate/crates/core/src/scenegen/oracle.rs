//! Oracle feature provider standing in for trained backbones.
//!
//! Coarse: every group gets a random unit descriptor; the patch containing
//! the projection of an in-frustum group center carries that descriptor
//! (summed over all groups landing in the patch) plus Gaussian noise, then
//! re-normalized. All other patches get independent random unit vectors.
//!
//! Fine: the fine descriptor of each visible center point is written into
//! the four fine cells bilinearly surrounding its projection, with the
//! cosine of each cell chosen as `1 + τ·ln(w)` for bilinear weight `w`, so
//! that a softmax at temperature `τ` over the window reproduces the bilinear
//! weights and the soft-argmax lands on the sub-pixel projection.

use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{project, CameraModel, Pose};
use crate::grouping::{patch_of_pixel, GroupSet, PatchGrid};
use crate::matching::{pixel_to_fine, Correspondence, CorrespondenceSet, FeatureSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub coarse_channels: usize,
    pub fine_channels: usize,
    /// Scale of the Gaussian perturbation; the noise vector has expected norm `noise_sigma`.
    pub noise_sigma: f64,
    /// Fraction of visible groups whose descriptor is replaced by an unrelated one.
    pub outlier_rate: f64,
    /// Softmax temperature the fine descriptors are tuned for.
    pub fine_temperature: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            coarse_channels: 256,
            fine_channels: 64,
            noise_sigma: 0.0,
            outlier_rate: 0.0,
            fine_temperature: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleOutput {
    pub features: FeatureSet,
    /// One entry per visible group, at the exact projection of its center.
    pub ground_truth: CorrespondenceSet,
    /// In-frustum label per group.
    pub in_frustum: Vec<bool>,
    /// Visible groups whose point descriptor was corrupted.
    pub outlier_groups: Vec<usize>,
}

const MIN_BILINEAR_WEIGHT: f64 = 1e-6;

fn random_unit(rng: &mut ChaCha8Rng, mut out: ArrayViewMut1<f64>) {
    loop {
        out.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let n = out.dot(&out).sqrt();
        if n > 1e-12 {
            out /= n;
            return;
        }
    }
}

fn normalize(mut v: ArrayViewMut1<f64>) {
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        v /= n;
    }
}

fn add_noise(rng: &mut ChaCha8Rng, mut v: ArrayViewMut1<f64>, sigma: f64) {
    if sigma > 0.0 {
        let scale = sigma / (v.len() as f64).sqrt();
        v.iter_mut().for_each(|x| *x += scale * rng.sample::<f64, _>(StandardNormal));
    }
}

/// Random unit vector orthogonal to unit `dir`.
fn orthogonal_unit(rng: &mut ChaCha8Rng, dir: ArrayView1<f64>) -> Array1<f64> {
    let mut v = Array1::zeros(dir.len());
    loop {
        random_unit(rng, v.view_mut());
        let d = v.dot(&dir);
        v.scaled_add(-d, &dir);
        let n = v.dot(&v).sqrt();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Synthesizes oracle features for one image of a scene.
///
/// `cloud` is the cloud the `groups` were sampled from; `camera` must match
/// `grid` in size.
pub fn synthesize_oracle_features(
    cloud: &PointCloud,
    groups: &GroupSet,
    camera: &CameraModel,
    pose: &Pose,
    grid: &PatchGrid,
    cfg: &OracleConfig,
    seed: u64,
) -> Result<OracleOutput> {
    if grid.width() != camera.width || grid.height() != camera.height {
        return Err(Error::ShapeMismatch(format!(
            "patch grid {}x{} does not match camera {}x{}",
            grid.width(),
            grid.height(),
            camera.width,
            camera.height
        )));
    }
    if camera.width % 2 != 0 || camera.height % 2 != 0 {
        return Err(Error::invalid("image size must be even for the half-resolution fine map"));
    }
    if !(cfg.fine_temperature > 0.0) || cfg.coarse_channels == 0 || cfg.fine_channels == 0 {
        return Err(Error::invalid("invalid oracle configuration"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, cf) = (cfg.coarse_channels, cfg.fine_channels);
    let m = groups.len();

    let mut visible = Vec::new();
    let mut in_frustum = vec![false; m];
    for (g, center) in groups.centers.iter().enumerate() {
        if let Some(px) = project(camera, pose, center).pixel() {
            in_frustum[g] = true;
            visible.push((g, px));
        }
    }
    if visible.is_empty() {
        return Err(Error::NoVisibleGroups);
    }

    // Coarse.
    let mut coarse_points = Array2::zeros((m, c));
    for mut row in coarse_points.rows_mut() {
        random_unit(&mut rng, row.view_mut());
    }
    let mut coarse_image = Array2::<f64>::zeros((grid.len(), c));
    let mut occupied = vec![false; grid.len()];
    let mut gt_pairs = Vec::with_capacity(visible.len());
    for &(g, px) in &visible {
        let (r, col) = patch_of_pixel(grid, &px)?;
        let p = grid.linear(r, col);
        occupied[p] = true;
        coarse_image.row_mut(p).scaled_add(1.0, &coarse_points.row(g));
        gt_pairs.push(Correspondence {
            group: g,
            point_index: groups.center_indices[g],
            point: groups.centers[g],
            pixel: px,
            confidence: 1.0,
        });
    }
    for (p, mut row) in coarse_image.rows_mut().into_iter().enumerate() {
        if occupied[p] {
            add_noise(&mut rng, row.view_mut(), cfg.noise_sigma);
            normalize(row);
        } else {
            random_unit(&mut rng, row);
        }
    }

    // Fine.
    let (fr, fc) = ((camera.height / 2) as usize, (camera.width / 2) as usize);
    let mut fine_points = Array2::zeros((cloud.len(), cf));
    for row in fine_points.rows_mut() {
        random_unit(&mut rng, row);
    }
    let mut fine_image = Array2::<f64>::zeros((fr * fc, cf));
    let mut written = vec![false; fr * fc];
    for &(g, px) in &visible {
        let e = fine_points.row(groups.center_indices[g]).to_owned();
        let q = pixel_to_fine(&px);
        let (x0, y0) = (q.x.floor(), q.y.floor());
        let (ax, ay) = (q.x - x0, q.y - y0);
        for (dy, wy) in [(0i64, 1.0 - ay), (1, ay)] {
            for (dx, wx) in [(0i64, 1.0 - ax), (1, ax)] {
                let (cy, cx) = (y0 as i64 + dy, x0 as i64 + dx);
                if cy < 0 || cx < 0 || cy >= fr as i64 || cx >= fc as i64 {
                    continue;
                }
                let w = (wx * wy).max(MIN_BILINEAR_WEIGHT);
                let a = 1.0 + cfg.fine_temperature * w.ln();
                let cell = cy as usize * fc + cx as usize;
                written[cell] = true;
                fine_image.row_mut(cell).scaled_add(a.max(-1.0), &e);
            }
        }
    }
    for (cell, mut row) in fine_image.rows_mut().into_iter().enumerate() {
        if !written[cell] {
            random_unit(&mut rng, row);
            continue;
        }
        // Fill up to unit norm with a direction orthogonal to the written content.
        let n2 = row.dot(&row);
        if n2 < 1.0 && n2 > 0.0 {
            let dir = row.to_owned() / n2.sqrt();
            let ortho = orthogonal_unit(&mut rng, dir.view());
            row.scaled_add((1.0 - n2).sqrt(), &ortho);
        }
        add_noise(&mut rng, row.view_mut(), cfg.noise_sigma);
        normalize(row);
    }

    // Descriptor outliers: visible groups whose point descriptors no longer match.
    let mut outlier_groups = Vec::new();
    if cfg.outlier_rate > 0.0 {
        let k = (cfg.outlier_rate * visible.len() as f64).round() as usize;
        let mut order: Vec<usize> = visible.iter().map(|&(g, _)| g).collect();
        for i in 0..k.min(order.len()) {
            let j = rng.random_range(i..order.len());
            order.swap(i, j);
        }
        outlier_groups = order[..k.min(order.len())].to_vec();
        outlier_groups.sort_unstable();
        for &g in &outlier_groups {
            random_unit(&mut rng, coarse_points.row_mut(g));
            random_unit(&mut rng, fine_points.row_mut(groups.center_indices[g]));
        }
    }

    Ok(OracleOutput {
        features: FeatureSet {
            coarse_image,
            coarse_points,
            fine_image,
            fine_rows: fr,
            fine_cols: fc,
            fine_points,
        },
        ground_truth: CorrespondenceSet { pairs: gt_pairs },
        in_frustum,
        outlier_groups,
    })
}
