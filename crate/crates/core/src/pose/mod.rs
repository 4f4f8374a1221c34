//! Pose estimation from 2D-3D correspondences and registration metrics.

pub mod epnp;
mod focal;
mod metrics;
mod ransac;

pub use epnp::{epnp, mean_reprojection_error, reprojection_error, PointPixel};
pub use focal::{refine_focal, FocalRefinement};
pub use metrics::{euler_xyz, registration_errors, registration_recall, summarize, median, MetricSummary};
pub use ransac::epnp_ransac;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Pose;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Inlier threshold on reprojection error, pixels.
    pub reprojection_threshold: f64,
    pub min_inliers: usize,
    pub seed: u64,
    pub refine_focal: bool,
    /// Early-exit confidence; 1.0 runs all iterations.
    pub confidence: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            reprojection_threshold: 4.0,
            min_inliers: 6,
            seed: 0,
            refine_focal: false,
            confidence: 0.9999,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        if !(self.reprojection_threshold > 0.0) {
            return Err(Error::Config("reprojection_threshold must be positive".into()));
        }
        if self.min_inliers < 4 {
            return Err(Error::Config("min_inliers must be >= 4".into()));
        }
        if !(self.confidence > 0.0 && self.confidence <= 1.0) {
            return Err(Error::Config("confidence must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Success thresholds: rotation in degrees, translation in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub tau_r: f64,
    pub tau_t: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { tau_r: 10.0, tau_t: 5.0 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_r > 0.0 && self.tau_t > 0.0) {
            return Err(Error::Config("tau_r and tau_t must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of registering one image.
///
/// `solved` is false when RANSAC found fewer than `min_inliers` inliers; the
/// pose is then the identity. `rre`/`rte` are filled by [`RegistrationResult::evaluate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub image_id: u64,
    pub pose: Pose,
    pub inlier_ids: Vec<usize>,
    pub solved: bool,
    pub rre: f64,
    pub rte: f64,
    pub success: bool,
    /// Focal scale applied by refinement (1.0 if none).
    pub focal_scale: f64,
}

impl RegistrationResult {
    pub fn failed(image_id: u64) -> Self {
        Self {
            image_id,
            pose: Pose::identity(),
            inlier_ids: Vec::new(),
            solved: false,
            rre: f64::NAN,
            rte: f64::NAN,
            success: false,
            focal_scale: 1.0,
        }
    }

    /// Fills the errors against ground truth and sets `success`.
    pub fn evaluate(&mut self, gt: &Pose, cfg: &EvalConfig) {
        let (rre, rte) = registration_errors(&self.pose, gt);
        self.rre = rre;
        self.rte = rte;
        self.success = rre < cfg.tau_r && rte < cfg.tau_t;
    }
}
