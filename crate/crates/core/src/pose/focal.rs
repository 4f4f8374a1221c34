use super::epnp::{epnp, mean_reprojection_error, PointPixel};
use crate::geom::{CameraModel, Pose};

const SCALE_MIN: f64 = 0.5;
const SCALE_MAX: f64 = 2.0;
const SCALE_TOL: f64 = 1e-6;
const MIN_PAIRS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct FocalRefinement {
    pub camera: CameraModel,
    pub pose: Pose,
    /// Applied focal scale; 1.0 when unchanged.
    pub scale: f64,
    /// False when inputs were returned unchanged.
    pub refined: bool,
}

/// Golden-section search over a shared focal scale in `[0.5, 2]`, re-solving
/// the pose at every candidate and minimizing mean reprojection error.
/// Needs at least 6 pairs; returns the inputs unchanged when it cannot improve.
pub fn refine_focal(pairs: &[PointPixel], cam: &CameraModel, pose: &Pose) -> FocalRefinement {
    let unchanged = FocalRefinement {
        camera: *cam,
        pose: *pose,
        scale: 1.0,
        refined: false,
    };
    if pairs.len() < MIN_PAIRS {
        return unchanged;
    }
    let cost = |s: f64| -> (f64, Option<Pose>) {
        let c = cam.with_focal_scale(s);
        match epnp(pairs, &c) {
            Ok(p) => (mean_reprojection_error(&p, &c, pairs), Some(p)),
            Err(_) => (f64::INFINITY, None),
        }
    };
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (SCALE_MIN, SCALE_MAX);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = cost(x1).0;
    let mut f2 = cost(x2).0;
    while b - a > SCALE_TOL {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = cost(x1).0;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = cost(x2).0;
        }
    }
    let s = (a + b) / 2.0;
    let (best, best_pose) = cost(s);
    let base = mean_reprojection_error(pose, cam, pairs);
    match best_pose {
        Some(p) if best < base => FocalRefinement {
            camera: cam.with_focal_scale(s),
            pose: p,
            scale: s,
            refined: true,
        },
        _ => unchanged,
    }
}
