use nalgebra::Vector3;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::AttentionMap;
use crate::error::{Error, Result};
use crate::geom::{angular_radius, patch_ray, point_to_ray_distance, CameraModel, Pose, Ray};
use crate::grouping::PatchGrid;
use crate::matching::losses::{bce_with_logits, sigmoid};

/// Band thresholds; angles in degrees, distances in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GalConfig {
    pub theta_low: f64,
    pub theta_up: f64,
    pub d_low: f64,
    pub d_up: f64,
    /// Supervise every head's logits instead of their average.
    pub per_head: bool,
}

impl Default for GalConfig {
    fn default() -> Self {
        Self {
            theta_low: 10.0,
            theta_up: 20.0,
            d_low: 3.0,
            d_up: 5.0,
            per_head: false,
        }
    }
}

impl GalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_low > 0.0 && self.theta_low <= self.theta_up) {
            return Err(Error::Config("need 0 < theta_low <= theta_up".into()));
        }
        if !(self.d_low > 0.0 && self.d_low <= self.d_up) {
            return Err(Error::Config("need 0 < d_low <= d_up".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaskLabel {
    Positive,
    Negative,
    Unsupervised,
}

impl MaskLabel {
    pub fn from_band(value: f64, low: f64, up: f64) -> Self {
        if value < low {
            MaskLabel::Positive
        } else if value > up {
            MaskLabel::Negative
        } else {
            MaskLabel::Unsupervised
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMask {
    pub labels: Array2<MaskLabel>,
}

impl TriMask {
    pub fn count(&self, label: MaskLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Supervision masks for the cross-attention maps.
///
/// I2P `(patch, group)`: angle between the patch ray and the direction to
/// the group center. P2I `(group, patch)`: distance from the group center
/// to the patch ray's line. A center at the camera center has no defined
/// angle and is left unsupervised.
pub fn gal_masks(
    cam: &CameraModel,
    pose: &Pose,
    grid: &PatchGrid,
    centers: &[Vector3<f64>],
    cfg: &GalConfig,
) -> Result<(TriMask, TriMask)> {
    cfg.validate()?;
    let rays: Vec<Ray> = (0..grid.len())
        .map(|i| {
            let (r, c) = grid.row_col(i);
            patch_ray(cam, pose, r as i64, c as i64, grid.patch_size)
        })
        .collect::<Result<_>>()?;
    let (tl, tu) = (cfg.theta_low.to_radians(), cfg.theta_up.to_radians());
    let mut i2p = Array2::from_elem((grid.len(), centers.len()), MaskLabel::Unsupervised);
    let mut p2i = Array2::from_elem((centers.len(), grid.len()), MaskLabel::Unsupervised);
    for (i, ray) in rays.iter().enumerate() {
        for (j, c) in centers.iter().enumerate() {
            if let Ok(rad) = angular_radius(ray, c) {
                i2p[(i, j)] = MaskLabel::from_band(rad, tl, tu);
            }
            p2i[(j, i)] = MaskLabel::from_band(point_to_ray_distance(ray, c), cfg.d_low, cfg.d_up);
        }
    }
    Ok((TriMask { labels: i2p }, TriMask { labels: p2i }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalLoss {
    pub loss: f64,
    pub grad_i2p: Array2<f64>,
    pub grad_p2i: Array2<f64>,
}

fn bce_sum(logits: &Array2<f64>, mask: &TriMask) -> Result<(f64, Array2<f64>)> {
    if logits.dim() != mask.labels.dim() {
        return Err(Error::ShapeMismatch(format!(
            "logits {:?} vs mask {:?}",
            logits.dim(),
            mask.labels.dim()
        )));
    }
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    for ((idx, &x), &l) in logits.indexed_iter().zip(mask.labels.iter()) {
        let y = match l {
            MaskLabel::Positive => 1.0,
            MaskLabel::Negative => 0.0,
            MaskLabel::Unsupervised => continue,
        };
        loss += bce_with_logits(x, y);
        grad[idx] = sigmoid(x) - y;
    }
    Ok((loss, grad))
}

/// Summed BCE over supervised entries of both maps, with gradients wrt the logits.
pub fn gal_loss(i2p: &AttentionMap, p2i: &AttentionMap, mask_i2p: &TriMask, mask_p2i: &TriMask) -> Result<GalLoss> {
    let (a, grad_i2p) = bce_sum(&i2p.logits, mask_i2p)?;
    let (b, grad_p2i) = bce_sum(&p2i.logits, mask_p2i)?;
    Ok(GalLoss {
        loss: a + b,
        grad_i2p,
        grad_p2i,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::Direction;

    fn map(v: Array2<f64>, d: Direction) -> AttentionMap {
        AttentionMap { logits: v, direction: d }
    }

    fn cam() -> CameraModel {
        CameraModel::new(64.0, 64.0, 64.0, 32.0, 128, 64).unwrap()
    }

    #[test]
    fn on_ray_center_is_positive() {
        let grid = PatchGrid::new(128, 64, 16).unwrap();
        let pose = Pose::identity();
        let ray = patch_ray(&cam(), &pose, 1, 3, 16).unwrap();
        let on_ray = ray.origin + ray.direction() * 20.0;
        let (i2p, p2i) = gal_masks(&cam(), &pose, &grid, &[on_ray], &GalConfig::default()).unwrap();
        let p = grid.linear(1, 3);
        assert_eq!(i2p.labels[(p, 0)], MaskLabel::Positive);
        assert_eq!(p2i.labels[(0, p)], MaskLabel::Positive);
    }

    #[test]
    fn band_is_unsupervised() {
        assert_eq!(MaskLabel::from_band(15.0, 10.0, 20.0), MaskLabel::Unsupervised);
        assert_eq!(MaskLabel::from_band(20.0, 10.0, 20.0), MaskLabel::Unsupervised);
        assert_eq!(MaskLabel::from_band(9.99, 10.0, 20.0), MaskLabel::Positive);
        assert_eq!(MaskLabel::from_band(20.01, 10.0, 20.0), MaskLabel::Negative);
    }

    #[test]
    fn all_unsupervised_gives_zero() {
        let m = TriMask {
            labels: Array2::from_elem((3, 4), MaskLabel::Unsupervised),
        };
        let mt = TriMask {
            labels: Array2::from_elem((4, 3), MaskLabel::Unsupervised),
        };
        let out = gal_loss(
            &map(Array2::from_elem((3, 4), 2.0), Direction::I2P),
            &map(Array2::from_elem((4, 3), -1.0), Direction::P2I),
            &m,
            &mt,
        )
        .unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_i2p.iter().chain(out.grad_p2i.iter()).all(|&g| g == 0.0));
    }

    #[test]
    fn single_positive_at_zero() {
        let m = TriMask {
            labels: Array2::from_elem((1, 1), MaskLabel::Positive),
        };
        let e = TriMask {
            labels: Array2::from_elem((1, 0), MaskLabel::Positive),
        };
        let out = gal_loss(
            &map(Array2::zeros((1, 1)), Direction::I2P),
            &map(Array2::zeros((1, 0)), Direction::P2I),
            &m,
            &e,
        )
        .unwrap();
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(out.grad_i2p[(0, 0)], -0.5);
    }

    #[test]
    fn large_logits_stay_finite() {
        let m = TriMask {
            labels: ndarray::array![[MaskLabel::Positive, MaskLabel::Negative]],
        };
        let e = TriMask {
            labels: Array2::from_elem((0, 0), MaskLabel::Positive),
        };
        let out = gal_loss(
            &map(ndarray::array![[-100.0, 100.0]], Direction::I2P),
            &map(Array2::zeros((0, 0)), Direction::P2I),
            &m,
            &e,
        )
        .unwrap();
        assert!((out.loss - 200.0).abs() < 1e-9);
    }

    #[test]
    fn empty_group_set() {
        let grid = PatchGrid::new(128, 64, 16).unwrap();
        let (a, b) = gal_masks(&cam(), &Pose::identity(), &grid, &[], &GalConfig::default()).unwrap();
        assert_eq!(a.labels.dim(), (32, 0));
        assert_eq!(b.labels.dim(), (0, 32));
    }
}
