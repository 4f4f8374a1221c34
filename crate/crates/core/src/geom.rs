//! Rigid transforms, pinhole projection and the ray quantities used by the
//! attention supervision.
//!
//! Conventions:
//! - [`Pose`] maps world to camera coordinates: `x_cam = R * x_world + t`.
//! - Camera frame is x right, y down, z forward.
//! - Integer pixel coordinates address pixel centers. Patch `(row, col)` of
//!   size `s` covers pixels `[row*s, row*s + s)` and its center pixel is
//!   `((col + 0.5) * s - 0.5, (row + 0.5) * s - 0.5)`.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rigid world-to-camera transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub const ORTHONORMAL_TOL: f64 = 1e-9;

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, rejecting rotations that are not in SO(3).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        if !pose.is_valid(Self::ORTHONORMAL_TOL) {
            return Err(Error::invalid("rotation is not orthonormal with det +1"));
        }
        Ok(pose)
    }

    pub fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::new(axis_angle).matrix(),
            translation,
        }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        let ortho = (r * r.transpose() - Matrix3::identity()).amax();
        ortho <= tol
            && (r.determinant() - 1.0).abs() <= tol
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// Camera pose for a camera at `center` looking along `yaw` (about world
    /// +z, from +x) pitched down by `pitch` (both radians). World z is up.
    pub fn looking(center: Vector3<f64>, yaw: f64, pitch: f64) -> Self {
        let forward = Vector3::new(pitch.cos() * yaw.cos(), pitch.cos() * yaw.sin(), -pitch.sin());
        let right = Vector3::new(yaw.sin(), -yaw.cos(), 0.0);
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self {
            rotation,
            translation: -(rotation * center),
        }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Projects the rotation back onto SO(3) (nearest rotation via quaternion).
    pub fn orthonormalized(&self) -> Pose {
        let rot = Rotation3::from_matrix_eps(&self.rotation, 1e-15, 100, Rotation3::identity());
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        Pose {
            rotation: *q.to_rotation_matrix().matrix(),
            translation: self.translation,
        }
    }

    /// Row-major 9 floats.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    pub fn from_row_major(rot: &[f64; 9], t: &[f64; 3]) -> Self {
        Self {
            rotation: Matrix3::from_row_slice(rot),
            translation: Vector3::new(t[0], t[1], t[2]),
        }
    }
}

/// Pinhole intrinsics plus image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Square-pixel camera with the principal point at the image center and
    /// the given horizontal field of view.
    pub fn from_hfov(hfov_deg: f64, width: u32, height: u32) -> Result<Self> {
        if !(hfov_deg > 0.0 && hfov_deg < 180.0) {
            return Err(Error::invalid(format!("horizontal FOV {hfov_deg} outside (0, 180)")));
        }
        let mut f = width as f64 / 2.0 / (hfov_deg.to_radians() / 2.0).tan();
        // tan(45 deg) is not exact in floating point.
        if (f - f.round()).abs() < 1e-9 * f {
            f = f.round();
        }
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Resizes the image to `width x height`, scaling all intrinsics.
    pub fn resized(&self, width: u32, height: u32) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }

    pub fn with_focal_scale(&self, scale: f64) -> Self {
        Self {
            fx: self.fx * scale,
            fy: self.fy * scale,
            ..*self
        }
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.x < self.width as f64 && px.y >= 0.0 && px.y < self.height as f64
    }

    /// Pinhole projection of a camera-frame point, without visibility checks.
    pub fn project_camera_frame(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Unit bearing through `pixel` in camera coordinates.
    pub fn bearing(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0).normalize()
    }
}

/// Outcome of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Visible(Vector2<f64>),
    BehindCamera,
    OutOfBounds(Vector2<f64>),
}

impl Projection {
    pub fn pixel(&self) -> Option<Vector2<f64>> {
        match self {
            Projection::Visible(px) => Some(*px),
            _ => None,
        }
    }
}

pub fn project(cam: &CameraModel, pose: &Pose, point_world: &Vector3<f64>) -> Projection {
    let pc = pose.transform(point_world);
    if pc.z <= 0.0 {
        return Projection::BehindCamera;
    }
    let px = cam.project_camera_frame(&pc);
    if cam.contains(&px) {
        Projection::Visible(px)
    } else {
        Projection::OutOfBounds(px)
    }
}

pub fn in_frustum(cam: &CameraModel, pose: &Pose, point_world: &Vector3<f64>) -> bool {
    matches!(project(cam, pose, point_world), Projection::Visible(_))
}

/// World point at camera-frame depth `depth` behind `pixel`.
pub fn unproject(cam: &CameraModel, pose: &Pose, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
    let pc = Vector3::new(
        (pixel.x - cam.cx) / cam.fx * depth,
        (pixel.y - cam.cy) / cam.fy * depth,
        depth,
    );
    pose.rotation.transpose() * (pc - pose.translation)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    direction: Vector3<f64>,
}

impl Ray {
    /// Normalizes `direction`; fails on a zero vector.
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::invalid("ray direction must be non-zero"));
        }
        Ok(Self {
            origin,
            direction: direction / n,
        })
    }

    pub fn direction(&self) -> &Vector3<f64> {
        &self.direction
    }
}

/// Center pixel of a patch under the pixel-center convention.
pub fn patch_center_pixel(row: usize, col: usize, patch_size: u32) -> Vector2<f64> {
    let s = patch_size as f64;
    Vector2::new((col as f64 + 0.5) * s - 0.5, (row as f64 + 0.5) * s - 0.5)
}

/// World-frame ray from the camera center through the center of patch
/// `(row, col)`.
pub fn patch_ray(cam: &CameraModel, pose: &Pose, row: i64, col: i64, patch_size: u32) -> Result<Ray> {
    if patch_size == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    let rows = (cam.height / patch_size) as usize;
    let cols = (cam.width / patch_size) as usize;
    if row < 0 || col < 0 || row as usize >= rows || col as usize >= cols {
        return Err(Error::PatchOutOfGrid { row, col, rows, cols });
    }
    let px = patch_center_pixel(row as usize, col as usize, patch_size);
    let dir_cam = cam.bearing(&px);
    Ray::new(pose.center(), pose.rotation.transpose() * dir_cam)
}

/// Angle in radians between the ray direction and `point - origin`, in `[0, π]`.
pub fn angular_radius(ray: &Ray, point: &Vector3<f64>) -> Result<f64> {
    let v = point - ray.origin;
    let n = v.norm();
    if n == 0.0 {
        return Err(Error::PointAtOrigin);
    }
    let cos = (ray.direction.dot(&v) / n).clamp(-1.0, 1.0);
    Ok(cos.acos())
}

/// Distance from `point` to the infinite line carrying the ray.
pub fn point_to_ray_distance(ray: &Ray, point: &Vector3<f64>) -> f64 {
    ray.direction.cross(&(point - ray.origin)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn hd_cam() -> CameraModel {
        CameraModel::new(960.0, 960.0, 960.0, 540.0, 1920, 1080).unwrap()
    }

    #[test]
    fn projects_optical_axis_to_principal_point() {
        let px = project(&hd_cam(), &Pose::identity(), &Vector3::new(0.0, 0.0, 10.0));
        assert_eq!(px, Projection::Visible(Vector2::new(960.0, 540.0)));
    }

    #[test]
    fn behind_camera_has_no_pixel() {
        let px = project(&hd_cam(), &Pose::identity(), &Vector3::new(0.0, 0.0, -1.0));
        assert_eq!(px, Projection::BehindCamera);
        assert!(!in_frustum(&hd_cam(), &Pose::identity(), &Vector3::new(0.0, 0.0, -1.0)));
    }

    #[test]
    fn off_axis_projection() {
        let px = project(&hd_cam(), &Pose::identity(), &Vector3::new(5.0, 0.0, 10.0));
        assert_eq!(px.pixel(), Some(Vector2::new(1440.0, 540.0)));
        assert!(in_frustum(&hd_cam(), &Pose::identity(), &Vector3::new(5.0, 0.0, 10.0)));
        assert!(in_frustum(&hd_cam(), &Pose::identity(), &Vector3::new(0.0, 0.0, 10.0)));
    }

    #[test]
    fn out_of_bounds_reason() {
        let px = project(&hd_cam(), &Pose::identity(), &Vector3::new(20.0, 0.0, 10.0));
        assert!(matches!(px, Projection::OutOfBounds(_)));
    }

    #[test]
    fn hfov_90_gives_focal_960() {
        let cam = CameraModel::from_hfov(90.0, 1920, 1080).unwrap();
        assert_abs_diff_eq!(cam.fx, 960.0, epsilon = 1e-9);
        assert_abs_diff_eq!(cam.cx, 960.0);
    }

    #[test]
    fn center_patch_ray_is_optical_axis() {
        // 48x48 image, s=16: center patch (1,1) has center pixel (23.5, 23.5).
        let cam = CameraModel::new(40.0, 40.0, 23.5, 23.5, 48, 48).unwrap();
        let ray = patch_ray(&cam, &Pose::identity(), 1, 1, 16).unwrap();
        assert_abs_diff_eq!(*ray.direction(), Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn patch_ray_origin_is_camera_center() {
        let pose = Pose::from_axis_angle(Vector3::new(0.1, -0.4, 0.7), Vector3::new(1.0, 2.0, -3.0));
        let ray = patch_ray(&hd_cam(), &pose, 3, 5, 16).unwrap();
        let expected = -(pose.rotation.transpose() * pose.translation);
        assert_abs_diff_eq!(ray.origin, expected, epsilon = 1e-12);
    }

    #[test]
    fn corner_patch_ray_direction() {
        let ray = patch_ray(&hd_cam(), &Pose::identity(), 0, 0, 16).unwrap();
        let expected = Vector3::new(7.5 - 960.0, 7.5 - 540.0, 960.0).normalize();
        assert_abs_diff_eq!(*ray.direction(), expected, epsilon = 1e-15);
    }

    #[test]
    fn patch_ray_rejects_out_of_grid() {
        assert!(patch_ray(&hd_cam(), &Pose::identity(), 0, 120, 16).is_err());
        assert!(patch_ray(&hd_cam(), &Pose::identity(), -1, 0, 16).is_err());
        assert!(patch_ray(&hd_cam(), &Pose::identity(), 66, 0, 16).is_ok());
        assert!(patch_ray(&hd_cam(), &Pose::identity(), 67, 0, 16).is_err());
    }

    #[test]
    fn angular_radius_cases() {
        let ray = Ray::new(Vector3::new(1.0, 1.0, 1.0), Vector3::new(0.0, 0.0, 2.0)).unwrap();
        let o = ray.origin;
        assert_abs_diff_eq!(angular_radius(&ray, &(o + Vector3::new(0.0, 0.0, 5.0))).unwrap(), 0.0);
        assert_abs_diff_eq!(
            angular_radius(&ray, &(o + Vector3::new(0.0, 3.0, 0.0))).unwrap(),
            std::f64::consts::FRAC_PI_2
        );
        assert_abs_diff_eq!(
            angular_radius(&ray, &(o + Vector3::new(1.0, 0.0, 1.0))).unwrap(),
            0.7853981633974483,
            epsilon = 1e-15
        );
        assert!(matches!(angular_radius(&ray, &o), Err(Error::PointAtOrigin)));
    }

    #[test]
    fn point_to_ray_distance_cases() {
        let ray = Ray::new(Vector3::zeros(), Vector3::z()).unwrap();
        assert_eq!(point_to_ray_distance(&ray, &Vector3::new(0.0, 0.0, 4.0)), 0.0);
        assert_abs_diff_eq!(point_to_ray_distance(&ray, &Vector3::new(3.0, 0.0, 7.0)), 3.0);
        assert_abs_diff_eq!(point_to_ray_distance(&ray, &Vector3::new(3.0, 4.0, 10.0)), 5.0);
    }

    #[test]
    fn inverse_composes_to_identity() {
        let p = Pose::from_axis_angle(Vector3::new(0.3, 0.2, -1.1), Vector3::new(4.0, -2.0, 9.0));
        let id = p.inverse().compose(&p);
        assert!((id.rotation - Matrix3::identity()).amax() < 1e-9);
        assert!(id.translation.amax() < 1e-9);
        assert!(p.is_valid(1e-9));
    }

    #[test]
    fn looking_pose_is_valid_and_centered() {
        let c = Vector3::new(3.0, -6.0, 7.5);
        let pose = Pose::looking(c, 0.7, 30f64.to_radians());
        assert!(pose.is_valid(1e-12));
        assert_abs_diff_eq!(pose.center(), c, epsilon = 1e-12);
        // A point straight ahead along the pitched view direction is on the optical axis.
        let fwd = Vector3::new(0.7f64.cos(), 0.7f64.sin(), 0.0) * 30f64.to_radians().cos()
            - Vector3::z() * 30f64.to_radians().sin();
        let pc = pose.transform(&(c + 10.0 * fwd));
        assert_abs_diff_eq!(pc, Vector3::new(0.0, 0.0, 10.0), epsilon = 1e-12);
        // World up appears as negative camera y.
        let up = pose.rotation * Vector3::z();
        assert!(up.y < 0.0);
    }

    #[test]
    fn new_rejects_non_rotation() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = -1.0;
        assert!(Pose::new(m, Vector3::zeros()).is_err());
    }
}
