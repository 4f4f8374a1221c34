//! Procedural intersection scenes and the camera sampling protocol.
//!
//! The world content is parametric geometry (ground with raised sidewalks,
//! box buildings, poles, trees, parked cars) sampled directly on surfaces,
//! cropped to the capture region and voxel-downsampled. Cameras follow a
//! position grid × heights × downward pitches × evenly spaced yaws.

mod oracle;
mod voxel;

pub use oracle::{synthesize_oracle_features, OracleConfig, OracleOutput};
pub use voxel::{
    associate_images, candidate_boxes, partition_voxels, visible_fraction, voxel_downsample, VoxelPartition,
};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{CameraModel, Pose};

/// Non-empty set of finite 3D points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Result<PointCloud> {
        PointCloud::new(indices.iter().map(|&i| self.points[i]).collect())
    }
}

/// Axis-aligned box with half-open membership `[min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] < self.max[k])
    }

    pub fn expanded(&self, margin: f64) -> Aabb {
        let m = Vector3::repeat(margin);
        Aabb::new(self.min - m, self.max + m)
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }
}

/// A posed virtual camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub id: usize,
    pub camera: CameraModel,
    pub pose: Pose,
}

/// Camera sampling protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSamplingSpec {
    /// xy offsets from the region center, meters.
    pub grid_positions: Vec<[f64; 2]>,
    /// Camera heights above ground, meters.
    pub heights: Vec<f64>,
    /// Downward pitch angles, degrees.
    pub pitches_deg: Vec<f64>,
    pub yaw_count: usize,
    pub fov_deg: f64,
    pub image_size: (u32, u32),
}

/// Evaluation split presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    /// Test positions and heights with unseen pitch angles.
    Hard,
}

pub const CAPTURE_WIDTH: u32 = 1920;
pub const CAPTURE_HEIGHT: u32 = 1080;
pub const CAPTURE_HFOV_DEG: f64 = 90.0;

fn square_grid(n: usize, spacing: f64) -> Vec<[f64; 2]> {
    let half = (n as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            out.push([(ix as f64 - half) * spacing, (iy as f64 - half) * spacing]);
        }
    }
    out
}

impl PoseSamplingSpec {
    pub fn for_split(split: Split) -> Self {
        let (grid, heights, pitches) = match split {
            Split::Train => (square_grid(4, 6.0), vec![6.0, 7.0, 8.0], vec![15.0, 30.0]),
            Split::Test => (square_grid(3, 6.0), vec![6.5, 7.5], vec![15.0, 30.0]),
            Split::Hard => (square_grid(3, 6.0), vec![6.5, 7.5], vec![20.0, 25.0]),
        };
        Self {
            grid_positions: grid,
            heights,
            pitches_deg: pitches,
            yaw_count: 8,
            fov_deg: CAPTURE_HFOV_DEG,
            image_size: (CAPTURE_WIDTH, CAPTURE_HEIGHT),
        }
    }

    /// Replaces the xy grid with the first `positions / heights` points of
    /// a square 6 m grid, so that there are `positions` camera positions.
    pub fn with_position_count(mut self, positions: usize) -> Result<Self> {
        let h = self.heights.len();
        if positions == 0 || h == 0 || positions % h != 0 {
            return Err(Error::invalid(format!(
                "{positions} positions is not a positive multiple of {h} heights"
            )));
        }
        let xy = positions / h;
        let side = (xy as f64).sqrt().ceil() as usize;
        self.grid_positions = square_grid(side, 6.0).into_iter().take(xy).collect();
        Ok(self)
    }

    /// Number of camera positions (xy grid × heights).
    pub fn position_count(&self) -> usize {
        self.grid_positions.len() * self.heights.len()
    }

    pub fn image_count(&self) -> usize {
        self.position_count() * self.pitches_deg.len() * self.yaw_count
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_positions.is_empty() || self.heights.is_empty() {
            return Err(Error::invalid("pose sampling needs at least one position"));
        }
        if self.pitches_deg.is_empty() {
            return Err(Error::invalid("pose sampling needs at least one pitch"));
        }
        if self.yaw_count == 0 {
            return Err(Error::invalid("yaw_count must be >= 1"));
        }
        if self.heights.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::invalid("heights must be positive"));
        }
        if self.pitches_deg.iter().any(|&p| !(p > 0.0 && p < 90.0)) {
            return Err(Error::invalid("pitches must lie in (0, 90) degrees"));
        }
        Ok(())
    }

    pub fn yaw_deg(&self, k: usize) -> f64 {
        k as f64 * 360.0 / self.yaw_count as f64
    }

    /// Cameras in order position → height → pitch → yaw.
    pub fn cameras(&self, region_center_xy: [f64; 2]) -> Result<Vec<CameraRecord>> {
        self.validate()?;
        let camera = CameraModel::from_hfov(self.fov_deg, self.image_size.0, self.image_size.1)?;
        let mut out = Vec::with_capacity(self.image_count());
        for xy in &self.grid_positions {
            for &h in &self.heights {
                let center = Vector3::new(region_center_xy[0] + xy[0], region_center_xy[1] + xy[1], h);
                for &pitch in &self.pitches_deg {
                    for k in 0..self.yaw_count {
                        let pose = Pose::looking(center, self.yaw_deg(k).to_radians(), pitch.to_radians());
                        out.push(CameraRecord {
                            id: out.len(),
                            camera,
                            pose,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Scene content and capture parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub region: Aabb,
    pub sampling: PoseSamplingSpec,
    /// Half width of the two crossing roads, meters.
    pub road_half_width: f64,
    pub sidewalk_height: f64,
    /// Surface samples per square meter before downsampling.
    pub ground_density: f64,
    pub facade_density: f64,
    pub buildings_per_quadrant: usize,
    pub poles: usize,
    pub trees: usize,
    pub cars: usize,
    pub downsample_resolution: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self::for_split(Split::Test)
    }
}

impl SceneParams {
    pub fn for_split(split: Split) -> Self {
        Self {
            region: Aabb::new(Vector3::new(-50.0, -50.0, -5.0), Vector3::new(50.0, 50.0, 45.0)),
            sampling: PoseSamplingSpec::for_split(split),
            road_half_width: 12.0,
            sidewalk_height: 0.15,
            ground_density: 3.0,
            facade_density: 1.5,
            buildings_per_quadrant: 3,
            poles: 16,
            trees: 12,
            cars: 10,
            downsample_resolution: 0.2,
        }
    }
}

/// Generated cloud plus its posed cameras.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub cloud: PointCloud,
    pub cameras: Vec<CameraRecord>,
    pub region: Aabb,
}

impl SceneBundle {
    pub fn region_center_xy(&self) -> [f64; 2] {
        let c = (self.region.min + self.region.max) / 2.0;
        [c.x, c.y]
    }
}

struct Sampler {
    rng: ChaCha8Rng,
    points: Vec<Vector3<f64>>,
}

impl Sampler {
    fn count(&mut self, area: f64, density: f64) -> usize {
        let expected = area * density;
        let base = expected.floor();
        base as usize + usize::from(self.rng.random::<f64>() < expected - base)
    }

    /// Uniform samples on the parallelogram `origin + a*u + b*v`, `a, b ∈ [0, 1)`.
    fn patch(&mut self, origin: Vector3<f64>, u: Vector3<f64>, v: Vector3<f64>, density: f64) {
        let n = self.count(u.cross(&v).norm(), density);
        for _ in 0..n {
            let (a, b): (f64, f64) = (self.rng.random(), self.rng.random());
            self.points.push(origin + a * u + b * v);
        }
    }

    fn cuboid(&mut self, min: Vector3<f64>, size: Vector3<f64>, density: f64, with_top: bool) {
        let (ex, ey, ez) = (Vector3::x() * size.x, Vector3::y() * size.y, Vector3::z() * size.z);
        self.patch(min, ex, ez, density);
        self.patch(min + ey, ex, ez, density);
        self.patch(min, ey, ez, density);
        self.patch(min + ex, ey, ez, density);
        if with_top {
            self.patch(min + ez, ex, ey, density);
        }
    }

    fn cylinder(&mut self, base: Vector3<f64>, radius: f64, height: f64, density: f64) {
        let n = self.count(std::f64::consts::TAU * radius * height, density);
        for _ in 0..n {
            let a = self.rng.random::<f64>() * std::f64::consts::TAU;
            let z = self.rng.random::<f64>() * height;
            self.points.push(base + Vector3::new(radius * a.cos(), radius * a.sin(), z));
        }
    }

    fn sphere(&mut self, center: Vector3<f64>, radius: f64, density: f64) {
        let n = self.count(4.0 * std::f64::consts::PI * radius * radius, density);
        for _ in 0..n {
            let z: f64 = self.rng.random_range(-1.0..1.0);
            let a = self.rng.random::<f64>() * std::f64::consts::TAU;
            let r = (1.0 - z * z).sqrt();
            self.points.push(center + radius * Vector3::new(r * a.cos(), r * a.sin(), z));
        }
    }
}

/// Deterministic procedural intersection for `seed`.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<SceneBundle> {
    params.sampling.validate()?;
    if !(params.downsample_resolution > 0.0) {
        return Err(Error::invalid("downsample resolution must be positive"));
    }
    let region = params.region;
    let center = (region.min + region.max) / 2.0;
    let (x0, x1, y0, y1) = (region.min.x, region.max.x, region.min.y, region.max.y);
    let road = params.road_half_width;
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(seed),
        points: Vec::new(),
    };

    // Ground: the road cross at z=0, sidewalk blocks raised by the curb height.
    let (cx, cy) = (center.x, center.y);
    let rho = params.ground_density;
    s.patch(Vector3::new(cx - road, y0, 0.0), Vector3::x() * 2.0 * road, Vector3::y() * (y1 - y0), rho);
    s.patch(Vector3::new(x0, cy - road, 0.0), Vector3::x() * (cx - road - x0), Vector3::y() * 2.0 * road, rho);
    s.patch(Vector3::new(cx + road, cy - road, 0.0), Vector3::x() * (x1 - cx - road), Vector3::y() * 2.0 * road, rho);
    let quadrants = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)];
    let qw = (x1 - x0) / 2.0 - road;
    let qh = (y1 - y0) / 2.0 - road;
    for &(sx, sy) in &quadrants {
        let qx = if sx < 0.0 { x0 } else { cx + road };
        let qy = if sy < 0.0 { y0 } else { cy + road };
        s.patch(Vector3::new(qx, qy, params.sidewalk_height), Vector3::x() * qw, Vector3::y() * qh, rho);
    }

    // Buildings set back from the road edge within each quadrant.
    for &(sx, sy) in &quadrants {
        for _ in 0..params.buildings_per_quadrant {
            let w = s.rng.random_range(8.0..18.0);
            let d = s.rng.random_range(8.0..18.0);
            let h = s.rng.random_range(6.0..40.0);
            let off_x = s.rng.random_range(4.0..(qw - w).max(4.5));
            let off_y = s.rng.random_range(4.0..(qh - d).max(4.5));
            let bx = if sx < 0.0 { cx - road - off_x - w } else { cx + road + off_x };
            let by = if sy < 0.0 { cy - road - off_y - d } else { cy + road + off_y };
            s.cuboid(Vector3::new(bx, by, params.sidewalk_height), Vector3::new(w, d, h), params.facade_density, true);
        }
    }

    // Poles along the curbs, with a short mast arm.
    for _ in 0..params.poles {
        let along = s.rng.random_range(-45.0..45.0);
        let side = if s.rng.random::<bool>() { 1.0 } else { -1.0 };
        let base = if s.rng.random::<bool>() {
            Vector3::new(cx + side * (road + 0.8), cy + along, params.sidewalk_height)
        } else {
            Vector3::new(cx + along, cy + side * (road + 0.8), params.sidewalk_height)
        };
        let h = s.rng.random_range(5.0..9.0);
        s.cylinder(base, 0.15, h, 60.0);
        let arm = Vector3::new(-side * 3.0, 0.0, 0.0);
        s.patch(base + Vector3::new(0.0, -0.1, h - 0.2), arm, Vector3::new(0.0, 0.2, 0.0), 60.0);
    }

    // Trees on the sidewalks.
    for _ in 0..params.trees {
        let (sx, sy) = quadrants[s.rng.random_range(0..4)];
        let base = Vector3::new(
            cx + sx * (road + s.rng.random_range(1.5..3.5)),
            cy + sy * s.rng.random_range(road + 1.5..45.0),
            params.sidewalk_height,
        );
        let trunk = s.rng.random_range(2.0..4.0);
        let crown = s.rng.random_range(1.5..3.0);
        s.cylinder(base, 0.2, trunk, 20.0);
        s.sphere(base + Vector3::new(0.0, 0.0, trunk + crown * 0.8), crown, 4.0);
    }

    // Parked cars along the road edges.
    for _ in 0..params.cars {
        let along = s.rng.random_range(-45.0..40.0);
        let lane = road - 2.5;
        let min = if s.rng.random::<bool>() {
            Vector3::new(cx + lane * if s.rng.random::<bool>() { 1.0 } else { -1.0 } - 0.9, cy + along, 0.0)
        } else {
            Vector3::new(cx + along, cy + lane * if s.rng.random::<bool>() { 1.0 } else { -1.0 } - 0.9, 0.0)
        };
        let size = if (min.x - cx).abs() < road { Vector3::new(1.8, 4.5, 1.5) } else { Vector3::new(4.5, 1.8, 1.5) };
        s.cuboid(min, size, 6.0, true);
    }

    let cropped: Vec<Vector3<f64>> = s.points.into_iter().filter(|p| region.contains(p)).collect();
    let cloud = voxel_downsample(&PointCloud::new(cropped)?, params.downsample_resolution)?;
    let cameras = params.sampling.cameras([cx, cy])?;
    let expanded = region.expanded(10.0);
    if let Some(c) = cameras.iter().find(|c| !expanded.contains(&c.pose.center())) {
        return Err(Error::invalid(format!("camera {} lies outside the capture region", c.id)));
    }
    Ok(SceneBundle {
        cloud,
        cameras,
        region,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_image_counts() {
        assert_eq!(PoseSamplingSpec::for_split(Split::Test).position_count(), 18);
        assert_eq!(PoseSamplingSpec::for_split(Split::Test).image_count(), 288);
        assert_eq!(PoseSamplingSpec::for_split(Split::Train).position_count(), 48);
        assert_eq!(PoseSamplingSpec::for_split(Split::Train).image_count(), 768);
        assert_eq!(PoseSamplingSpec::for_split(Split::Hard).image_count(), 288);
        let p48 = PoseSamplingSpec::for_split(Split::Train).with_position_count(48).unwrap();
        assert_eq!(p48.image_count(), 768);
        let p6 = PoseSamplingSpec::for_split(Split::Test).with_position_count(6).unwrap();
        assert_eq!((p6.grid_positions.len(), p6.image_count()), (3, 96));
        assert!(PoseSamplingSpec::for_split(Split::Train).with_position_count(7).is_err());
    }

    #[test]
    fn zero_positions_is_an_error() {
        let mut p = SceneParams::default();
        p.sampling.grid_positions.clear();
        assert!(generate_scene(1, &p).is_err());
    }

    #[test]
    fn cameras_follow_the_sampling_lists() {
        let spec = PoseSamplingSpec::for_split(Split::Test);
        let cams = spec.cameras([0.0, 0.0]).unwrap();
        assert_eq!(cams.len(), 288);
        for (i, c) in cams.iter().enumerate() {
            assert_eq!(c.id, i);
            assert_eq!(c.camera.fx, 960.0);
            let h = c.pose.center().z;
            assert!(spec.heights.iter().any(|&x| (x - h).abs() < 1e-9));
            // Optical axis elevation gives the pitch.
            let fwd = c.pose.rotation.row(2).transpose();
            let pitch = (-fwd.z).asin().to_degrees();
            assert!(spec.pitches_deg.iter().any(|&p| (p - pitch).abs() < 1e-9));
            let yaw = fwd.y.atan2(fwd.x).to_degrees().rem_euclid(360.0);
            let k = (yaw / 45.0).round();
            assert!((yaw - k * 45.0).abs() < 1e-9 || (yaw - 360.0).abs() < 1e-9);
        }
    }

    #[test]
    fn aabb_half_open() {
        let b = Aabb::new(Vector3::zeros(), Vector3::repeat(1.0));
        assert!(b.contains(&Vector3::zeros()));
        assert!(!b.contains(&Vector3::new(1.0, 0.5, 0.5)));
    }
}
