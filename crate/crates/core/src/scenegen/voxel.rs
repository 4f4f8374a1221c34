use std::collections::HashMap;

use nalgebra::Vector3;

use super::{Aabb, CameraRecord, PointCloud};
use crate::error::{Error, Result};
use crate::geom::in_frustum;

/// Replaces the points of every occupied `resolution`-cube by their centroid.
/// Output order follows the first occurrence of each cell.
pub fn voxel_downsample(cloud: &PointCloud, resolution: f64) -> Result<PointCloud> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::invalid(format!("resolution must be positive, got {resolution}")));
    }
    let mut slot: HashMap<[i64; 3], usize> = HashMap::new();
    let mut sums: Vec<(Vector3<f64>, usize)> = Vec::new();
    for p in cloud.points() {
        let key = [
            (p.x / resolution).floor() as i64,
            (p.y / resolution).floor() as i64,
            (p.z / resolution).floor() as i64,
        ];
        let idx = *slot.entry(key).or_insert_with(|| {
            sums.push((Vector3::zeros(), 0));
            sums.len() - 1
        });
        sums[idx].0 += p;
        sums[idx].1 += 1;
    }
    let pts = sums
        .into_iter()
        .map(|(s, n)| if n == 1 { s } else { s / n as f64 })
        .collect();
    PointCloud::new(pts)
}

/// Overlapping cubic tiling of a region with non-empty member lists.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelPartition {
    pub voxel_size: f64,
    pub stride: f64,
    pub voxels: Vec<(Aabb, Vec<usize>)>,
}

impl VoxelPartition {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }
}

/// Start offsets of the boxes along one axis. A final box flush with the
/// region end is added when the stride does not land on it.
fn axis_starts(lo: f64, hi: f64, size: f64, stride: f64) -> Vec<f64> {
    let extent = hi - lo;
    if extent <= size {
        return vec![lo];
    }
    let steps = ((extent - size) / stride + 1e-9).floor() as usize;
    let mut out: Vec<f64> = (0..=steps).map(|k| lo + k as f64 * stride).collect();
    if out.last().map_or(true, |&s| s + size < hi - 1e-9) {
        out.push(hi - size);
    }
    out
}

/// Candidate boxes tiling `region` at `stride` (z-major, then y, then x).
pub fn candidate_boxes(region: &Aabb, voxel_size: f64, stride: f64) -> Vec<Aabb> {
    let xs = axis_starts(region.min.x, region.max.x, voxel_size, stride);
    let ys = axis_starts(region.min.y, region.max.y, voxel_size, stride);
    let zs = axis_starts(region.min.z, region.max.z, voxel_size, stride);
    let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                let min = Vector3::new(x, y, z);
                out.push(Aabb::new(min, min + Vector3::repeat(voxel_size)));
            }
        }
    }
    out
}

pub fn partition_voxels(cloud: &PointCloud, region: &Aabb, voxel_size: f64, stride: f64) -> Result<VoxelPartition> {
    if !(stride > 0.0 && voxel_size >= stride) {
        return Err(Error::invalid(format!(
            "need voxel_size >= stride > 0, got size {voxel_size} stride {stride}"
        )));
    }
    let voxels = candidate_boxes(region, voxel_size, stride)
        .into_iter()
        .filter_map(|b| {
            let members: Vec<usize> = cloud
                .points()
                .iter()
                .enumerate()
                .filter(|(_, p)| b.contains(p))
                .map(|(i, _)| i)
                .collect();
            (!members.is_empty()).then_some((b, members))
        })
        .collect();
    Ok(VoxelPartition {
        voxel_size,
        stride,
        voxels,
    })
}

/// Fraction of `indices` whose points project inside the camera image.
pub fn visible_fraction(cloud: &PointCloud, indices: &[usize], cam: &CameraRecord) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let pts = cloud.points();
    let n = indices
        .iter()
        .filter(|&&i| in_frustum(&cam.camera, &cam.pose, &pts[i]))
        .count();
    n as f64 / indices.len() as f64
}

/// Image ids associated with each voxel: those seeing more than 30% of its points.
pub fn associate_images(cloud: &PointCloud, part: &VoxelPartition, cameras: &[CameraRecord]) -> Vec<Vec<usize>> {
    const MIN_VISIBLE_FRACTION: f64 = 0.30;
    part.voxels
        .iter()
        .map(|(_, members)| {
            cameras
                .iter()
                .filter(|c| visible_fraction(cloud, members, c) > MIN_VISIBLE_FRACTION)
                .map(|c| c.id)
                .collect()
        })
        .collect()
}
