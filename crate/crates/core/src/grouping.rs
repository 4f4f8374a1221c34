//! Super-point grouping by farthest point sampling, and the image patch grid.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenegen::PointCloud;

/// `M` super-points sampled from a cloud plus the nearest-center assignment
/// of every point.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSet {
    pub centers: Vec<Vector3<f64>>,
    pub center_indices: Vec<usize>,
    /// Group id of every cloud point.
    pub assignment: Vec<usize>,
}

impl GroupSet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Point indices of each group, in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.centers.len()];
        for (i, &g) in self.assignment.iter().enumerate() {
            out[g].push(i);
        }
        out
    }
}

/// Farthest point sampling starting at `seed_index`. Distance ties break
/// toward the lowest point index; assignment ties toward the lowest center id.
pub fn farthest_point_sampling(cloud: &PointCloud, m: usize, seed_index: usize) -> Result<GroupSet> {
    farthest_point_sampling_trace(cloud, m, seed_index).map(|(g, _)| g)
}

/// Same as [`farthest_point_sampling`], also returning the min-distance of
/// each center at the moment it was chosen (the first entry is +inf).
pub fn farthest_point_sampling_trace(
    cloud: &PointCloud,
    m: usize,
    seed_index: usize,
) -> Result<(GroupSet, Vec<f64>)> {
    let pts = cloud.points();
    let n = pts.len();
    if m == 0 || m > n {
        return Err(Error::invalid(format!("cannot sample {m} centers from {n} points")));
    }
    if seed_index >= n {
        return Err(Error::invalid(format!("seed index {seed_index} out of range for {n} points")));
    }

    // Squared distance to the nearest chosen center; chosen points are marked -1.
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut assignment = vec![0usize; n];
    let mut center_indices = Vec::with_capacity(m);
    let mut radii = Vec::with_capacity(m);

    let mut next = seed_index;
    let mut next_d2 = f64::INFINITY;
    for k in 0..m {
        center_indices.push(next);
        radii.push(next_d2.sqrt());
        let c = pts[next];
        min_d2[next] = -1.0;
        assignment[next] = k;

        let mut best = usize::MAX;
        let mut best_d2 = -1.0;
        for (i, p) in pts.iter().enumerate() {
            if min_d2[i] >= 0.0 {
                let d2 = (p - c).norm_squared();
                if d2 < min_d2[i] {
                    min_d2[i] = d2;
                    assignment[i] = k;
                }
                if min_d2[i] > best_d2 {
                    best_d2 = min_d2[i];
                    best = i;
                }
            }
        }
        next = best;
        next_d2 = best_d2;
    }

    let centers = center_indices.iter().map(|&i| pts[i]).collect();
    Ok((
        GroupSet {
            centers,
            center_indices,
            assignment,
        },
        radii,
    ))
}

/// Non-overlapping `s x s` patch tiling of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_size: u32,
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    /// Fails unless `patch_size` divides both image dimensions.
    pub fn new(width: u32, height: u32, patch_size: u32) -> Result<Self> {
        if patch_size == 0 || width % patch_size != 0 || height % patch_size != 0 {
            return Err(Error::invalid(format!(
                "patch size {patch_size} does not divide {width}x{height}"
            )));
        }
        Ok(Self {
            patch_size,
            rows: (height / patch_size) as usize,
            cols: (width / patch_size) as usize,
        })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> u32 {
        self.cols as u32 * self.patch_size
    }

    pub fn height(&self) -> u32 {
        self.rows as u32 * self.patch_size
    }

    pub fn linear(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    pub fn center_pixel(&self, index: usize) -> Vector2<f64> {
        let (r, c) = self.row_col(index);
        crate::geom::patch_center_pixel(r, c, self.patch_size)
    }

    /// Chebyshev distance between two patches in grid units.
    pub fn chebyshev(&self, a: usize, b: usize) -> usize {
        let (ra, ca) = self.row_col(a);
        let (rb, cb) = self.row_col(b);
        ra.abs_diff(rb).max(ca.abs_diff(cb))
    }
}

/// Patch `(row, col) = (floor(v/s), floor(u/s))` containing `pixel = (u, v)`.
pub fn patch_of_pixel(grid: &PatchGrid, pixel: &Vector2<f64>) -> Result<(usize, usize)> {
    let (w, h) = (grid.width(), grid.height());
    if !(pixel.x >= 0.0 && pixel.x < w as f64 && pixel.y >= 0.0 && pixel.y < h as f64) {
        return Err(Error::PixelOutOfBounds {
            u: pixel.x,
            v: pixel.y,
            width: w,
            height: h,
        });
    }
    let s = grid.patch_size as f64;
    Ok(((pixel.y / s).floor() as usize, (pixel.x / s).floor() as usize))
}
