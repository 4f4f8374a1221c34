//! RGB rasters: depth-colored cloud projections and correspondence overlays.

use nalgebra::Vector2;

use crate::geom::{project, CameraModel, Pose, Projection};
use crate::scenegen::PointCloud;

pub const GREEN: [u8; 3] = [0, 200, 0];
pub const RED: [u8; 3] = [220, 0, 0];
const MARKER: [u8; 3] = [255, 255, 255];

/// Row-major RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            rgb: vec![0; width * height * 3],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = 3 * (y as usize * self.width + x as usize);
        self.rgb[i..i + 3].copy_from_slice(&c);
    }

    /// Bresenham segment between integer pixels.
    pub fn line(&mut self, a: (i64, i64), b: (i64, i64), c: [u8; 3]) {
        let (mut x, mut y) = a;
        let (dx, dy) = ((b.0 - x).abs(), -(b.1 - y).abs());
        let (sx, sy) = (if x < b.0 { 1 } else { -1 }, if y < b.1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            self.set(x, y, c);
            if (x, y) == b {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    /// Number of pixels that are not black.
    pub fn lit(&self) -> usize {
        self.rgb.chunks(3).filter(|p| p.iter().any(|&v| v != 0)).count()
    }
}

/// Pixel holding continuous coordinate `px` (pixel centers are integers).
pub fn pixel_index(cam: &CameraModel, px: &Vector2<f64>) -> (usize, usize) {
    let clamp = |v: f64, n: u32| ((v + 0.5).floor().max(0.0) as usize).min(n as usize - 1);
    (clamp(px.x, cam.width), clamp(px.y, cam.height))
}

/// Near points red, far points blue, through green; `t` in `[0, 1]`.
pub fn depth_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let r = (1.0 - 2.0 * t).max(0.0);
    let g = 1.0 - (2.0 * t - 1.0).abs();
    let b = (2.0 * t - 1.0).max(0.0);
    // Keep every visible point distinguishable from the black background.
    let q = |v: f64| (40.0 + 215.0 * v).round() as u8;
    [q(r), q(g), q(b)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthRender {
    pub raster: Raster,
    /// Points that project inside the image.
    pub visible: usize,
}

/// Z-buffered projection of the cloud, colored by depth over `[near, far]`
/// of the visible points.
pub fn render_depth(cloud: &PointCloud, cam: &CameraModel, pose: &Pose) -> DepthRender {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let hits: Vec<((usize, usize), f64)> = cloud
        .points()
        .iter()
        .filter_map(|p| match project(cam, pose, p) {
            Projection::Visible(px) => Some((pixel_index(cam, &px), pose.transform(p).z)),
            _ => None,
        })
        .collect();
    let (near, far) = hits
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(n, f), &(_, z)| (n.min(z), f.max(z)));
    let span = (far - near).max(1e-9);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut raster = Raster::new(w, h);
    for &((x, y), z) in &hits {
        let i = y * w + x;
        if z < zbuf[i] {
            zbuf[i] = z;
            raster.set(x as i64, y as i64, depth_color((z - near) / span));
        }
    }
    DepthRender {
        raster,
        visible: hits.len(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceRender {
    pub raster: Raster,
    pub correct: usize,
    pub wrong: usize,
}

/// Segments from each predicted pixel to the true projection of its point,
/// green when the reprojection error is below `threshold` pixels.
pub fn render_correspondences(
    cam: &CameraModel,
    gt_pose: &Pose,
    pairs: &[(nalgebra::Vector3<f64>, Vector2<f64>)],
    threshold: f64,
) -> CorrespondenceRender {
    let mut raster = Raster::new(cam.width as usize, cam.height as usize);
    let (mut correct, mut wrong) = (0, 0);
    for (point, pixel) in pairs {
        let pc = gt_pose.transform(point);
        let (good, truth) = if pc.z > 0.0 {
            let t = cam.project_camera_frame(&pc);
            ((t - pixel).norm() < threshold, Some(t))
        } else {
            (false, None)
        };
        let color = if good { GREEN } else { RED };
        if good {
            correct += 1;
        } else {
            wrong += 1;
        }
        let a = ((pixel.x + 0.5).floor() as i64, (pixel.y + 0.5).floor() as i64);
        if let Some(t) = truth.filter(|t| t.iter().all(|v| v.abs() < 1e6)) {
            raster.line(a, ((t.x + 0.5).floor() as i64, (t.y + 0.5).floor() as i64), color);
        }
        raster.set(a.0, a.1, if good { MARKER } else { color });
    }
    CorrespondenceRender { raster, correct, wrong }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn line_endpoints_and_length() {
        let mut r = Raster::new(10, 10);
        r.line((1, 1), (8, 4), GREEN);
        assert_eq!(r.get(1, 1), GREEN);
        assert_eq!(r.get(8, 4), GREEN);
        assert_eq!(r.lit(), 8);
    }

    #[test]
    fn depth_render_hits_every_visible_point_pixel() {
        let cam = CameraModel::new(50.0, 50.0, 31.5, 23.5, 64, 48).unwrap();
        let pts: Vec<Vector3<f64>> = (0..20)
            .map(|i| Vector3::new(i as f64 * 0.1 - 1.0, 0.05 * i as f64 - 0.5, 5.0 + i as f64))
            .chain([Vector3::new(0.0, 0.0, -3.0)])
            .collect();
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let out = render_depth(&cloud, &cam, &Pose::identity());
        assert_eq!(out.visible, 20);
        for p in &pts[..20] {
            let px = cam.project_camera_frame(p);
            let (x, y) = pixel_index(&cam, &px);
            assert_ne!(out.raster.get(x, y), [0, 0, 0]);
        }
    }

    #[test]
    fn exact_pairs_are_green() {
        let cam = CameraModel::new(50.0, 50.0, 31.5, 23.5, 64, 48).unwrap();
        let pose = Pose::identity();
        let p = Vector3::new(0.2, -0.1, 4.0);
        let px = cam.project_camera_frame(&p);
        let out = render_correspondences(&cam, &pose, &[(p, px), (p, px + Vector2::new(10.0, 0.0))], 4.0);
        assert_eq!((out.correct, out.wrong), (1, 1));
    }
}
