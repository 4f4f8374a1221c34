//! EPnP: the reference points are written as barycentric combinations of
//! four control points (three for planar scenes); the camera-frame control
//! points lie in the null space of a `2n x 3k` linear system and are fixed
//! by matching inter-control-point distances.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geom::{CameraModel, Pose};

const COLLINEAR_RATIO: f64 = 1e-10;
const PLANAR_RATIO: f64 = 1e-10;
const GAUSS_NEWTON_STEPS: usize = 10;

/// One 3D-2D observation; `pixel` in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointPixel {
    pub point: Vector3<f64>,
    pub pixel: Vector2<f64>,
}

struct ControlFrame {
    ctrl: Vec<Vector3<f64>>,
    alphas: DMatrix<f64>,
}

fn control_frame(points: &[Vector3<f64>]) -> Result<ControlFrame> {
    let n = points.len() as f64;
    let c0 = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c0;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lam: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let axes: Vec<Vector3<f64>> = order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    if !(lam[0] > 0.0) || lam[1] <= COLLINEAR_RATIO * lam[0] {
        return Err(Error::Degenerate("reference points are collinear".into()));
    }
    let planar = lam[2] <= PLANAR_RATIO * lam[0];
    let used = if planar { 2 } else { 3 };

    let mut ctrl = vec![c0];
    let scales: Vec<f64> = lam[..used].iter().map(|l| l.sqrt()).collect();
    for k in 0..used {
        ctrl.push(c0 + axes[k] * scales[k]);
    }
    let mut alphas = DMatrix::zeros(points.len(), used + 1);
    for (i, p) in points.iter().enumerate() {
        let d = p - c0;
        let mut sum = 0.0;
        for k in 0..used {
            let a = axes[k].dot(&d) / scales[k];
            alphas[(i, k + 1)] = a;
            sum += a;
        }
        alphas[(i, 0)] = 1.0 - sum;
    }
    Ok(ControlFrame { ctrl, alphas })
}

/// Null-space basis (columns, smallest singular value first) of the
/// projection system in normalized image coordinates.
fn null_space(frame: &ControlFrame, normalized: &[Vector2<f64>], count: usize) -> DMatrix<f64> {
    let k = frame.ctrl.len();
    let n = normalized.len();
    let rows = (2 * n).max(3 * k);
    let mut m = DMatrix::zeros(rows, 3 * k);
    for (i, x) in normalized.iter().enumerate() {
        for j in 0..k {
            let a = frame.alphas[(i, j)];
            m[(2 * i, 3 * j)] = a;
            m[(2 * i, 3 * j + 2)] = -a * x.x;
            m[(2 * i + 1, 3 * j + 1)] = a;
            m[(2 * i + 1, 3 * j + 2)] = -a * x.y;
        }
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..3 * k).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let mut basis = DMatrix::zeros(3 * k, count);
    for (c, &idx) in order.iter().take(count).enumerate() {
        basis.set_column(c, &v_t.row(idx).transpose());
    }
    basis
}

struct DistanceSystem {
    /// Per control-point pair and null vector: difference of the two 3-blocks.
    diffs: Vec<Vec<Vector3<f64>>>,
    rho: Vec<f64>,
}

impl DistanceSystem {
    fn new(frame: &ControlFrame, basis: &DMatrix<f64>) -> Self {
        let k = frame.ctrl.len();
        let mut diffs = Vec::new();
        let mut rho = Vec::new();
        for a in 0..k {
            for b in a + 1..k {
                let d: Vec<Vector3<f64>> = (0..basis.ncols())
                    .map(|c| {
                        let v = basis.column(c);
                        Vector3::new(v[3 * a] - v[3 * b], v[3 * a + 1] - v[3 * b + 1], v[3 * a + 2] - v[3 * b + 2])
                    })
                    .collect();
                diffs.push(d);
                rho.push((frame.ctrl[a] - frame.ctrl[b]).norm_squared());
            }
        }
        Self { diffs, rho }
    }

    /// Linear solve for the products `β_i β_j` (i ≤ j) of the first `n` null
    /// vectors, then recovery of the `β` themselves.
    fn approximate(&self, n: usize) -> Option<Vec<f64>> {
        let unknowns = n * (n + 1) / 2;
        if self.rho.len() < unknowns {
            return None;
        }
        let mut l = DMatrix::zeros(self.rho.len(), unknowns);
        for (p, d) in self.diffs.iter().enumerate() {
            let mut col = 0;
            for i in 0..n {
                for j in i..n {
                    let f = if i == j { 1.0 } else { 2.0 };
                    l[(p, col)] = f * d[i].dot(&d[j]);
                    col += 1;
                }
            }
        }
        let rho = DVector::from_column_slice(&self.rho);
        let b = l.svd(true, true).solve(&rho, 1e-14).ok()?;
        // b = [b11, b12, .., b1n, b22, ...]
        let b11 = b[0];
        let beta1 = b11.abs().sqrt();
        if beta1 == 0.0 {
            return None;
        }
        let mut beta = vec![0.0; self.diffs[0].len()];
        beta[0] = beta1;
        let mut diag = n; // index of b_ii for i = 1
        for i in 1..n {
            let bii = b[diag];
            beta[i] = bii.abs().sqrt() * b[i].signum();
            diag += n - i;
        }
        Some(beta)
    }

    fn residuals(&self, beta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = beta.len();
        let mut r = DVector::zeros(self.rho.len());
        let mut j = DMatrix::zeros(self.rho.len(), n);
        for (p, d) in self.diffs.iter().enumerate() {
            let s: Vector3<f64> = d.iter().zip(beta).map(|(v, b)| v * *b).sum();
            r[p] = s.norm_squared() - self.rho[p];
            for c in 0..n {
                j[(p, c)] = 2.0 * s.dot(&d[c]);
            }
        }
        (r, j)
    }

    fn gauss_newton(&self, mut beta: Vec<f64>) -> Vec<f64> {
        for _ in 0..GAUSS_NEWTON_STEPS {
            let (r, j) = self.residuals(&beta);
            let Ok(step) = j.svd(true, true).solve(&r, 1e-14) else {
                break;
            };
            for (b, s) in beta.iter_mut().zip(step.iter()) {
                *b -= s;
            }
            if step.norm() < 1e-15 * (1.0 + beta.iter().map(|b| b * b).sum::<f64>().sqrt()) {
                break;
            }
        }
        beta
    }
}

/// Rigid transform taking `world[i]` onto `cam[i]` in the least-squares sense.
pub(crate) fn procrustes(world: &[Vector3<f64>], cam: &[Vector3<f64>]) -> Option<Pose> {
    let n = world.len() as f64;
    let mw = world.iter().sum::<Vector3<f64>>() / n;
    let mc = cam.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (w, c) in world.iter().zip(cam) {
        h += (c - mc) * (w - mw).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    if !r.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(Pose::from_parts_unchecked(r, mc - r * mw))
}

/// Mean pixel reprojection error; points behind the camera count as +inf.
pub fn mean_reprojection_error(pose: &Pose, cam: &CameraModel, pairs: &[PointPixel]) -> f64 {
    let total: f64 = pairs.iter().map(|p| reprojection_error(pose, cam, p)).sum();
    total / pairs.len() as f64
}

pub fn reprojection_error(pose: &Pose, cam: &CameraModel, pair: &PointPixel) -> f64 {
    let pc = pose.transform(&pair.point);
    if pc.z <= 0.0 {
        return f64::INFINITY;
    }
    (cam.project_camera_frame(&pc) - pair.pixel).norm()
}

/// Pose from at least four 2D-3D correspondences.
pub fn epnp(pairs: &[PointPixel], cam: &CameraModel) -> Result<Pose> {
    if pairs.len() < 4 {
        return Err(Error::invalid(format!("EPnP needs at least 4 correspondences, got {}", pairs.len())));
    }
    let world: Vec<Vector3<f64>> = pairs.iter().map(|p| p.point).collect();
    let normalized: Vec<Vector2<f64>> = pairs
        .iter()
        .map(|p| Vector2::new((p.pixel.x - cam.cx) / cam.fx, (p.pixel.y - cam.cy) / cam.fy))
        .collect();
    let frame = control_frame(&world)?;
    let k = frame.ctrl.len();
    let dim = if k == 4 { 4 } else { 3 };
    let basis = null_space(&frame, &normalized, dim);
    let system = DistanceSystem::new(&frame, &basis);

    let mut best: Option<(f64, Pose)> = None;
    for n in 1..=3 {
        let Some(init) = system.approximate(n) else {
            continue;
        };
        let beta = system.gauss_newton(init);
        let Some(pose) = pose_from_betas(&frame, &basis, &beta, &world) else {
            continue;
        };
        let err = mean_reprojection_error(&pose, cam, pairs);
        if err.is_finite() && best.as_ref().map_or(true, |(e, _)| err < *e) {
            best = Some((err, pose));
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| Error::Degenerate("no EPnP hypothesis places the points in front of the camera".into()))
}

fn pose_from_betas(frame: &ControlFrame, basis: &DMatrix<f64>, beta: &[f64], world: &[Vector3<f64>]) -> Option<Pose> {
    let k = frame.ctrl.len();
    let mut v = DVector::zeros(3 * k);
    for (c, b) in beta.iter().enumerate() {
        v += basis.column(c) * *b;
    }
    let ctrl_cam: Vec<Vector3<f64>> = (0..k).map(|j| Vector3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2])).collect();
    let mut cam_pts: Vec<Vector3<f64>> = (0..world.len())
        .map(|i| (0..k).map(|j| ctrl_cam[j] * frame.alphas[(i, j)]).sum())
        .collect();
    let zsum: f64 = cam_pts.iter().map(|p| p.z).sum();
    if zsum < 0.0 {
        cam_pts.iter_mut().for_each(|p| *p = -*p);
    }
    procrustes(world, &cam_pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraModel {
        CameraModel::new(800.0, 800.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn synth(pose: &Pose, n: usize, rng: &mut ChaCha8Rng, planar: bool) -> Vec<PointPixel> {
        let cam = cam();
        let inv = pose.inverse();
        (0..n)
            .map(|_| {
                let pc = Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-1.5..1.5),
                    if planar { 6.0 } else { rng.random_range(4.0..10.0) },
                );
                PointPixel {
                    point: inv.transform(&pc),
                    pixel: cam.project_camera_frame(&pc),
                }
            })
            .collect()
    }

    #[test]
    fn identity_pose_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pairs = synth(&Pose::identity(), 12, &mut rng, false);
        let pose = epnp(&pairs, &cam()).unwrap();
        assert!((pose.rotation - Matrix3::identity()).amax() < 1e-6);
        assert!(pose.translation.norm() < 1e-6);
    }

    #[test]
    fn recovers_general_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gt = Pose::from_axis_angle(Vector3::new(0.4, -1.2, 0.3), Vector3::new(0.5, -0.2, 1.5));
        let pairs = synth(&gt, 20, &mut rng, false);
        let pose = epnp(&pairs, &cam()).unwrap();
        assert!((pose.rotation - gt.rotation).amax() < 1e-8);
        assert!((pose.translation - gt.translation).norm() < 1e-8);
    }

    #[test]
    fn recovers_planar_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = Pose::from_axis_angle(Vector3::new(-0.3, 0.2, 0.9), Vector3::new(1.0, 0.0, 2.0));
        let pairs = synth(&gt, 15, &mut rng, true);
        let pose = epnp(&pairs, &cam()).unwrap();
        assert!((pose.rotation - gt.rotation).amax() < 1e-7, "{:?}", pose);
        assert!((pose.translation - gt.translation).norm() < 1e-7);
    }

    #[test]
    fn minimal_four_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let gt = Pose::from_axis_angle(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.0, 0.5, 1.0));
        let pairs = synth(&gt, 4, &mut rng, false);
        let pose = epnp(&pairs, &cam()).unwrap();
        assert!(mean_reprojection_error(&pose, &cam(), &pairs) < 1e-6);
    }

    #[test]
    fn collinear_points_are_rejected() {
        let pairs: Vec<PointPixel> = (0..6)
            .map(|i| {
                let p = Vector3::new(i as f64 * 0.3, 0.0, 5.0);
                PointPixel {
                    point: p,
                    pixel: cam().project_camera_frame(&p),
                }
            })
            .collect();
        assert!(matches!(epnp(&pairs, &cam()), Err(Error::Degenerate(_))));
        assert!(epnp(&pairs[..3], &cam()).is_err());
    }
}
