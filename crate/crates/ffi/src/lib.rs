//! C ABI over the `i2preg` library.
//!
//! Objects are opaque handles created by `*_new`/`*_parse`/`*_run` functions
//! and released with the matching `*_free`. Every fallible call returns an
//! [`I2pStatus`]; the message of the last failure on the calling thread is
//! available through [`i2p_last_error`]. Arrays are row-major `double`s.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use i2preg::config::PipelineConfig;
use i2preg::geom::{CameraModel, Pose};
use i2preg::pipeline::{run_generated, PipelineContext, RunOutput};
use i2preg::pose::{epnp, epnp_ransac, registration_errors, PointPixel, RansacConfig, RegistrationResult};
use i2preg::Error;
use nalgebra::{Vector2, Vector3};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum I2pStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Degenerate = 3,
    Io = 4,
    Parse = 5,
    Config = 6,
    OutOfRange = 7,
    Internal = 8,
}

impl From<&Error> for I2pStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Degenerate(_) | Error::NoVisibleGroups | Error::ZeroNormRow(_) | Error::PointAtOrigin => {
                I2pStatus::Degenerate
            }
            Error::Io { .. } => I2pStatus::Io,
            Error::Parse { .. } => I2pStatus::Parse,
            Error::Config(_) => I2pStatus::Config,
            _ => I2pStatus::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into_bytes());
}

fn fail(status: I2pStatus, msg: impl Into<String>) -> I2pStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), I2pStatus>) -> I2pStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            I2pStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => fail(I2pStatus::Internal, "internal panic"),
    }
}

fn lib<T>(r: i2preg::Result<T>) -> Result<T, I2pStatus> {
    r.map_err(|e| fail(I2pStatus::from(&e), e.to_string()))
}

fn nonnull<T>(p: *const T, name: &str) -> Result<(), I2pStatus> {
    if p.is_null() {
        Err(fail(I2pStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes) and returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn i2p_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Pinhole camera.
pub struct I2pCamera(CameraModel);

/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn i2p_camera_new(
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    out: *mut *mut I2pCamera,
) -> I2pStatus {
    guard(|| {
        nonnull(out, "out")?;
        let cam = lib(CameraModel::new(fx, fy, cx, cy, width, height))?;
        *out = Box::into_raw(Box::new(I2pCamera(cam)));
        Ok(())
    })
}

/// # Safety
/// `cam` must be null or a handle from [`i2p_camera_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn i2p_camera_free(cam: *mut I2pCamera) {
    if !cam.is_null() {
        drop(Box::from_raw(cam));
    }
}

unsafe fn read_pairs(points: *const f64, pixels: *const f64, n: usize) -> Result<Vec<PointPixel>, I2pStatus> {
    nonnull(points, "points")?;
    nonnull(pixels, "pixels")?;
    let p = std::slice::from_raw_parts(points, 3 * n);
    let q = std::slice::from_raw_parts(pixels, 2 * n);
    Ok((0..n)
        .map(|i| PointPixel {
            point: Vector3::new(p[3 * i], p[3 * i + 1], p[3 * i + 2]),
            pixel: Vector2::new(q[2 * i], q[2 * i + 1]),
        })
        .collect())
}

unsafe fn write_pose(pose: &Pose, rotation: *mut f64, translation: *mut f64) -> Result<(), I2pStatus> {
    nonnull(rotation, "rotation")?;
    nonnull(translation, "translation")?;
    ptr::copy_nonoverlapping(pose.rotation_row_major().as_ptr(), rotation, 9);
    ptr::copy_nonoverlapping(pose.translation.as_ptr(), translation, 3);
    Ok(())
}

unsafe fn read_pose(rotation: *const f64, translation: *const f64) -> Result<Pose, I2pStatus> {
    nonnull(rotation, "rotation")?;
    nonnull(translation, "translation")?;
    let r: [f64; 9] = std::slice::from_raw_parts(rotation, 9).try_into().expect("nine values");
    let t: [f64; 3] = std::slice::from_raw_parts(translation, 3).try_into().expect("three values");
    Ok(Pose::from_row_major(&r, &t))
}

/// World-to-camera pose from `n >= 4` exact correspondences.
/// `points` holds `3n` world coordinates, `pixels` `2n` pixel coordinates.
/// Writes a row-major rotation (9) and a translation (3).
///
/// # Safety
/// Pointers must reference arrays of the stated lengths; `cam` must be live.
#[no_mangle]
pub unsafe extern "C" fn i2p_epnp(
    cam: *const I2pCamera,
    points: *const f64,
    pixels: *const f64,
    n: usize,
    rotation: *mut f64,
    translation: *mut f64,
) -> I2pStatus {
    guard(|| {
        nonnull(cam, "cam")?;
        let pairs = read_pairs(points, pixels, n)?;
        let pose = lib(epnp(&pairs, &(*cam).0))?;
        write_pose(&pose, rotation, translation)
    })
}

/// Robust-fit options; see [`i2p_ransac_default_options`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct I2pRansacOptions {
    pub max_iterations: u32,
    /// Inlier threshold in pixels.
    pub reprojection_threshold: f64,
    pub min_inliers: u32,
    pub seed: u64,
    /// Early-termination confidence; 1.0 runs every iteration.
    pub confidence: f64,
    /// Nonzero to refine the focal length on the inliers.
    pub refine_focal: u8,
}

#[no_mangle]
pub extern "C" fn i2p_ransac_default_options() -> I2pRansacOptions {
    let d = RansacConfig::default();
    I2pRansacOptions {
        max_iterations: d.max_iterations as u32,
        reprojection_threshold: d.reprojection_threshold,
        min_inliers: d.min_inliers as u32,
        seed: d.seed,
        confidence: d.confidence,
        refine_focal: u8::from(d.refine_focal),
    }
}

/// EPnP inside RANSAC. `inlier_mask`, if non-null, receives `n` bytes
/// (1 = inlier). `solved` is set to 0 when no hypothesis reaches
/// `min_inliers`; the pose is then the identity.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths; `cam` must be live.
#[no_mangle]
pub unsafe extern "C" fn i2p_ransac(
    cam: *const I2pCamera,
    points: *const f64,
    pixels: *const f64,
    n: usize,
    options: *const I2pRansacOptions,
    rotation: *mut f64,
    translation: *mut f64,
    inlier_mask: *mut u8,
    solved: *mut u8,
) -> I2pStatus {
    guard(|| {
        nonnull(cam, "cam")?;
        nonnull(options, "options")?;
        nonnull(solved, "solved")?;
        let o = *options;
        let cfg = RansacConfig {
            max_iterations: o.max_iterations as usize,
            reprojection_threshold: o.reprojection_threshold,
            min_inliers: o.min_inliers as usize,
            seed: o.seed,
            refine_focal: o.refine_focal != 0,
            confidence: o.confidence,
        };
        let pairs = read_pairs(points, pixels, n)?;
        let r = lib(epnp_ransac(&pairs, &(*cam).0, &cfg))?;
        write_pose(&r.pose, rotation, translation)?;
        if !inlier_mask.is_null() {
            let mask = std::slice::from_raw_parts_mut(inlier_mask, n);
            mask.fill(0);
            for &i in &r.inlier_ids {
                mask[i] = 1;
            }
        }
        *solved = u8::from(r.solved);
        Ok(())
    })
}

/// Rotation error (degrees) and translation error (meters) of `pred` against `gt`.
///
/// # Safety
/// Rotation pointers reference 9 values, translation pointers 3.
#[no_mangle]
pub unsafe extern "C" fn i2p_registration_errors(
    pred_rotation: *const f64,
    pred_translation: *const f64,
    gt_rotation: *const f64,
    gt_translation: *const f64,
    rre: *mut f64,
    rte: *mut f64,
) -> I2pStatus {
    guard(|| {
        nonnull(rre, "rre")?;
        nonnull(rte, "rte")?;
        let pred = read_pose(pred_rotation, pred_translation)?;
        let gt = read_pose(gt_rotation, gt_translation)?;
        let (r, t) = registration_errors(&pred, &gt);
        *rre = r;
        *rte = t;
        Ok(())
    })
}

/// Pipeline configuration.
pub struct I2pConfig(PipelineConfig);

/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn i2p_config_default(out: *mut *mut I2pConfig) -> I2pStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = Box::into_raw(Box::new(I2pConfig(PipelineConfig::default())));
        Ok(())
    })
}

/// Parses TOML text; absent keys keep their defaults.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn i2p_config_parse(text: *const c_char, out: *mut *mut I2pConfig) -> I2pStatus {
    guard(|| {
        nonnull(text, "text")?;
        nonnull(out, "out")?;
        let s = CStr::from_ptr(text)
            .to_str()
            .map_err(|_| fail(I2pStatus::InvalidArgument, "config text is not UTF-8"))?;
        let cfg = lib(PipelineConfig::parse(s))?;
        lib(cfg.validate())?;
        *out = Box::into_raw(Box::new(I2pConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a live config handle.
#[no_mangle]
pub unsafe extern "C" fn i2p_config_free(cfg: *mut I2pConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Outcome of a pipeline run.
pub struct I2pRun(RunOutput);

/// One registered image.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct I2pResult {
    pub image_id: u64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    /// Degrees; NaN when undefined.
    pub rre: f64,
    /// Meters; NaN when undefined.
    pub rte: f64,
    pub inliers: u64,
    pub solved: u8,
    pub success: u8,
}

/// Generates the configured scenes and registers every image.
///
/// # Safety
/// `cfg` must be live; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn i2p_pipeline_run(cfg: *const I2pConfig, out: *mut *mut I2pRun) -> I2pStatus {
    guard(|| {
        nonnull(cfg, "cfg")?;
        nonnull(out, "out")?;
        let ctx = lib(PipelineContext::new(&(*cfg).0, None))?;
        let run = lib(run_generated(&ctx))?;
        *out = Box::into_raw(Box::new(I2pRun(run)));
        Ok(())
    })
}

/// Number of images in a run; 0 for a null handle.
///
/// # Safety
/// `run` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn i2p_run_len(run: *const I2pRun) -> usize {
    if run.is_null() {
        0
    } else {
        (*run).0.outcomes.len()
    }
}

/// Registration recall of a run; NaN for a null handle.
///
/// # Safety
/// `run` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn i2p_run_recall(run: *const I2pRun) -> f64 {
    if run.is_null() {
        f64::NAN
    } else {
        (*run).0.summary.metrics.recall
    }
}

fn to_c(r: &RegistrationResult) -> I2pResult {
    I2pResult {
        image_id: r.image_id,
        rotation: r.pose.rotation_row_major(),
        translation: [r.pose.translation.x, r.pose.translation.y, r.pose.translation.z],
        rre: r.rre,
        rte: r.rte,
        inliers: r.inlier_ids.len() as u64,
        solved: u8::from(r.solved),
        success: u8::from(r.success),
    }
}

/// # Safety
/// `run` must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn i2p_run_result(run: *const I2pRun, index: usize, out: *mut I2pResult) -> I2pStatus {
    guard(|| {
        nonnull(run, "run")?;
        nonnull(out, "out")?;
        let outcomes = &(&*run).0.outcomes;
        let o = outcomes
            .get(index)
            .ok_or_else(|| fail(I2pStatus::OutOfRange, format!("index {index} out of {}", outcomes.len())))?;
        *out = to_c(&o.result);
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a live run handle.
#[no_mangle]
pub unsafe extern "C" fn i2p_run_free(run: *mut I2pRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
