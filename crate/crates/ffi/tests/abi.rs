use std::ffi::CString;
use std::ptr;

use i2preg_ffi::*;
use nalgebra::{Rotation3, Vector3};

fn camera() -> *mut I2pCamera {
    let mut cam = ptr::null_mut();
    let s = unsafe { i2p_camera_new(500.0, 500.0, 320.0, 240.0, 640, 480, &mut cam) };
    assert_eq!(s, I2pStatus::Ok);
    cam
}

/// World points in front of the camera and their exact pixels.
fn scene(n: usize) -> ([f64; 9], [f64; 3], Vec<f64>, Vec<f64>) {
    let r = Rotation3::from_euler_angles(0.1, -0.2, 0.3);
    let t = Vector3::new(0.3, -0.2, 6.0);
    let (mut pts, mut pix) = (Vec::new(), Vec::new());
    for i in 0..n {
        let f = i as f64;
        let p = Vector3::new((f * 0.37).sin() * 2.0, (f * 0.71).cos() * 1.5, (f * 0.53).sin());
        let c = r * p + t;
        pts.extend([p.x, p.y, p.z]);
        pix.extend([500.0 * c.x / c.z + 320.0, 500.0 * c.y / c.z + 240.0]);
    }
    let m = r.matrix();
    let rot = [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)], m[(2, 2)]];
    (rot, [t.x, t.y, t.z], pts, pix)
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { i2p_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn epnp_recovers_pose_through_c_abi() {
    let cam = camera();
    let (rot, t, pts, pix) = scene(20);
    let (mut r_out, mut t_out) = ([0.0; 9], [0.0; 3]);
    let s = unsafe { i2p_epnp(cam, pts.as_ptr(), pix.as_ptr(), 20, r_out.as_mut_ptr(), t_out.as_mut_ptr()) };
    assert_eq!(s, I2pStatus::Ok);
    let (mut rre, mut rte) = (f64::NAN, f64::NAN);
    let s = unsafe { i2p_registration_errors(r_out.as_ptr(), t_out.as_ptr(), rot.as_ptr(), t.as_ptr(), &mut rre, &mut rte) };
    assert_eq!(s, I2pStatus::Ok);
    assert!(rre < 1e-6 && rte < 1e-6, "{rre} {rte}");
    unsafe { i2p_camera_free(cam) };
}

#[test]
fn ransac_marks_corrupted_pairs() {
    let cam = camera();
    let (rot, t, pts, mut pix) = scene(40);
    for i in (0..40).step_by(5) {
        pix[2 * i] += 60.0;
    }
    let opts = i2p_ransac_default_options();
    let (mut r_out, mut t_out) = ([0.0; 9], [0.0; 3]);
    let mut mask = vec![9u8; 40];
    let mut solved = 0u8;
    let s = unsafe {
        i2p_ransac(cam, pts.as_ptr(), pix.as_ptr(), 40, &opts, r_out.as_mut_ptr(), t_out.as_mut_ptr(), mask.as_mut_ptr(), &mut solved)
    };
    assert_eq!(s, I2pStatus::Ok);
    assert_eq!(solved, 1);
    for (i, &m) in mask.iter().enumerate() {
        assert_eq!(m, u8::from(i % 5 != 0), "pair {i}");
    }
    let (mut rre, mut rte) = (0.0, 0.0);
    unsafe { i2p_registration_errors(r_out.as_ptr(), t_out.as_ptr(), rot.as_ptr(), t.as_ptr(), &mut rre, &mut rte) };
    assert!(rre < 1e-6 && rte < 1e-6);
    unsafe { i2p_camera_free(cam) };
}

#[test]
fn errors_are_reported_with_messages() {
    let mut cam = ptr::null_mut();
    let s = unsafe { i2p_camera_new(-1.0, 500.0, 320.0, 240.0, 640, 480, &mut cam) };
    assert_eq!(s, I2pStatus::InvalidArgument);
    assert!(cam.is_null());
    assert!(!last_error().is_empty());

    let s = unsafe { i2p_camera_new(1.0, 1.0, 1.0, 1.0, 2, 2, ptr::null_mut()) };
    assert_eq!(s, I2pStatus::NullPointer);
    assert_eq!(last_error(), "out is null");

    let cam = camera();
    let (_, _, pts, pix) = scene(3);
    let (mut r, mut t) = ([0.0; 9], [0.0; 3]);
    let s = unsafe { i2p_epnp(cam, pts.as_ptr(), pix.as_ptr(), 3, r.as_mut_ptr(), t.as_mut_ptr()) };
    assert_ne!(s, I2pStatus::Ok);
    unsafe { i2p_camera_free(cam) };

    let text = CString::new("[ransac]\nmax_iterations = \"x\"\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { i2p_config_parse(text.as_ptr(), &mut cfg) }, I2pStatus::Config);
    assert!(last_error().contains("max_iterations"));
}

#[test]
fn pipeline_run_over_small_scene() {
    let text = CString::new("[scene]\npositions = 2\n\n[run]\nbypass_fusion = true\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { i2p_config_parse(text.as_ptr(), &mut cfg) }, I2pStatus::Ok);
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { i2p_pipeline_run(cfg, &mut run) }, I2pStatus::Ok);
    let n = unsafe { i2p_run_len(run) };
    assert_eq!(n, 32);
    assert_eq!(unsafe { i2p_run_recall(run) }, 1.0);
    let mut r = std::mem::MaybeUninit::<I2pResult>::uninit();
    assert_eq!(unsafe { i2p_run_result(run, 31, r.as_mut_ptr()) }, I2pStatus::Ok);
    let r = unsafe { r.assume_init() };
    assert_eq!((r.image_id, r.solved, r.success), (31, 1, 1));
    let mut r2 = std::mem::MaybeUninit::<I2pResult>::uninit();
    assert_eq!(unsafe { i2p_run_result(run, 32, r2.as_mut_ptr()) }, I2pStatus::OutOfRange);
    unsafe {
        i2p_run_free(run);
        i2p_config_free(cfg);
        i2p_run_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_exported_symbols() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/i2preg.h")).unwrap();
    for f in [
        "i2p_last_error",
        "i2p_camera_new",
        "i2p_camera_free",
        "i2p_epnp",
        "i2p_ransac",
        "i2p_ransac_default_options",
        "i2p_registration_errors",
        "i2p_config_default",
        "i2p_config_parse",
        "i2p_config_free",
        "i2p_pipeline_run",
        "i2p_run_len",
        "i2p_run_recall",
        "i2p_run_result",
        "i2p_run_free",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f}");
    }
    assert!(header.contains("typedef struct I2pCamera I2pCamera;"));
    assert!(header.contains("I2P_STATUS_OK = 0"));
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let dir = tempfile_dir();
    let src = dir.join("use_header.c");
    std::fs::write(
        &src,
        "#include \"i2preg.h\"\nint main(void) { I2pRansacOptions o = i2p_ransac_default_options(); return o.min_inliers == 0; }\n",
    )
    .unwrap();
    let status = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok())
        .ok_or(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("i2preg-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
