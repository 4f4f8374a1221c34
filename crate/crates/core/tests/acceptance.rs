//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use i2preg::attention::{gal_masks, GalConfig, MaskLabel};
use i2preg::cli;
use i2preg::config::PipelineConfig;
use i2preg::geom::{patch_ray, CameraModel, Pose};
use i2preg::gradcheck::{check_loss, GradcheckConfig, LossKind};
use i2preg::grouping::PatchGrid;
use i2preg::matching::{soft_argmax, window_soft_argmax, SimilarityMap};
use i2preg::pipeline::{run_generated, PipelineContext};
use i2preg::pose::{epnp, registration_errors, registration_recall, summarize, EvalConfig, PointPixel, RegistrationResult};
use i2preg::scenegen::{
    candidate_boxes, generate_scene, PoseSamplingSpec, SceneParams, Split, CAPTURE_WIDTH,
};
use nalgebra::{Rotation3, Vector2, Vector3};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn oracle_end_to_end() -> Outcome {
    let mut cfg = PipelineConfig::default();
    cfg.scene.scenes = 5;
    cfg.run.bypass_fusion = true;
    let t = Instant::now();
    let out = single_thread(|| run_generated(&PipelineContext::new(&cfg, None).unwrap()).unwrap());
    let secs = t.elapsed().as_secs_f64();
    let m = &out.summary.metrics;
    let per_scene = out.summary.scenes.iter().all(|s| s.images == 288);
    let ok = per_scene
        && m.images == 1440
        && m.recall == 1.0
        && m.median_rre < 0.1
        && m.median_rte < 0.05
        && secs < 300.0
        && (cfg.input.groups, cfg.input.patch_size) == (512, 16);
    (
        ok,
        format!(
            "{} images, RR {:.4}, median RRE {:.4} deg, median RTE {:.4} m, {secs:.1} s on one thread",
            m.images, m.recall, m.median_rre, m.median_rte
        ),
    )
}

fn robust_end_to_end() -> Outcome {
    let mut cfg = PipelineConfig::default();
    cfg.scene.scenes = 5;
    cfg.run.bypass_fusion = true;
    cfg.oracle.noise_sigma = 0.1;
    cfg.oracle.outlier_rate = 0.3;
    let out = run_generated(&PipelineContext::new(&cfg, None).unwrap()).unwrap();
    let s = &out.summary;
    let excluded = 1.0 - s.outlier_inliers as f64 / s.outlier_pairs.max(1) as f64;
    let ok = s.metrics.recall == 1.0 && s.outlier_pairs > 0 && excluded >= 0.95;
    (
        ok,
        format!(
            "{} images, RR {:.4}, {} injected outlier pairs, {:.2}% excluded from inliers",
            s.metrics.images,
            s.metrics.recall,
            s.outlier_pairs,
            100.0 * excluded
        ),
    )
}

fn epnp_oracle() -> Outcome {
    let cam = CameraModel::new(960.0, 960.0, 960.0, 540.0, 1920, 1080).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let trials = 1000;
    let mut good = 0;
    for _ in 0..trials {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let r = Rotation3::new(axis.normalize() * angle);
        let center = Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-5.0..5.0));
        let pose = Pose::new(*r.matrix(), -(r * center)).unwrap();
        let inv = pose.inverse();
        let pairs: Vec<PointPixel> = (0..20)
            .map(|_| {
                let px = Vector2::new(rng.random_range(0.0..1920.0), rng.random_range(0.0..1080.0));
                let depth = rng.random_range(4.0..60.0);
                let pc = Vector3::new((px.x - 960.0) / 960.0, (px.y - 540.0) / 960.0, 1.0) * depth;
                PointPixel {
                    point: inv.transform(&pc),
                    pixel: px,
                }
            })
            .collect();
        let Ok(est) = epnp(&pairs, &cam) else { continue };
        let dr = est.rotation.transpose() * pose.rotation;
        let rot_err = ((dr.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
        let t_err = (est.translation - pose.translation).norm();
        if rot_err < 1e-6 && t_err < 1e-6 {
            good += 1;
        }
    }
    let frac = good as f64 / trials as f64;
    (frac >= 0.999, format!("{good}/{trials} trials within 1e-6 rad and 1e-6 m"))
}

fn gradient_suite() -> Outcome {
    let cfg = GradcheckConfig::default();
    let mut parts = Vec::new();
    let mut ok = cfg.trials == 100 && cfg.tolerance == 1e-4;
    for k in LossKind::ALL {
        let r = check_loss(k, &cfg).unwrap();
        let passed = r.iter().filter(|t| t.pass).count();
        let worst = r.iter().map(|t| t.rel_error).fold(0.0, f64::max);
        ok &= passed == r.len() && r.len() == 100;
        parts.push(format!("{k} {passed}/{} (worst {worst:.1e})", r.len()));
    }
    (ok, parts.join(", "))
}

fn gal_properties() -> Outcome {
    let defaults = GalConfig::default();
    let mut ok = (defaults.theta_low, defaults.theta_up, defaults.d_low, defaults.d_up) == (10.0, 20.0, 3.0, 5.0);
    let cam = CameraModel::from_hfov(90.0, 1920, 1080).unwrap().resized(512, 288);
    let grid = PatchGrid::new(512, 288, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let count = |m: &i2preg::attention::TriMask, l| m.count(l);
    for _ in 0..20 {
        let pose = Pose::looking(
            Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(5.0..9.0)),
            rng.random_range(0.0..360f64).to_radians(),
            rng.random_range(10.0..35f64).to_radians(),
        );
        let centers: Vec<Vector3<f64>> = (0..60)
            .map(|_| Vector3::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0), rng.random_range(0.0..12.0)))
            .collect();
        let at = |cfg: &GalConfig| gal_masks(&cam, &pose, &grid, &centers, cfg).unwrap();
        let mut prev = (0, 0, usize::MAX, usize::MAX);
        for step in 0..8 {
            let lo = 2.0 + 2.0 * step as f64;
            let dlo = 0.5 + 0.5 * step as f64;
            let (i2p, p2i) = at(&GalConfig {
                theta_low: lo,
                theta_up: 20.0 + 2.0 * step as f64,
                d_low: dlo,
                d_up: 5.0 + 0.5 * step as f64,
                ..defaults.clone()
            });
            let now = (
                count(&i2p, MaskLabel::Positive),
                count(&p2i, MaskLabel::Positive),
                count(&i2p, MaskLabel::Negative),
                count(&p2i, MaskLabel::Negative),
            );
            // Positives grow with the lower thresholds, negatives shrink with the upper ones.
            ok &= now.0 >= prev.0 && now.1 >= prev.1 && now.2 <= prev.2 && now.3 <= prev.3;
            prev = now;
        }
    }
    let mut cases = 0;
    let mut hits = 0;
    for _ in 0..200 {
        let pose = Pose::looking(
            Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(5.0..9.0)),
            rng.random_range(0.0..360f64).to_radians(),
            rng.random_range(10.0..35f64).to_radians(),
        );
        let (row, col) = (rng.random_range(0..grid.rows), rng.random_range(0..grid.cols));
        let ray = patch_ray(&cam, &pose, row as i64, col as i64, 16).unwrap();
        let dir = *ray.direction();
        let depth = rng.random_range(2.0..80.0);
        let on_ray = ray.origin + dir * depth;
        let perp = dir.cross(&Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0)).normalize();
        let offset = on_ray + perp * 6.0;
        let (i2p, p2i) = gal_masks(&cam, &pose, &grid, &[on_ray, offset], &defaults).unwrap();
        let p = grid.linear(row, col);
        cases += 1;
        if i2p.labels[(p, 0)] == MaskLabel::Positive
            && p2i.labels[(0, p)] == MaskLabel::Positive
            && p2i.labels[(1, p)] == MaskLabel::Negative
        {
            hits += 1;
        }
    }
    ok &= hits == cases;
    (ok, format!("monotone on 20 scenes x 8 sweeps; on-ray/offset cases {hits}/{cases}"))
}

fn soft_argmax_limits() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ok = true;
    let mut worst_uniform: f64 = 0.0;
    let mut worst_sharp: f64 = 0.0;
    for _ in 0..200 {
        let (r, c) = (rng.random_range(1..20), rng.random_range(1..20));
        let origin = Vector2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let level = rng.random_range(-1.0..1.0);
        let u = soft_argmax(&SimilarityMap::with_origin(Array2::from_elem((r, c), level), origin), 1.0).unwrap();
        let centroid = origin + Vector2::new((c - 1) as f64 / 2.0, (r - 1) as f64 / 2.0);
        worst_uniform = worst_uniform.max((u - centroid).norm());

        let v = Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0));
        let map = SimilarityMap::new(v.mapv(|x| x * 1e3));
        let (ar, ac) = map.argmax();
        let s = soft_argmax(&map, 1.0).unwrap();
        // Sharpening only isolates the peak when the runner-up is not within 1e-2.
        let mut sorted: Vec<f64> = v.iter().copied().collect();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if sorted.len() < 2 || sorted[0] - sorted[1] > 1e-2 {
            worst_sharp = worst_sharp.max((s - Vector2::new(ac as f64, ar as f64)).norm());
        }

        let w = window_soft_argmax(&SimilarityMap::new(v.clone()), 5, rng.random_range(0.01..10.0)).unwrap();
        let (pr, pc) = SimilarityMap::new(v).argmax();
        let (lo_r, hi_r) = (pr.saturating_sub(2) as f64, (pr + 2).min(r - 1) as f64);
        let (lo_c, hi_c) = (pc.saturating_sub(2) as f64, (pc + 2).min(c - 1) as f64);
        ok &= w.y >= lo_r && w.y <= hi_r && w.x >= lo_c && w.x <= hi_c;
    }
    ok &= worst_uniform <= 1e-12 && worst_sharp <= 1e-3;
    (
        ok,
        format!("uniform error {worst_uniform:.1e}, sharpened error {worst_sharp:.1e}, window-5 results inside window"),
    )
}

fn protocol_constants() -> Outcome {
    let test = PoseSamplingSpec::for_split(Split::Test);
    let train = PoseSamplingSpec::for_split(Split::Train);
    let cam = CameraModel::from_hfov(test.fov_deg, test.image_size.0, test.image_size.1).unwrap();
    let params = SceneParams::for_split(Split::Test);
    let ext = params.region.extent();
    let boxes = candidate_boxes(&params.region, 50.0, 25.0).len();
    let cfg = PipelineConfig::default();
    let checks = [
        ("288 test images", test.image_count() == 288),
        ("768 train images", train.image_count() == 768),
        ("8 yaws", test.yaw_count == 8 && train.yaw_count == 8),
        ("2 pitches", test.pitches_deg.len() == 2 && train.pitches_deg.len() == 2),
        ("train heights", train.heights == vec![6.0, 7.0, 8.0]),
        ("test heights", test.heights == vec![6.5, 7.5]),
        ("fx 960 at 1920", cam.fx == 960.0 && cam.width == CAPTURE_WIDTH && CAPTURE_WIDTH == 1920),
        ("crop 100x100x50", ext == Vector3::new(100.0, 100.0, 50.0)),
        ("voxel 50/25", cfg.scene.voxel_size == 50.0 && cfg.scene.voxel_stride == 25.0),
        ("9 boxes", boxes == 9),
        ("downsample 0.2", params.downsample_resolution == 0.2),
        (
            "48 positions give 768",
            PoseSamplingSpec::for_split(Split::Train).with_position_count(48).unwrap().image_count() == 768,
        ),
    ];
    let bad: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let scene = generate_scene(7, &params).unwrap();
    let gen_ok = scene.cameras.len() == 288;
    (
        bad.is_empty() && gen_ok,
        if bad.is_empty() {
            format!("{} constants exact, generated scene has {} cameras", checks.len(), scene.cameras.len())
        } else {
            format!("mismatched: {}", bad.join(", "))
        },
    )
}

fn metric_correctness() -> Outcome {
    let gt = Pose::from_axis_angle(Vector3::new(0.2, -0.4, 0.1), Vector3::new(1.0, -2.0, 3.0));
    let mut ok = registration_errors(&gt, &gt) == (0.0, 0.0);
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), 5f64.to_radians());
    let pred = Pose::new(gt.rotation * rz.matrix(), gt.translation).unwrap();
    let (rre, rte) = registration_errors(&pred, &gt);
    ok &= (rre - 5.0).abs() < 1e-12 && rte == 0.0;
    let shifted = Pose::new(gt.rotation, gt.translation + Vector3::new(1.0, 2.0, 2.0)).unwrap();
    ok &= registration_errors(&shifted, &gt).1 == 3.0;

    let eval = EvalConfig::default();
    let res = |rre: f64, rte: f64| RegistrationResult {
        rre,
        rte,
        ..RegistrationResult::failed(0)
    };
    ok &= registration_recall(&[res(0.0, 0.0), res(0.0, 0.0)], &eval).unwrap() == 1.0;
    ok &= registration_recall(&[res(0.0, 0.0), res(20.0, 0.0)], &eval).unwrap() == 0.5;
    ok &= registration_recall(&[res(eval.tau_r, 0.0)], &eval).unwrap() == 0.0;
    ok &= registration_recall(&[res(0.0, eval.tau_t)], &eval).unwrap() == 0.0;
    ok &= registration_recall(&[], &eval).is_err();

    let rs = [res(1.0, 4.0), res(2.0, 1.0), res(9.0, 2.0), res(4.0, 3.0)];
    let m = summarize(&rs, &eval).unwrap();
    ok &= m.median_rre == 3.0 && m.mean_rre == 4.0 && m.median_rte == 2.5 && m.mean_rte == 2.5;
    (ok, format!("single-axis RRE {rre}, RTE 3.0, strict boundary, median/mean {:?}", (m.median_rre, m.mean_rre)))
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Runs every command into `root` with a pool of `threads` workers.
fn run_all(root: &Path, threads: usize) -> Vec<(String, i32)> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let scene = root.join("scene");
    let cfg_path = root.join("small.toml");
    std::fs::write(&cfg_path, "[input]\ngroups = 128\n\n[scene]\npositions = 2\n").unwrap();
    let commands: Vec<Vec<String>> = vec![
        vec!["gen-scene".into(), "--seed".into(), "11".into(), "--positions".into(), "2".into(), "--out".into(), s(&scene)],
        vec![
            "synth-features".into(),
            "--scene".into(),
            s(&scene),
            "--image".into(),
            "3".into(),
            "--noise".into(),
            "0.1".into(),
            "--outlier-rate".into(),
            "0.3".into(),
            "--out".into(),
            s(&root.join("features")),
        ],
        vec![
            "pipeline".into(),
            "--scene".into(),
            s(&scene),
            "--bypass-fusion".into(),
            "--dump-sim-maps".into(),
            "--noise".into(),
            "0.1".into(),
            "--outlier-rate".into(),
            "0.3".into(),
            "--threads".into(),
            threads.to_string(),
            "--out".into(),
            s(&root.join("run")),
        ],
        vec![
            "pipeline".into(),
            "--config".into(),
            s(&cfg_path),
            "--seed".into(),
            "12".into(),
            "--threads".into(),
            threads.to_string(),
            "--out".into(),
            s(&root.join("fused")),
        ],
        vec![
            "gradcheck".into(),
            "--trials".into(),
            "10".into(),
            "--out".into(),
            s(&root.join("gradcheck.json")),
        ],
        vec![
            "eval".into(),
            "--results".into(),
            s(&root.join("run").join("results.jsonl")),
            "--out".into(),
            s(&root.join("eval.json")),
        ],
        vec![
            "viz".into(),
            "--scene".into(),
            s(&scene),
            "--results".into(),
            s(&root.join("run").join("results.jsonl")),
            "--image".into(),
            "5".into(),
            "--bypass-fusion".into(),
            "--out".into(),
            s(&root.join("viz")),
        ],
    ];
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    commands
        .into_iter()
        .map(|c| {
            let name = c[0].clone();
            let args: Vec<String> = std::iter::once("i2preg".to_string()).chain(c).collect();
            (name, pool.install(|| cli::run(args)))
        })
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let runs = [("a", 1), ("b", 1), ("c", 8)];
    let mut trees = Vec::new();
    for (name, threads) in runs {
        let root = tmp.path().join(name);
        std::fs::create_dir_all(&root).unwrap();
        let codes = run_all(&root, threads);
        if let Some((cmd, code)) = codes.iter().find(|c| c.1 != 0) {
            return (false, format!("{cmd} exited {code} in run {name}"));
        }
        trees.push(files_under(&root));
    }
    let files = trees[0].len();
    for (i, t) in trees.iter().enumerate().skip(1) {
        if t.keys().ne(trees[0].keys()) {
            return (false, format!("run {i} wrote a different file set"));
        }
        if let Some((p, _)) = t.iter().find(|(p, bytes)| trees[0][*p] != **bytes) {
            return (false, format!("{} differs in run {i}", p.display()));
        }
    }
    (files > 10, format!("{files} files byte-identical across 2 runs at 1 thread and 1 run at 8 threads"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("oracle end-to-end", oracle_end_to_end),
        ("robust end-to-end", robust_end_to_end),
        ("EPnP oracle", epnp_oracle),
        ("gradient suite", gradient_suite),
        ("attention mask properties", gal_properties),
        ("soft-argmax limits", soft_argmax_limits),
        ("protocol constants", protocol_constants),
        ("metric correctness", metric_correctness),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (ok, detail) = f();
        println!("criterion {}: {} {name}: {detail}", i + 1, if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
