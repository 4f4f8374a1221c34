//! Command-line front end. [`run`] parses arguments, executes one
//! subcommand and returns the process exit code.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::gradcheck::{check_loss, GradcheckConfig, LossKind, TrialResult, DEFAULT_TOLERANCE};
use crate::io::{
    read_results, write_correspondences, write_json, write_ppm, write_results, write_tensor_blob,
    CorrespondenceLine,
};
use crate::pipeline::{
    image_inputs, load_scene, prepare_scene, register_image, run_scenes, save_scene, scene_params,
    PipelineContext, RunSummary,
};
use crate::pose::{summarize, MetricSummary};
use crate::scenegen::{generate_scene, SceneBundle, Split};
use crate::viz::{render_correspondences, render_depth};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "i2preg", version, about = "Image-to-point-cloud registration toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a scene: cloud.ply, cameras.jsonl, scene.json.
    GenScene(GenSceneArgs),
    /// Write the oracle features and ground-truth pairs of one image.
    SynthFeatures(SynthArgs),
    /// Register every image of one or more scenes.
    Pipeline(PipelineArgs),
    /// Finite-difference checks of the loss gradients.
    Gradcheck(GradcheckArgs),
    /// Recompute metrics from a results file.
    Eval(EvalArgs),
    /// Render the projected cloud and the correspondences of one image.
    Viz(VizArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scene seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, group = "split")]
    pub test_split: bool,
    #[arg(long, group = "split")]
    pub train_split: bool,
    #[arg(long, group = "split")]
    pub hard_split: bool,
    /// Number of camera positions (xy grid points × heights).
    #[arg(long)]
    pub positions: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Descriptor noise scale.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Fraction of visible groups with corrupted descriptors.
    #[arg(long)]
    pub outlier_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenSceneArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub oracle: OracleArgs,
    /// Scene directory; generated from the seed when absent.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Camera index within the scene.
    #[arg(long, default_value_t = 0)]
    pub image: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub oracle: OracleArgs,
    /// Scene directories; scenes are generated from the seed when none is given.
    #[arg(long)]
    pub scene: Vec<PathBuf>,
    /// Number of generated scenes (seeds `seed`, `seed + 1`, ...).
    #[arg(long)]
    pub scenes: Option<usize>,
    /// Match oracle features directly, skipping the fusion forward.
    #[arg(long)]
    pub bypass_fusion: bool,
    /// Write coarse similarity maps as PGM under `<out>/sim_maps`.
    #[arg(long)]
    pub dump_sim_maps: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Check a single loss and print every trial.
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    /// Negate the analytic gradients; every check should then fail.
    #[arg(long)]
    pub inject_sign_flip: bool,
    /// Write all trial records as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Rotation threshold, degrees.
    #[arg(long)]
    pub tau_r: Option<f64>,
    /// Translation threshold, meters.
    #[arg(long)]
    pub tau_t: Option<f64>,
    /// Write the summary as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[command(flatten)]
    pub oracle: OracleArgs,
    #[arg(long)]
    pub scene: PathBuf,
    /// Results file holding the pose to render the cloud with.
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Camera index within the scene; also the result id looked up.
    #[arg(long, default_value_t = 0)]
    pub image: usize,
    #[arg(long)]
    pub bypass_fusion: bool,
    /// Draw the oracle's exact pairs instead of the predicted matches.
    #[arg(long)]
    pub ground_truth: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            }
        }
    }
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::GenScene(a) => gen_scene(a),
        Command::SynthFeatures(a) => synth_features(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Eval(a) => eval(a),
        Command::Viz(a) => viz(a),
    }
}

fn base_config(c: &ConfigArgs) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.scene.seed = s;
    }
    Ok(cfg)
}

fn apply_split(cfg: &mut PipelineConfig, s: &SplitArgs) {
    if s.test_split {
        cfg.scene.split = Split::Test;
    } else if s.train_split {
        cfg.scene.split = Split::Train;
    } else if s.hard_split {
        cfg.scene.split = Split::Hard;
    }
    if s.positions.is_some() {
        cfg.scene.positions = s.positions;
    }
}

fn apply_oracle(cfg: &mut PipelineConfig, o: &OracleArgs) {
    if let Some(n) = o.noise {
        cfg.oracle.noise_sigma = n;
    }
    if let Some(r) = o.outlier_rate {
        cfg.oracle.outlier_rate = r;
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn generate(cfg: &PipelineConfig, seed: u64) -> Result<SceneBundle> {
    generate_scene(seed, &scene_params(cfg)?)
}

fn gen_scene(a: GenSceneArgs) -> Result<i32> {
    let mut cfg = base_config(&a.cfg)?;
    apply_split(&mut cfg, &a.split);
    let bundle = generate(&cfg, cfg.scene.seed)?;
    let meta = save_scene(&a.out, cfg.scene.seed, cfg.scene.split, &bundle)?;
    println!(
        "scene seed {} split {:?}: {} points, {} cameras -> {}",
        meta.seed,
        meta.split,
        meta.points,
        meta.cameras,
        a.out.display()
    );
    Ok(EXIT_OK)
}

fn scene_for(cfg: &PipelineConfig, dir: Option<&Path>) -> Result<(u64, SceneBundle)> {
    match dir {
        Some(d) => load_scene(d).map(|(m, b)| (m.seed, b)),
        None => generate(cfg, cfg.scene.seed).map(|b| (cfg.scene.seed, b)),
    }
}

fn synth_features(a: SynthArgs) -> Result<i32> {
    let mut cfg = base_config(&a.cfg)?;
    apply_split(&mut cfg, &a.split);
    apply_oracle(&mut cfg, &a.oracle);
    cfg.validate()?;
    let (seed, bundle) = scene_for(&cfg, a.scene.as_deref())?;
    if a.image >= bundle.cameras.len() {
        return Err(Error::InvalidArgument(format!(
            "image {} out of {} cameras",
            a.image,
            bundle.cameras.len()
        )));
    }
    let scene = prepare_scene(bundle, seed, &cfg)?;
    let Some(inputs) = image_inputs(&cfg, &scene, a.image)? else {
        return Err(Error::NoVisibleGroups);
    };
    mkdir(&a.out)?;
    let f = &inputs.oracle.features;
    let tensors = [
        ("coarse_image", &f.coarse_image),
        ("coarse_points", &f.coarse_points),
        ("fine_image", &f.fine_image),
        ("fine_points", &f.fine_points),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.clone()))
    .collect();
    let blob = a.out.join("features.bin");
    let file = std::fs::File::create(&blob).map_err(|e| Error::io(&blob, e))?;
    write_tensor_blob(std::io::BufWriter::new(file), &tensors).map_err(|e| Error::io(&blob, e))?;
    let gt: Vec<CorrespondenceLine> = inputs
        .oracle
        .ground_truth
        .pairs
        .iter()
        .map(|c| CorrespondenceLine {
            point_index: inputs.voxel.indices[c.point_index],
            pixel: c.pixel,
            confidence: c.confidence,
        })
        .collect();
    write_correspondences(&a.out.join("ground_truth.jsonl"), &gt)?;
    let groups = serde_json::json!({
        "image": a.image,
        "fine_rows": f.fine_rows,
        "fine_cols": f.fine_cols,
        "centers": inputs.voxel.groups.centers.iter().map(|c| [c.x, c.y, c.z]).collect::<Vec<_>>(),
        "center_indices": inputs.voxel.groups.center_indices.iter().map(|&i| inputs.voxel.indices[i]).collect::<Vec<_>>(),
        "in_frustum": inputs.oracle.in_frustum,
        "outlier_groups": inputs.oracle.outlier_groups,
    });
    write_json(&a.out.join("groups.json"), &groups)?;
    println!(
        "image {}: {} groups, {} visible, {} outliers -> {}",
        a.image,
        inputs.voxel.groups.len(),
        gt.len(),
        inputs.oracle.outlier_groups.len(),
        a.out.display()
    );
    Ok(EXIT_OK)
}

fn print_metrics(m: &MetricSummary, tau_r: f64, tau_t: f64) {
    println!("images {}  solved {}", m.images, m.solved);
    println!("RR {:.2}% (tau_r {tau_r} deg, tau_t {tau_t} m)", 100.0 * m.recall);
    println!("RRE median {:.4} deg  mean {:.4} deg", m.median_rre, m.mean_rre);
    println!("RTE median {:.4} m  mean {:.4} m", m.median_rte, m.mean_rte);
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::InvalidArgument("--threads must be >= 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn pipeline(a: PipelineArgs) -> Result<i32> {
    let mut cfg = base_config(&a.cfg)?;
    apply_split(&mut cfg, &a.split);
    apply_oracle(&mut cfg, &a.oracle);
    if let Some(n) = a.scenes {
        cfg.scene.scenes = n;
    }
    cfg.run.bypass_fusion |= a.bypass_fusion;
    cfg.run.dump_sim_maps |= a.dump_sim_maps;
    mkdir(&a.out)?;
    let sim_dir = a.out.join("sim_maps");
    if cfg.run.dump_sim_maps {
        mkdir(&sim_dir)?;
    }
    let ctx = PipelineContext::new(&cfg, Some(&sim_dir))?;
    let scenes = if a.scene.is_empty() {
        (0..cfg.scene.scenes as u64)
            .map(|k| {
                let seed = cfg.scene.seed + k;
                generate(&cfg, seed).map(|b| (seed, b))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        a.scene
            .iter()
            .map(|d| load_scene(d).map(|(m, b)| (m.seed, b)))
            .collect::<Result<Vec<_>>>()?
    };
    let out = with_threads(a.threads, || run_scenes(&ctx, scenes))??;
    std::fs::write(a.out.join("config.toml"), cfg.to_text()?).map_err(|e| Error::io(&a.out, e))?;
    write_results(&a.out.join("results.jsonl"), &out.results())?;
    write_json(&a.out.join("summary.json"), &out.summary)?;
    report(&out.summary, &cfg);
    Ok(EXIT_OK)
}

fn report(s: &RunSummary, cfg: &PipelineConfig) {
    for sc in &s.scenes {
        println!(
            "scene seed {}: {} points, {} images from id {}, {} voxels",
            sc.seed, sc.points, sc.images, sc.first_image_id, sc.voxels_used
        );
    }
    print_metrics(&s.metrics, cfg.eval.tau_r, cfg.eval.tau_t);
    if s.outlier_pairs > 0 {
        println!(
            "outlier pairs {}  kept as inliers {} ({:.2}% rejected)",
            s.outlier_pairs,
            s.outlier_inliers,
            100.0 * (1.0 - s.outlier_inliers as f64 / s.outlier_pairs as f64)
        );
    }
    if let Some(g) = s.mean_gal_loss {
        println!("mean attention loss {g:.6}");
    }
}

fn gradcheck(a: GradcheckArgs) -> Result<i32> {
    let cfg = GradcheckConfig {
        trials: a.trials,
        seed: a.seed,
        tolerance: a.tolerance,
        inject_sign_flip: a.inject_sign_flip,
        ..GradcheckConfig::default()
    };
    let kinds: Vec<LossKind> = match a.loss {
        Some(k) => vec![k],
        None => LossKind::ALL.to_vec(),
    };
    let mut all: Vec<TrialResult> = Vec::new();
    let mut failed = false;
    for k in kinds {
        let trials = check_loss(k, &cfg)?;
        if a.loss.is_some() {
            println!("{:<6} {:>5} {:>5} {:>14} {:>14} {:>12}  ok", "loss", "trial", "dim", "|analytic|", "|numeric|", "rel_err");
            for t in &trials {
                println!(
                    "{:<6} {:>5} {:>5} {:>14.6e} {:>14.6e} {:>12.3e}  {}",
                    t.loss,
                    t.trial,
                    t.dim,
                    t.analytic_norm,
                    t.numeric_norm,
                    t.rel_error,
                    if t.pass { "yes" } else { "NO" }
                );
            }
        }
        let passed = trials.iter().filter(|t| t.pass).count();
        let worst = trials.iter().map(|t| t.rel_error).fold(0.0, f64::max);
        println!(
            "{k}: {passed}/{} trials within {:e} (worst {worst:.3e})",
            trials.len(),
            cfg.tolerance
        );
        failed |= passed < trials.len();
        all.extend(trials);
    }
    if let Some(p) = &a.out {
        write_json(p, &all)?;
    }
    Ok(if failed { EXIT_CHECK } else { EXIT_OK })
}

fn eval(a: EvalArgs) -> Result<i32> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(t) = a.tau_r {
        cfg.eval.tau_r = t;
    }
    if let Some(t) = a.tau_t {
        cfg.eval.tau_t = t;
    }
    cfg.eval.validate()?;
    let results: Vec<_> = read_results(&a.results)?.iter().map(|l| l.to_result()).collect();
    let m = summarize(&results, &cfg.eval)?;
    print_metrics(&m, cfg.eval.tau_r, cfg.eval.tau_t);
    if let Some(p) = &a.out {
        write_json(p, &m)?;
    }
    Ok(EXIT_OK)
}

fn viz(a: VizArgs) -> Result<i32> {
    let mut cfg = base_config(&a.cfg)?;
    apply_oracle(&mut cfg, &a.oracle);
    cfg.run.bypass_fusion |= a.bypass_fusion;
    cfg.run.dump_sim_maps = false;
    let (meta, bundle) = load_scene(&a.scene)?;
    let Some(record) = bundle.cameras.get(a.image).copied() else {
        return Err(Error::InvalidArgument(format!(
            "image {} out of {} cameras",
            a.image,
            bundle.cameras.len()
        )));
    };
    mkdir(&a.out)?;
    let cam = record.camera.resized(cfg.input.width, cfg.input.height);

    let pose = match &a.results {
        Some(p) => read_results(p)?
            .iter()
            .find(|l| l.image_id == a.image as u64)
            .map(|l| l.to_result().pose),
        None => Some(record.pose),
    };
    match pose {
        Some(pose) => {
            let d = render_depth(&bundle.cloud, &cam, &pose);
            let path = a.out.join(format!("depth_{:05}.ppm", a.image));
            write_ppm(&path, d.raster.width, d.raster.height, &d.raster.rgb)?;
            println!("{}: {} projected points, {} pixels", path.display(), d.visible, d.raster.lit());
        }
        None => eprintln!("warning: no pose for image {} in results; skipping projection", a.image),
    }

    let ctx = PipelineContext::new(&cfg, None)?;
    let scene = prepare_scene(bundle, meta.seed, &cfg)?;
    let outcome = register_image(&ctx, &scene, a.image, a.image as u64)?;
    let set = if a.ground_truth { &outcome.ground_truth } else { &outcome.matches };
    let pairs: Vec<_> = set.pairs.iter().map(|c| (c.point, c.pixel)).collect();
    let r = render_correspondences(&cam, &record.pose, &pairs, cfg.ransac.reprojection_threshold);
    let path = a.out.join(format!("matches_{:05}.ppm", a.image));
    write_ppm(&path, r.raster.width, r.raster.height, &r.raster.rgb)?;
    println!("{}: {} correct, {} wrong", path.display(), r.correct, r.wrong);
    Ok(EXIT_OK)
}
