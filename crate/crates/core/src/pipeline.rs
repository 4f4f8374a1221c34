//! End-to-end registration over generated scenes: voxel partitioning,
//! grouping, oracle features, optional fusion, coarse-to-fine matching,
//! robust pose estimation and metrics.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use ndarray::Axis;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{fusion_forward, gal_loss, gal_masks, AttentionMap, Direction, FusionParams};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::grouping::{farthest_point_sampling, GroupSet, PatchGrid};
use crate::io::{read_cameras, read_json, read_ply, to_gray, write_cameras, write_json, write_pgm, write_ply};
use crate::matching::{
    coarse_match, coarse_similarity_maps, fine_match, superpoint_filter, CorrespondenceSet, FeatureSet,
};
use crate::pose::{epnp_ransac, summarize, MetricSummary, PointPixel, RegistrationResult};
use crate::geom::CameraModel;
use crate::scenegen::{
    generate_scene, OracleOutput, partition_voxels, synthesize_oracle_features, visible_fraction, Aabb, PointCloud, SceneBundle,
    SceneParams, Split,
};

/// SplitMix64 finalizer, used to derive independent per-item seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scene parameters for the configured split and position count.
pub fn scene_params(cfg: &PipelineConfig) -> Result<SceneParams> {
    let mut p = SceneParams::for_split(cfg.scene.split);
    if let Some(n) = cfg.scene.positions {
        p.sampling = p.sampling.with_position_count(n)?;
    }
    Ok(p)
}

/// One voxel's subsampled cloud and its point groups.
#[derive(Debug, Clone)]
pub struct PreparedVoxel {
    pub bounds: Aabb,
    /// Indices into the scene cloud.
    pub indices: Vec<usize>,
    pub cloud: PointCloud,
    pub groups: GroupSet,
}

#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub seed: u64,
    pub bundle: SceneBundle,
    pub voxels: Vec<Option<PreparedVoxel>>,
    /// Voxel used by each camera.
    pub image_voxel: Vec<Option<usize>>,
}

/// Partitions the scene, picks a voxel per camera and groups the voxels in use.
///
/// A camera uses the associated voxel with the largest visible fraction;
/// when no voxel passes the association cutoff it falls back to the best
/// voxel overall, and gets none if it sees no voxel point at all.
pub fn prepare_scene(bundle: SceneBundle, seed: u64, cfg: &PipelineConfig) -> Result<PreparedScene> {
    let part = partition_voxels(&bundle.cloud, &bundle.region, cfg.scene.voxel_size, cfg.scene.voxel_stride)?;
    let cutoff = cfg.scene.association_fraction;
    let image_voxel: Vec<Option<usize>> = bundle
        .cameras
        .par_iter()
        .map(|cam| {
            let fr: Vec<f64> = part
                .voxels
                .iter()
                .map(|(_, idx)| visible_fraction(&bundle.cloud, idx, cam))
                .collect();
            let best = |pred: &dyn Fn(f64) -> bool| {
                let mut b: Option<(usize, f64)> = None;
                for (v, &f) in fr.iter().enumerate() {
                    if pred(f) && b.is_none_or(|(_, bf)| f > bf) {
                        b = Some((v, f));
                    }
                }
                b.map(|(v, _)| v)
            };
            best(&|f| f > cutoff).or_else(|| best(&|f| f > 0.0))
        })
        .collect();
    let used: HashSet<usize> = image_voxel.iter().flatten().copied().collect();
    let voxels = part
        .voxels
        .par_iter()
        .enumerate()
        .map(|(v, (bounds, idx))| {
            if !used.contains(&v) {
                return Ok(None);
            }
            let indices: Vec<usize> = if idx.len() > cfg.input.points {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, v as u64));
                let mut pick: Vec<usize> = sample(&mut rng, idx.len(), cfg.input.points)
                    .into_iter()
                    .map(|i| idx[i])
                    .collect();
                pick.sort_unstable();
                pick
            } else {
                idx.clone()
            };
            let cloud = bundle.cloud.select(&indices)?;
            let m = cfg.input.groups.min(cloud.len());
            let groups = farthest_point_sampling(&cloud, m, cfg.input.fps_seed_index.min(cloud.len() - 1))?;
            Ok(Some(PreparedVoxel {
                bounds: *bounds,
                indices,
                cloud,
                groups,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedScene {
        seed,
        bundle,
        voxels,
        image_voxel,
    })
}

/// Everything produced while registering one image.
#[derive(Debug, Clone)]
pub struct ImageOutcome {
    pub result: RegistrationResult,
    pub kept_groups: usize,
    /// Fine-level predicted pairs fed to the solver.
    pub matches: CorrespondenceSet,
    pub ground_truth: CorrespondenceSet,
    pub outlier_groups: Vec<usize>,
    /// Injected-outlier pairs that ended up among the solver inliers.
    pub outlier_inliers: usize,
    pub gal_loss: Option<f64>,
}

/// Shared read-only state for a pipeline run.
pub struct PipelineContext<'a> {
    pub cfg: &'a PipelineConfig,
    pub fusion_params: Option<FusionParams>,
    pub dump_dir: Option<PathBuf>,
}

impl<'a> PipelineContext<'a> {
    pub fn new(cfg: &'a PipelineConfig, dump_dir: Option<&Path>) -> Result<Self> {
        cfg.validate()?;
        let fusion_params = if cfg.run.bypass_fusion {
            None
        } else {
            Some(FusionParams::seeded(&cfg.fusion, cfg.run.fusion_param_seed)?)
        };
        Ok(Self {
            cfg,
            fusion_params,
            dump_dir: if cfg.run.dump_sim_maps { dump_dir.map(Path::to_path_buf) } else { None },
        })
    }
}

fn failed_outcome(image_id: u64, gt: &crate::geom::Pose, cfg: &PipelineConfig) -> ImageOutcome {
    let mut result = RegistrationResult::failed(image_id);
    result.evaluate(gt, &cfg.eval);
    ImageOutcome {
        result,
        kept_groups: 0,
        matches: CorrespondenceSet::default(),
        ground_truth: CorrespondenceSet::default(),
        outlier_groups: Vec::new(),
        outlier_inliers: 0,
        gal_loss: None,
    }
}

/// Runs fusion on the coarse features and returns the GAL loss of its
/// last-block attention against the ground-truth geometry of in-frustum groups.
fn fuse(
    ctx: &PipelineContext,
    params: &FusionParams,
    features: &mut FeatureSet,
    groups: &GroupSet,
    in_frustum: &[bool],
    record: &crate::scenegen::CameraRecord,
    cam: &CameraModel,
    grid: &PatchGrid,
) -> Result<f64> {
    let cfg = ctx.cfg;
    let out = fusion_forward(
        &features.coarse_image,
        &features.coarse_points,
        grid,
        &groups.centers,
        params,
        &cfg.fusion,
    )?;
    let vis: Vec<usize> = (0..groups.len()).filter(|&g| in_frustum[g]).collect();
    let centers: Vec<Vector3<f64>> = vis.iter().map(|&g| groups.centers[g]).collect();
    let (mi, mp) = gal_masks(cam, &record.pose, grid, &centers, &cfg.gal)?;
    let heads: Vec<(AttentionMap, AttentionMap)> = if cfg.gal.per_head {
        out.i2p_heads
            .iter()
            .zip(&out.p2i_heads)
            .map(|(a, b)| (a.clone(), b.clone()))
            .map(|(a, b)| {
                (
                    AttentionMap {
                        logits: a,
                        direction: Direction::I2P,
                    },
                    AttentionMap {
                        logits: b,
                        direction: Direction::P2I,
                    },
                )
            })
            .collect()
    } else {
        vec![(out.i2p.clone(), out.p2i.clone())]
    };
    let mut loss = 0.0;
    for (a, b) in heads {
        let a = AttentionMap {
            logits: a.logits.select(Axis(1), &vis),
            direction: Direction::I2P,
        };
        let b = AttentionMap {
            logits: b.logits.select(Axis(0), &vis),
            direction: Direction::P2I,
        };
        loss += gal_loss(&a, &b, &mi, &mp)?.loss;
    }
    features.coarse_image = out.image;
    features.coarse_points = out.points;
    features.normalize()?;
    Ok(loss)
}

/// Oracle inputs of one image: the voxel it uses, its resized camera and
/// the synthesized features. `None` when the image sees no usable voxel.
pub struct ImageInputs<'s> {
    pub voxel: &'s PreparedVoxel,
    pub camera: CameraModel,
    pub grid: PatchGrid,
    pub seed: u64,
    pub oracle: OracleOutput,
}

pub fn image_inputs<'s>(cfg: &PipelineConfig, scene: &'s PreparedScene, index: usize) -> Result<Option<ImageInputs<'s>>> {
    let record = scene
        .bundle
        .cameras
        .get(index)
        .ok_or_else(|| Error::InvalidArgument(format!("image {index} out of {}", scene.bundle.cameras.len())))?;
    let Some(voxel) = scene.image_voxel[index].and_then(|v| scene.voxels[v].as_ref()) else {
        return Ok(None);
    };
    let camera = record.camera.resized(cfg.input.width, cfg.input.height);
    let grid = PatchGrid::new(cfg.input.width, cfg.input.height, cfg.input.patch_size)?;
    let seed = mix_seed(scene.seed, record.id as u64);
    match synthesize_oracle_features(&voxel.cloud, &voxel.groups, &camera, &record.pose, &grid, &cfg.oracle, seed) {
        Ok(oracle) => Ok(Some(ImageInputs {
            voxel,
            camera,
            grid,
            seed,
            oracle,
        })),
        Err(Error::NoVisibleGroups) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Registers camera `index` of a prepared scene. `image_id` labels the result.
pub fn register_image(ctx: &PipelineContext, scene: &PreparedScene, index: usize, image_id: u64) -> Result<ImageOutcome> {
    let cfg = ctx.cfg;
    let record = &scene.bundle.cameras[index];
    let Some(ImageInputs {
        voxel,
        camera: cam,
        grid,
        seed,
        oracle,
    }) = image_inputs(cfg, scene, index)?
    else {
        return Ok(failed_outcome(image_id, &record.pose, cfg));
    };
    let mut features = oracle.features;
    let gal = match &ctx.fusion_params {
        Some(params) => Some(fuse(
            ctx,
            params,
            &mut features,
            &voxel.groups,
            &oracle.in_frustum,
            record,
            &cam,
            &grid,
        )?),
        None => None,
    };

    // The oracle detection head is exact: scores are the in-frustum labels.
    let scores: Vec<f64> = oracle.in_frustum.iter().map(|&b| f64::from(u8::from(b))).collect();
    let filter = superpoint_filter(
        &scores,
        cfg.matching.superpoint_threshold,
        &voxel.groups,
        &cam,
        &record.pose,
    )?;
    if filter.kept.is_empty() {
        return Ok(failed_outcome(image_id, &record.pose, cfg));
    }
    let coarse = coarse_match(
        &features,
        &filter.kept,
        &voxel.groups,
        &grid,
        cfg.matching.coarse_window,
        cfg.matching.coarse_temperature,
    )?;
    if let Some(dir) = &ctx.dump_dir {
        let take: Vec<usize> = filter.kept.iter().take(cfg.run.dump_limit).copied().collect();
        for (g, map) in take.iter().zip(coarse_similarity_maps(&features, &take, &grid)?) {
            let path = dir.join(format!("image{image_id:05}_group{g:04}.pgm"));
            write_pgm(&path, grid.cols, grid.rows, &to_gray(&map.values, -1.0, 1.0))?;
        }
    }
    let fine = fine_match(&features, &coarse, cfg.matching.fine_window_w, cfg.matching.fine_temperature)?;
    let pairs: Vec<PointPixel> = fine
        .matches
        .pairs
        .iter()
        .map(|c| PointPixel {
            point: c.point,
            pixel: c.pixel,
        })
        .collect();

    let mut result = if pairs.len() >= 4 {
        let ransac_cfg = crate::pose::RansacConfig {
            seed: mix_seed(cfg.ransac.seed, seed),
            ..cfg.ransac.clone()
        };
        epnp_ransac(&pairs, &cam, &ransac_cfg)?
    } else {
        RegistrationResult::failed(image_id)
    };
    result.image_id = image_id;
    result.evaluate(&record.pose, &cfg.eval);

    let outliers: HashSet<usize> = oracle.outlier_groups.iter().copied().collect();
    let outlier_inliers = result
        .inlier_ids
        .iter()
        .filter(|&&i| outliers.contains(&fine.matches.pairs[i].group))
        .count();
    Ok(ImageOutcome {
        result,
        kept_groups: filter.kept.len(),
        matches: fine.matches,
        ground_truth: oracle.ground_truth,
        outlier_groups: oracle.outlier_groups,
        outlier_inliers,
        gal_loss: gal,
    })
}

/// Per-scene bookkeeping in a run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub seed: u64,
    pub points: usize,
    pub images: usize,
    pub first_image_id: u64,
    pub voxels_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenes: Vec<SceneReport>,
    pub metrics: MetricSummary,
    /// Injected outlier pairs among matches and among solver inliers.
    pub outlier_pairs: usize,
    pub outlier_inliers: usize,
    pub mean_gal_loss: Option<f64>,
}

pub struct RunOutput {
    pub outcomes: Vec<ImageOutcome>,
    pub summary: RunSummary,
}

impl RunOutput {
    pub fn results(&self) -> Vec<RegistrationResult> {
        self.outcomes.iter().map(|o| o.result.clone()).collect()
    }
}

/// Registers every camera of every scene. Image ids are consecutive across
/// scenes in scene order; outcomes are returned in that order regardless
/// of thread count.
pub fn run_scenes(ctx: &PipelineContext, scenes: Vec<(u64, SceneBundle)>) -> Result<RunOutput> {
    let mut outcomes = Vec::new();
    let mut reports = Vec::new();
    for (seed, bundle) in scenes {
        let prep = prepare_scene(bundle, seed, ctx.cfg)?;
        let first = outcomes.len() as u64;
        let n = prep.bundle.cameras.len();
        let out: Vec<ImageOutcome> = (0..n)
            .into_par_iter()
            .map(|i| register_image(ctx, &prep, i, first + i as u64))
            .collect::<Result<_>>()?;
        reports.push(SceneReport {
            seed,
            points: prep.bundle.cloud.len(),
            images: n,
            first_image_id: first,
            voxels_used: prep.voxels.iter().flatten().count(),
        });
        outcomes.extend(out);
    }
    let results: Vec<RegistrationResult> = outcomes.iter().map(|o| o.result.clone()).collect();
    let metrics = summarize(&results, &ctx.cfg.eval)?;
    let outlier_pairs = outcomes
        .iter()
        .map(|o| {
            let s: HashSet<usize> = o.outlier_groups.iter().copied().collect();
            o.matches.pairs.iter().filter(|c| s.contains(&c.group)).count()
        })
        .sum();
    let gal: Vec<f64> = outcomes.iter().filter_map(|o| o.gal_loss).collect();
    Ok(RunOutput {
        summary: RunSummary {
            scenes: reports,
            metrics,
            outlier_pairs,
            outlier_inliers: outcomes.iter().map(|o| o.outlier_inliers).sum(),
            mean_gal_loss: (!gal.is_empty()).then(|| gal.iter().sum::<f64>() / gal.len() as f64),
        },
        outcomes,
    })
}

/// Generates the configured scenes (`seed`, `seed + 1`, ...) and registers them.
pub fn run_generated(ctx: &PipelineContext) -> Result<RunOutput> {
    let params = scene_params(ctx.cfg)?;
    let scenes = (0..ctx.cfg.scene.scenes as u64)
        .map(|k| {
            let seed = ctx.cfg.scene.seed + k;
            generate_scene(seed, &params).map(|b| (seed, b))
        })
        .collect::<Result<Vec<_>>>()?;
    run_scenes(ctx, scenes)
}

pub const CLOUD_FILE: &str = "cloud.ply";
pub const CAMERAS_FILE: &str = "cameras.jsonl";
pub const SCENE_FILE: &str = "scene.json";

/// Contents of `scene.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub seed: u64,
    pub split: Split,
    pub points: usize,
    pub cameras: usize,
    pub region: Aabb,
}

/// Writes a scene directory: cloud, cameras and metadata.
pub fn save_scene(dir: &Path, seed: u64, split: Split, bundle: &SceneBundle) -> Result<SceneMeta> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_ply(&dir.join(CLOUD_FILE), &bundle.cloud)?;
    write_cameras(&dir.join(CAMERAS_FILE), &bundle.cameras)?;
    let meta = SceneMeta {
        seed,
        split,
        points: bundle.cloud.len(),
        cameras: bundle.cameras.len(),
        region: bundle.region,
    };
    write_json(&dir.join(SCENE_FILE), &meta)?;
    Ok(meta)
}

pub fn load_scene(dir: &Path) -> Result<(SceneMeta, SceneBundle)> {
    let meta_path = dir.join(SCENE_FILE);
    let meta: SceneMeta = read_json(&meta_path)?;
    let cloud = read_ply(&dir.join(CLOUD_FILE))?;
    let cameras = read_cameras(&dir.join(CAMERAS_FILE))?;
    if cloud.len() != meta.points || cameras.len() != meta.cameras {
        return Err(Error::Parse {
            path: meta_path,
            line: 0,
            msg: format!(
                "metadata lists {} points and {} cameras, files hold {} and {}",
                meta.points,
                meta.cameras,
                cloud.len(),
                cameras.len()
            ),
        });
    }
    let bundle = SceneBundle {
        cloud,
        cameras,
        region: meta.region,
    };
    Ok((meta, bundle))
}
