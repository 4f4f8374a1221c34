//! Pipeline configuration: one `[section]` per module with flat `key = value`
//! entries, read and written as TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{FusionConfig, GalConfig};
use crate::error::{Error, Result};
use crate::matching::{LossConfig, MatchConfig};
use crate::pose::{EvalConfig, RansacConfig};
use crate::scenegen::{OracleConfig, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputConfig {
    pub width: u32,
    pub height: u32,
    /// Points kept per voxel.
    pub points: usize,
    /// Point groups per voxel.
    pub groups: usize,
    pub patch_size: u32,
    pub fps_seed_index: usize,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            width: 512,
            height: 288,
            points: 20480,
            groups: 512,
            patch_size: 16,
            fps_seed_index: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub seed: u64,
    /// Number of consecutive scene seeds starting at `seed`.
    pub scenes: usize,
    pub split: Split,
    /// Override of the number of camera positions (xy grid × heights).
    pub positions: Option<usize>,
    pub voxel_size: f64,
    pub voxel_stride: f64,
    /// An image is associated with a voxel when strictly more than this
    /// fraction of the voxel's points project into it.
    pub association_fraction: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            scenes: 1,
            split: Split::Test,
            positions: None,
            voxel_size: 50.0,
            voxel_stride: 25.0,
            association_fraction: 0.30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Feed oracle features straight to matching.
    pub bypass_fusion: bool,
    pub fusion_param_seed: u64,
    pub dump_sim_maps: bool,
    /// Similarity maps dumped per image.
    pub dump_limit: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            bypass_fusion: false,
            fusion_param_seed: 1,
            dump_sim_maps: false,
            dump_limit: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub scene: SceneConfig,
    pub run: RunConfig,
    pub oracle: OracleConfig,
    pub fusion: FusionConfig,
    pub gal: GalConfig,
    pub loss: LossConfig,
    pub matching: MatchConfig,
    pub ransac: RansacConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let oracle = OracleConfig::default();
        Self {
            input: InputConfig::default(),
            scene: SceneConfig::default(),
            run: RunConfig::default(),
            // Fine soft-argmax runs at the temperature the oracle encodes for.
            matching: MatchConfig {
                fine_temperature: oracle.fine_temperature,
                ..MatchConfig::default()
            },
            oracle,
            fusion: FusionConfig::default(),
            gal: GalConfig::default(),
            loss: LossConfig::default(),
            ransac: RansacConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let i = &self.input;
        if i.patch_size == 0 || i.width % i.patch_size != 0 || i.height % i.patch_size != 0 {
            return Err(Error::Config(format!(
                "patch size {} must divide {}x{}",
                i.patch_size, i.width, i.height
            )));
        }
        if i.groups == 0 || i.groups > i.points {
            return Err(Error::Config("need 1 <= groups <= points".into()));
        }
        if self.scene.scenes == 0 {
            return Err(Error::Config("scenes must be >= 1".into()));
        }
        if !(self.scene.voxel_size >= self.scene.voxel_stride && self.scene.voxel_stride > 0.0) {
            return Err(Error::Config("need voxel_size >= voxel_stride > 0".into()));
        }
        if !(0.0..1.0).contains(&self.scene.association_fraction) {
            return Err(Error::Config("association_fraction must lie in [0, 1)".into()));
        }
        if !(self.oracle.noise_sigma >= 0.0) || !(0.0..=1.0).contains(&self.oracle.outlier_rate) {
            return Err(Error::Config("need noise >= 0 and outlier rate in [0, 1]".into()));
        }
        if !self.run.bypass_fusion && self.fusion.channels != self.oracle.coarse_channels {
            return Err(Error::Config("fusion channels must equal oracle coarse_channels".into()));
        }
        self.fusion.validate()?;
        self.gal.validate()?;
        self.loss.validate()?;
        self.matching.validate()?;
        self.ransac.validate()?;
        self.eval.validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }
}
