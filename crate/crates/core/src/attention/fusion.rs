use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::Vector3;
use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::PatchGrid;
use crate::io::{read_tensor_blob, write_tensor_blob};

const LN_EPS: f64 = 1e-5;
const POINT_POSITION_SCALE: f64 = 64.0;
const ATTENTION_KINDS: [&str; 4] = ["self_img", "self_pts", "i2p", "p2i"];
const PROJECTIONS: [&str; 4] = ["wq", "wk", "wv", "wo"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub n_blocks: usize,
    pub n_heads: usize,
    pub channels: usize,
    /// Total query/key width across heads; each head gets `latent_dim / n_heads`.
    pub latent_dim: usize,
    /// Add sinusoidal positional embeddings to queries and keys.
    pub positional: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            n_blocks: 4,
            n_heads: 4,
            channels: 256,
            latent_dim: 256,
            positional: true,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.n_heads == 0 || self.channels == 0 || self.latent_dim == 0 {
            return Err(Error::Config("fusion sizes must all be >= 1".into()));
        }
        if self.channels % self.n_heads != 0 || self.latent_dim % self.n_heads != 0 {
            return Err(Error::Config("channels and latent_dim must be divisible by n_heads".into()));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.latent_dim / self.n_heads
    }
}

/// Named weight matrices, `block{b}.{kind}.{wq|wk|wv|wo}`.
///
/// `wq`, `wk`, `wv` are `channels x latent_dim`; `wo` is `latent_dim x channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub tensors: BTreeMap<String, Array2<f64>>,
}

impl FusionParams {
    fn names(cfg: &FusionConfig) -> Vec<(String, [usize; 2])> {
        let (c, d) = (cfg.channels, cfg.latent_dim);
        let mut out = Vec::new();
        for b in 0..cfg.n_blocks {
            for kind in ATTENTION_KINDS {
                for p in PROJECTIONS {
                    let shape = if p == "wo" { [d, c] } else { [c, d] };
                    out.push((format!("block{b}.{kind}.{p}"), shape));
                }
            }
        }
        out
    }

    pub fn zeros(cfg: &FusionConfig) -> Result<Self> {
        cfg.validate()?;
        let tensors = Self::names(cfg)
            .into_iter()
            .map(|(n, s)| (n, Array2::zeros((s[0], s[1]))))
            .collect();
        Ok(Self { tensors })
    }

    /// Gaussian weights with standard deviation `1/sqrt(channels)`.
    pub fn seeded(cfg: &FusionConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (cfg.channels as f64).sqrt()).expect("positive std");
        let tensors = Self::names(cfg)
            .into_iter()
            .map(|(n, s)| (n, Array2::from_shape_simple_fn((s[0], s[1]), || normal.sample(&mut rng))))
            .collect();
        Ok(Self { tensors })
    }

    pub fn get(&self, name: &str) -> Result<&Array2<f64>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter tensor {name}")))
    }

    pub fn check(&self, cfg: &FusionConfig) -> Result<()> {
        for (n, s) in Self::names(cfg) {
            let t = self.get(&n)?;
            if t.dim() != (s[0], s[1]) {
                return Err(Error::ShapeMismatch(format!("{n} is {:?}, expected {:?}", t.dim(), s)));
            }
        }
        Ok(())
    }

    /// Writes the tensors in the named-tensor blob format of [`crate::io::write_tensor_blob`].
    pub fn write_blob<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_tensor_blob(w, &self.tensors)
    }

    pub fn read_blob<R: Read>(r: R) -> Result<Self> {
        Ok(Self {
            tensors: read_tensor_blob(r)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Image patches query point groups: shape `(patches, groups)`.
    I2P,
    /// Point groups query image patches: shape `(groups, patches)`.
    P2I,
}

/// Raw cross-attention scores `q . k` (no `1/sqrt(d)` scale, no softmax).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub logits: Array2<f64>,
    pub direction: Direction,
}

#[derive(Debug, Clone)]
pub struct FusionOutput {
    pub image: Array2<f64>,
    pub points: Array2<f64>,
    /// Last-block head-averaged logits.
    pub i2p: AttentionMap,
    pub p2i: AttentionMap,
    /// Last-block per-head logits.
    pub i2p_heads: Vec<Array2<f64>>,
    pub p2i_heads: Vec<Array2<f64>>,
}

fn sinusoid(out: &mut [f64], pos: f64, bands: usize) {
    for k in 0..bands {
        let freq = 1.0 / 10000f64.powf(k as f64 / bands as f64);
        out[2 * k] = (pos * freq).sin();
        out[2 * k + 1] = (pos * freq).cos();
    }
}

/// Per-patch embedding over `(row, col)`: `channels/4` frequency bands per axis.
pub fn patch_positional_embedding(grid: &PatchGrid, channels: usize) -> Array2<f64> {
    let bands = channels / 4;
    let mut pe = Array2::zeros((grid.len(), channels));
    for i in 0..grid.len() {
        let (r, c) = grid.row_col(i);
        let mut row = pe.row_mut(i);
        let s = row.as_slice_mut().expect("standard layout");
        sinusoid(&mut s[..2 * bands], r as f64, bands);
        sinusoid(&mut s[2 * bands..4 * bands], c as f64, bands);
    }
    pe
}

/// Per-group embedding over centers normalized to the unit cube of their
/// bounding box: `channels/6` bands per axis, remaining channels zero.
pub fn point_positional_embedding(centers: &[Vector3<f64>], channels: usize) -> Array2<f64> {
    let bands = channels / 6;
    let mut pe = Array2::zeros((centers.len(), channels));
    if centers.is_empty() {
        return pe;
    }
    let mut lo = centers[0];
    let mut hi = centers[0];
    for c in centers {
        lo = lo.inf(c);
        hi = hi.sup(c);
    }
    let ext = (hi - lo).map(|v| if v > 0.0 { v } else { 1.0 });
    for (i, c) in centers.iter().enumerate() {
        let mut row = pe.row_mut(i);
        let s = row.as_slice_mut().expect("standard layout");
        for a in 0..3 {
            let u = (c[a] - lo[a]) / ext[a] * POINT_POSITION_SCALE;
            sinusoid(&mut s[2 * bands * a..2 * bands * (a + 1)], u, bands);
        }
    }
    pe
}

fn layer_norm(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for mut row in y.axis_iter_mut(Axis(0)) {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    y
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row /= z;
    }
}

struct Attended {
    update: Array2<f64>,
    /// Per-head raw logits `(queries, keys)`.
    logits: Vec<Array2<f64>>,
}

/// Multi-head attention. Queries and keys carry positional embeddings;
/// values do not.
#[allow(clippy::too_many_arguments)]
fn mha(
    q_in: ArrayView2<f64>,
    q_pe: Option<&Array2<f64>>,
    kv_in: ArrayView2<f64>,
    k_pe: Option<&Array2<f64>>,
    params: &FusionParams,
    prefix: &str,
    cfg: &FusionConfig,
    keep_logits: bool,
) -> Result<Attended> {
    let wq = params.get(&format!("{prefix}.wq"))?;
    let wk = params.get(&format!("{prefix}.wk"))?;
    let wv = params.get(&format!("{prefix}.wv"))?;
    let wo = params.get(&format!("{prefix}.wo"))?;
    let qx = match q_pe {
        Some(pe) => &q_in + pe,
        None => q_in.to_owned(),
    };
    let kx = match k_pe {
        Some(pe) => &kv_in + pe,
        None => kv_in.to_owned(),
    };
    let q = qx.dot(wq);
    let k = kx.dot(wk);
    let v = kv_in.dot(wv);
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Array2::zeros((q.nrows(), cfg.latent_dim));
    let mut logits = Vec::new();
    for h in 0..cfg.n_heads {
        let cols = ndarray::s![.., h * dh..(h + 1) * dh];
        let raw = q.slice(cols).dot(&k.slice(cols).t());
        let mut att = raw.mapv(|x| x * scale);
        softmax_rows(&mut att);
        heads.slice_mut(cols).assign(&att.dot(&v.slice(cols)));
        if keep_logits {
            logits.push(raw);
        }
    }
    Ok(Attended {
        update: heads.dot(wo),
        logits,
    })
}

fn head_average(heads: &[Array2<f64>]) -> Array2<f64> {
    let mut avg = heads[0].clone();
    for h in &heads[1..] {
        avg += h;
    }
    avg / heads.len() as f64
}

/// Runs `n_blocks` of pre-norm self-attention per modality followed by
/// simultaneous image-to-point and point-to-image cross-attention, each with
/// a residual connection.
pub fn fusion_forward(
    image: &Array2<f64>,
    points: &Array2<f64>,
    grid: &PatchGrid,
    centers: &[Vector3<f64>],
    params: &FusionParams,
    cfg: &FusionConfig,
) -> Result<FusionOutput> {
    cfg.validate()?;
    params.check(cfg)?;
    if image.nrows() != grid.len() || points.nrows() != centers.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} image rows for {} patches, {} point rows for {} groups",
            image.nrows(),
            grid.len(),
            points.nrows(),
            centers.len()
        )));
    }
    if image.ncols() != cfg.channels || points.ncols() != cfg.channels {
        return Err(Error::ShapeMismatch(format!(
            "feature widths {} / {} differ from {} channels",
            image.ncols(),
            points.ncols(),
            cfg.channels
        )));
    }
    let (pe_img, pe_pts) = if cfg.positional {
        (
            Some(patch_positional_embedding(grid, cfg.channels)),
            Some(point_positional_embedding(centers, cfg.channels)),
        )
    } else {
        (None, None)
    };
    let mut img = image.clone();
    let mut pts = points.clone();
    let mut last = (Vec::new(), Vec::new());
    for b in 0..cfg.n_blocks {
        let n = layer_norm(&img);
        img += &mha(n.view(), pe_img.as_ref(), n.view(), pe_img.as_ref(), params, &format!("block{b}.self_img"), cfg, false)?.update;
        let n = layer_norm(&pts);
        pts += &mha(n.view(), pe_pts.as_ref(), n.view(), pe_pts.as_ref(), params, &format!("block{b}.self_pts"), cfg, false)?.update;

        let keep = b + 1 == cfg.n_blocks;
        let (ni, np) = (layer_norm(&img), layer_norm(&pts));
        let i2p = mha(ni.view(), pe_img.as_ref(), np.view(), pe_pts.as_ref(), params, &format!("block{b}.i2p"), cfg, keep)?;
        let p2i = mha(np.view(), pe_pts.as_ref(), ni.view(), pe_img.as_ref(), params, &format!("block{b}.p2i"), cfg, keep)?;
        img += &i2p.update;
        pts += &p2i.update;
        if keep {
            last = (i2p.logits, p2i.logits);
        }
    }
    Ok(FusionOutput {
        image: img,
        points: pts,
        i2p: AttentionMap {
            logits: head_average(&last.0),
            direction: Direction::I2P,
        },
        p2i: AttentionMap {
            logits: head_average(&last.1),
            direction: Direction::P2I,
        },
        i2p_heads: last.0,
        p2i_heads: last.1,
    })
}
