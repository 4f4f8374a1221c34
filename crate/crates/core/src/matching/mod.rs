//! Coarse and fine matching with their training losses.

mod coarse;
mod fine;
pub mod losses;
mod pairs;
mod softargmax;

pub use coarse::{coarse_match, coarse_similarity_maps};
pub use fine::{extract_fine_window, fine_match, fine_to_pixel, pixel_to_fine, FineMatchOutput, FineWindow};
pub use losses::{
    detection_loss, dta_loss, fine_losses, icl_loss, icl_loss_with_weights, icl_weights, total_loss, DetectionLoss, DtaLoss, FineLosses, IclLoss,
    IclMode, LossParts,
};
pub use pairs::{negative_candidates, sample_training_pairs, superpoint_filter, SuperpointFilter, TrainingPairs};
pub use softargmax::{soft_argmax, soft_argmax_backward, window_soft_argmax, SimilarityMap};

use nalgebra::{Vector2, Vector3};
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coarse and fine descriptors for one image / point-cloud pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    /// One row per patch, row-major over the patch grid.
    pub coarse_image: Array2<f64>,
    /// One row per point group.
    pub coarse_points: Array2<f64>,
    /// One row per half-resolution cell, row-major.
    pub fine_image: Array2<f64>,
    pub fine_rows: usize,
    pub fine_cols: usize,
    /// One row per cloud point.
    pub fine_points: Array2<f64>,
}

impl FeatureSet {
    /// Rescales every row to unit norm; fails on zero rows.
    pub fn normalize(&mut self) -> Result<()> {
        for m in [
            &mut self.coarse_image,
            &mut self.coarse_points,
            &mut self.fine_image,
            &mut self.fine_points,
        ] {
            normalize_rows(m)?;
        }
        Ok(())
    }
}

pub fn normalize_rows(m: &mut Array2<f64>) -> Result<()> {
    for (i, mut row) in m.axis_iter_mut(Axis(0)).enumerate() {
        let n = row.dot(&row).sqrt();
        if !(n > 0.0) {
            return Err(Error::ZeroNormRow(i));
        }
        row /= n;
    }
    Ok(())
}

/// Cosine similarity between every row of `a` and every row of `b`.
pub fn cosine_similarity_matrix(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "feature widths differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let mut an = a.to_owned();
    normalize_rows(&mut an)?;
    let mut bn = b.to_owned();
    normalize_rows(&mut bn).map_err(|e| match e {
        Error::ZeroNormRow(i) => Error::InvalidArgument(format!("zero-norm row {i} in second operand")),
        e => e,
    })?;
    let mut s = an.dot(&bn.t());
    s.mapv_inplace(|v| v.clamp(-1.0, 1.0));
    Ok(s)
}

/// A 3D point paired with an image pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    /// Point group the pair came from.
    pub group: usize,
    /// Index of the 3D point in its cloud.
    pub point_index: usize,
    pub point: Vector3<f64>,
    pub pixel: Vector2<f64>,
    pub confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Checks pixels lie in `[0,width) x [0,height)` and confidences in `[0, 1]`.
    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        for c in &self.pairs {
            if !(c.pixel.x >= 0.0 && c.pixel.x < width as f64 && c.pixel.y >= 0.0 && c.pixel.y < height as f64) {
                return Err(Error::PixelOutOfBounds {
                    u: c.pixel.x,
                    v: c.pixel.y,
                    width,
                    height,
                });
            }
            if !(0.0..=1.0).contains(&c.confidence) {
                return Err(Error::invalid(format!("confidence {} outside [0, 1]", c.confidence)));
            }
        }
        Ok(())
    }
}

/// Loss hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub gamma: f64,
    pub m_p: f64,
    pub m_n: f64,
    /// Patch-grid safe radius for negatives (Chebyshev).
    pub safe_radius_r: usize,
    pub kappa: usize,
    pub fine_window_w: usize,
    pub icl_mode: IclMode,
    pub lambda_att: f64,
    pub lambda_det: f64,
    pub lambda_coarse: f64,
    pub lambda_fine: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 10.0,
            m_p: 0.2,
            m_n: 1.8,
            safe_radius_r: 1,
            kappa: 128,
            fine_window_w: 8,
            icl_mode: IclMode::Literal,
            lambda_att: 1.0,
            lambda_det: 1.0,
            lambda_coarse: 1.0,
            lambda_fine: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::Config("gamma must be positive".into()));
        }
        if self.kappa == 0 {
            return Err(Error::Config("kappa must be >= 1".into()));
        }
        if self.fine_window_w < 2 || self.fine_window_w % 2 != 0 {
            return Err(Error::Config("fine_window_w must be even and >= 2".into()));
        }
        Ok(())
    }
}

/// Inference-time matching parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub superpoint_threshold: f64,
    pub coarse_window: usize,
    pub coarse_temperature: f64,
    pub fine_window_w: usize,
    pub fine_temperature: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            superpoint_threshold: 0.9,
            coarse_window: 5,
            coarse_temperature: 1.0,
            fine_window_w: 8,
            fine_temperature: 1.0,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.coarse_window == 0 || self.coarse_window % 2 == 0 {
            return Err(Error::Config("coarse_window must be odd".into()));
        }
        if self.fine_window_w < 2 || self.fine_window_w % 2 != 0 {
            return Err(Error::Config("fine_window_w must be even and >= 2".into()));
        }
        if !(self.coarse_temperature > 0.0 && self.fine_temperature > 0.0) {
            return Err(Error::Config("temperatures must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cosine_cases() {
        let a = array![[1.0, 0.0], [0.0, 1.0], [1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()]];
        let b = array![[1.0, 0.0]];
        let s = cosine_similarity_matrix(a.view(), b.view()).unwrap();
        assert_eq!(s[(0, 0)], 1.0);
        assert_eq!(s[(1, 0)], 0.0);
        assert!((s[(2, 0)] - 0.7071067811865476).abs() < 1e-15);
    }

    #[test]
    fn zero_row_is_an_error() {
        let a = array![[1.0, 0.0], [0.0, 0.0]];
        let b = array![[1.0, 0.0]];
        assert!(matches!(
            cosine_similarity_matrix(a.view(), b.view()),
            Err(Error::ZeroNormRow(1))
        ));
        assert!(cosine_similarity_matrix(b.view(), a.view()).is_err());
    }

    #[test]
    fn width_mismatch() {
        let a = array![[1.0, 0.0]];
        let b = array![[1.0, 0.0, 0.0]];
        assert!(matches!(
            cosine_similarity_matrix(a.view(), b.view()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn loss_defaults() {
        let c = LossConfig::default();
        assert_eq!((c.safe_radius_r, c.m_p, c.m_n, c.gamma), (1, 0.2, 1.8, 10.0));
        assert_eq!(c.fine_window_w, 8);
        c.validate().unwrap();
        assert_eq!(MatchConfig::default().superpoint_threshold, 0.9);
        assert_eq!(MatchConfig::default().coarse_window, 5);
    }
}
