//! Cross-modal fusion forward pass and geometry-guided attention supervision.

mod fusion;
mod gal;

pub use fusion::{
    fusion_forward, patch_positional_embedding, point_positional_embedding, AttentionMap, Direction, FusionConfig,
    FusionOutput, FusionParams,
};
pub use gal::{gal_loss, gal_masks, GalConfig, GalLoss, MaskLabel, TriMask};
