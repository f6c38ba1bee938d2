//! Voxel-wise segmentation of the localized lumbar region.
//!
//! A U-net style encoder/decoder labels each voxel of a cropped patch as
//! background or one of the five lumbar vertebrae (L1..L5). Training happens
//! in two steps: a binary network (vertebra vs background) first, whose
//! weights then initialize the multi-class network — only the final
//! classification layer starts fresh. Inference tiles the cropped region
//! with 50%-overlapping patches and averages the per-class probabilities;
//! morphological cleanup removes small islands and fills enclosed cavities.

mod infer;
mod model;
mod pipeline;
mod postprocess;
mod train;

pub use infer::{sliding_window_infer, ProbabilityMap};
pub use model::SegNetModel;
pub use pipeline::{segment_volume, SegOutcome};
pub use postprocess::{min_component_threshold, postprocess};
pub use train::{
    class_voxel_counts, compute_class_weights, segmenter_from_checkpoint, train_binary,
    train_multiclass, SegCase, SegTraining,
};

use thiserror::Error;

use crate::autodiff::{Dims3, TensorError};
use crate::dataset::DataError;
use crate::locnet::LocError;

#[derive(Debug, Error)]
pub enum SegError {
    #[error("invalid segmentation setup: {0}")]
    Invalid(String),
    #[error("segmentation training failed: {0}")]
    Training(String),
    #[error("localization failed while segmenting: {0}")]
    Localization(#[from] LocError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Augmentation knobs applied to each training volume per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub gray_scale: [f64; 2],
    pub gray_shift: [f64; 2],
    pub elastic_grid: usize,
    pub elastic_amplitude: f64,
    pub roi_jitter: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            gray_scale: [0.9, 1.1],
            gray_shift: [-0.05, 0.05],
            elastic_grid: 8,
            elastic_amplitude: 2.0,
            roi_jitter: 0.05,
        }
    }
}

/// Architecture and training configuration of the segmentation network.
#[derive(Debug, Clone, PartialEq)]
pub struct SegNetConfig {
    /// Number of pooling levels in the encoder.
    pub depth: usize,
    /// Channels at the first encoder level; doubled per level.
    pub base_width: usize,
    /// 2 (binary pretraining) or 6 (background + L1..L5).
    pub class_count: usize,
    /// Training-patch and inference-tile extents; every axis must be
    /// divisible by `2^depth`.
    pub patch_extents: Dims3,
    /// Per-class loss weights; `None` derives inverse-frequency weights from
    /// the training labels.
    pub class_weights: Option<Vec<f64>>,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Random patches drawn from each training volume per epoch.
    pub patches_per_volume: usize,
    /// Tile stride as a fraction of the patch extents (0.5 = 50% overlap).
    pub stride_fraction: f64,
    /// Voxels added around the localized box before cropping.
    pub crop_margin: f64,
    /// Components smaller than this fraction of the largest foreground
    /// component are removed in post-processing.
    pub min_component_fraction: f64,
    pub augment: AugmentConfig,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_width: 16,
            class_count: 6,
            patch_extents: Dims3::new(32, 32, 48),
            class_weights: None,
            epochs: 8,
            learning_rate: 1e-3,
            patches_per_volume: 2,
            stride_fraction: 0.5,
            crop_margin: 4.0,
            min_component_fraction: 0.01,
            augment: AugmentConfig::default(),
        }
    }
}

impl SegNetConfig {
    pub fn validate(&self) -> Result<(), SegError> {
        if self.depth == 0 {
            return Err(SegError::Invalid("depth must be at least 1".into()));
        }
        if self.base_width == 0 {
            return Err(SegError::Invalid("base width must be positive".into()));
        }
        if self.class_count != 2 && self.class_count != 6 {
            return Err(SegError::Invalid(format!(
                "class count must be 2 or 6, got {}",
                self.class_count
            )));
        }
        let divisor = 1usize << self.depth;
        for (axis, extent) in [
            ("depth", self.patch_extents.d),
            ("height", self.patch_extents.h),
            ("width", self.patch_extents.w),
        ] {
            if extent == 0 || extent % divisor != 0 {
                return Err(SegError::Invalid(format!(
                    "patch {axis} extent {extent} is not divisible by 2^depth = {divisor}"
                )));
            }
        }
        if let Some(weights) = &self.class_weights {
            if weights.len() != self.class_count {
                return Err(SegError::Invalid(format!(
                    "{} class weights given for {} classes",
                    weights.len(),
                    self.class_count
                )));
            }
            if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                return Err(SegError::Invalid(
                    "class weights must be strictly positive".into(),
                ));
            }
        }
        if !(self.stride_fraction > 0.0 && self.stride_fraction <= 1.0) {
            return Err(SegError::Invalid(format!(
                "stride fraction must lie in (0, 1], got {}",
                self.stride_fraction
            )));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(SegError::Invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.crop_margin >= 0.0) || !self.crop_margin.is_finite() {
            return Err(SegError::Invalid(format!(
                "crop margin must be non-negative, got {}",
                self.crop_margin
            )));
        }
        if !(0.0..=1.0).contains(&self.min_component_fraction) {
            return Err(SegError::Invalid(format!(
                "min component fraction must lie in [0, 1], got {}",
                self.min_component_fraction
            )));
        }
        Ok(())
    }
}
