//! Lumbar-region localization.
//!
//! The localizer never scans the whole volume. A 3D Canny detector picks
//! reference voxels with strong edge responses; around each, a 32³ patch is
//! fed to a small regression network that predicts the displacement vectors
//! from the patch center to the two diagonal corners of the lumbar bounding
//! box. Every reference voxel therefore casts one vote per corner
//! (`vote = reference + displacement`), and kernel density estimation picks
//! the densest vote location as the corner. Training runs in two rounds:
//! plain L2 regression on normalized displacements first, then an IoU-based
//! refinement starting from the round-1 parameters.

mod canny;
mod kde;
mod model;
mod predict;
mod train;

pub use canny::canny3d;
pub use kde::kde_aggregate;
pub use model::{extract_patch, standardize, LocNetModel, PATCH_EDGE};
pub use predict::{localizer_from_checkpoint, predict_roi, RoiPrediction};
pub use train::{param_set_hash, train_localizer, LocTraining, RoiCase};

use thiserror::Error;

use crate::autodiff::TensorError;
use crate::dataset::{BoundingBox3D, DataError};

#[derive(Debug, Error)]
pub enum LocError {
    /// The volume has no intensity gradients at all — edge detection cannot
    /// produce reference voxels.
    #[error("volume is constant; no edges to detect")]
    ConstantVolume,
    /// Edge detection ran but nothing survived the thresholds.
    #[error("no reference voxels found (empty edge set)")]
    NoReferences,
    /// Corner votes were empty or inconsistent.
    #[error("vote aggregation failed: {0}")]
    EmptyVotes(String),
    #[error("invalid localization setup: {0}")]
    Invalid(String),
    #[error("localization training failed: {0}")]
    Training(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Tuning knobs for edge detection, the regression network, and voting.
#[derive(Debug, Clone, PartialEq)]
pub struct LocNetConfig {
    /// Gaussian pre-smoothing width (voxels) for edge detection.
    pub sigma: f64,
    /// Hysteresis thresholds as fractions of the maximum gradient magnitude,
    /// `0 ≤ low < high`.
    pub low_threshold: f64,
    pub high_threshold: f64,
    /// Maximum reference voxels per volume at inference.
    pub infer_reference_budget: usize,
    /// Maximum reference voxels per volume per training epoch.
    pub train_references_per_volume: usize,
    /// Channel widths of the three encoder stages.
    pub widths: [usize; 3],
    /// Feature count after the 4×4×4 reduction convolution.
    pub head_features: usize,
    /// Width of the hidden 1×1×1 layer between the features and the 6 outputs.
    pub head_hidden: usize,
    /// Displacements are divided by this before regression and multiplied
    /// back at voting time, keeping network outputs near unit scale.
    pub norm_constant: f64,
    pub round1_epochs: usize,
    pub round1_lr: f64,
    pub round2_epochs: usize,
    pub round2_lr: f64,
}

impl Default for LocNetConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            low_threshold: 0.10,
            high_threshold: 0.20,
            infer_reference_budget: 2000,
            train_references_per_volume: 200,
            widths: [16, 32, 64],
            head_features: 512,
            head_hidden: 64,
            norm_constant: 64.0,
            round1_epochs: 8,
            round1_lr: 1e-3,
            round2_epochs: 4,
            round2_lr: 1e-4,
        }
    }
}

impl LocNetConfig {
    pub fn validate(&self) -> Result<(), LocError> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(LocError::Invalid(format!(
                "sigma must be non-negative and finite, got {}",
                self.sigma
            )));
        }
        if !(0.0 <= self.low_threshold && self.low_threshold < self.high_threshold) {
            return Err(LocError::Invalid(format!(
                "thresholds must satisfy 0 <= low < high, got low={} high={}",
                self.low_threshold, self.high_threshold
            )));
        }
        if self.infer_reference_budget == 0 || self.train_references_per_volume == 0 {
            return Err(LocError::Invalid(
                "reference budgets must be at least 1".into(),
            ));
        }
        if self.widths.iter().any(|w| *w == 0) || self.head_features == 0 || self.head_hidden == 0
        {
            return Err(LocError::Invalid("channel widths must be positive".into()));
        }
        if !(self.norm_constant > 0.0) || !self.norm_constant.is_finite() {
            return Err(LocError::Invalid(format!(
                "norm constant must be positive, got {}",
                self.norm_constant
            )));
        }
        for (name, lr) in [("round1_lr", self.round1_lr), ("round2_lr", self.round2_lr)] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(LocError::Invalid(format!("{name} must be positive, got {lr}")));
            }
        }
        Ok(())
    }
}

/// The regression target for one reference voxel: displacements from the
/// reference to the box's low and high corners, in voxel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisplacementTarget {
    pub d_low: [f64; 3],
    pub d_high: [f64; 3],
}

impl DisplacementTarget {
    /// Ground-truth displacements from `reference` to the corners of `bbox`.
    pub fn from_box(reference: [usize; 3], bbox: &BoundingBox3D) -> Self {
        let low = bbox.corner_low();
        let high = bbox.corner_high();
        let mut d_low = [0.0; 3];
        let mut d_high = [0.0; 3];
        for axis in 0..3 {
            d_low[axis] = low[axis] - reference[axis] as f64;
            d_high[axis] = high[axis] - reference[axis] as f64;
        }
        Self { d_low, d_high }
    }

    /// The 6-vector `(d_low, d_high) / norm` the network regresses.
    pub fn normalized(&self, norm: f64) -> [f64; 6] {
        [
            self.d_low[0] / norm,
            self.d_low[1] / norm,
            self.d_low[2] / norm,
            self.d_high[0] / norm,
            self.d_high[1] / norm,
            self.d_high[2] / norm,
        ]
    }

    /// Adds the displacements back onto the reference, recovering the box.
    pub fn reconstruct(&self, reference: [usize; 3]) -> Result<BoundingBox3D, DataError> {
        let r = [
            reference[0] as f64,
            reference[1] as f64,
            reference[2] as f64,
        ];
        BoundingBox3D::from_corners(
            [r[0] + self.d_low[0], r[1] + self.d_low[1], r[2] + self.d_low[2]],
            [
                r[0] + self.d_high[0],
                r[1] + self.d_high[1],
                r[2] + self.d_high[2],
            ],
        )
    }
}

/// Edge voxels selected as patch centers, in lexicographic (z, y, x) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceVoxelSet {
    pub positions: Vec<[usize; 3]>,
}

/// Corner votes cast by reference voxels; one low and one high vote per
/// reference, index-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerVotes {
    pub low: Vec<[f64; 3]>,
    pub high: Vec<[f64; 3]>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_truth_targets_reconstruct_exactly() {
        let bbox = BoundingBox3D::new([13.0, 12.0, 7.0], [31.0, 30.0, 55.0]).unwrap();
        for reference in [[0usize, 0, 0], [22, 21, 30], [43, 43, 63]] {
            let target = DisplacementTarget::from_box(reference, &bbox);
            assert_eq!(target.reconstruct(reference).unwrap(), bbox);
            for axis in 0..3 {
                assert!(target.d_low[axis] <= target.d_high[axis]);
            }
        }
    }

    #[test]
    fn normalization_scales_all_six() {
        let target = DisplacementTarget {
            d_low: [-8.0, 4.0, 16.0],
            d_high: [8.0, 32.0, 64.0],
        };
        assert_eq!(
            target.normalized(64.0),
            [-0.125, 0.0625, 0.25, 0.125, 0.5, 1.0]
        );
    }

    #[test]
    fn config_validation_catches_bad_thresholds() {
        let mut config = LocNetConfig::default();
        assert!(config.validate().is_ok());
        config.low_threshold = 0.5;
        config.high_threshold = 0.5;
        assert!(config.validate().is_err());
        config.low_threshold = -0.1;
        config.high_threshold = 0.2;
        assert!(config.validate().is_err());
    }
}
