//! Cascaded 3D fully convolutional pipeline for lumbar vertebra segmentation.
//!
//! The pipeline has two stages. A regression network ([`locnet`]) votes for
//! the lumbar-region bounding box: edge voxels found by a 3D Canny detector
//! each predict the displacements to the two diagonal ROI corners, and the
//! votes are fused by kernel density estimation. A U-net style network
//! ([`segnet`]) then labels each voxel of the cropped region as background or
//! one of five vertebrae, with overlapped sliding-window inference and
//! morphological cleanup.
//!
//! Everything runs on the CPU on top of a small reverse-mode tensor engine
//! ([`autodiff`]) that provides exactly the layers the two networks need.
//! Synthetic spine phantoms with exact ground truth ([`dataset`]) stand in
//! for clinical CT, and [`metrics`] implements the overlap and
//! surface-distance measures (DC, JC, HD, ASSD) plus the leave-N-out
//! cross-validation harness.
//!
//! See the `examples/` directory for runnable entry points covering each
//! capability, or the `lumbarseg` binary for the subcommand interface.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod locnet;
pub mod metrics;
pub mod segnet;

pub use autodiff::{AdamState, Checkpoint, Graph, ParamSet, Tensor};
pub use dataset::{BoundingBox3D, Geometry, LabelVolume, PhantomSpec, Volume};
