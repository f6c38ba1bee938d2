//! Minimal reverse-mode tensor engine.
//!
//! Provides exactly the layer set the two networks need: 3D convolution
//! (same or valid padding), 2x2x2 max pooling, 2x2x2 stride-2 transposed
//! convolution, batch normalization, ReLU, channel softmax, the training
//! losses, and an Adam optimizer. Computations are recorded on a [`Graph`];
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients
//! additively, both into node gradient buffers and into per-parameter
//! buffers keyed by [`ParamId`].
//!
//! All arithmetic is in `f64` so the finite-difference tolerances in
//! [`gradcheck`] are meaningful. Everything here is deterministic: the same
//! inputs, parameters, and seed produce bit-identical results.

mod adam;
mod checkpoint;
mod graph;
pub mod gradcheck;
mod kernels;
mod params;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use graph::{
    apply_bn_updates, box_iou, BnUpdate, Graph, NodeId, Padding, BN_EPS, BN_MOMENTUM, IOU_EPS,
};
pub use gradcheck::{finite_difference_check, sample_probes, standard_suite, FdFailure, FdReport};
pub use params::{
    register_bn, register_conv, register_tconv, BnLayer, ConvLayer, GradBuffer, ParamId, ParamSet,
};

use thiserror::Error;

/// Errors produced by tensor operations, optimizer steps, and checkpoints.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{context}: spatial extent {extent} is odd; pooling requires even extents")]
    OddExtent { context: String, extent: usize },
    #[error("non-finite values encountered in {context}")]
    NonFinite { context: String },
    #[error("checkpoint error at byte {offset}: {message}")]
    Checkpoint { offset: usize, message: String },
    #[error("invalid operation: {0}")]
    Invalid(String),
}

/// An n-dimensional array of `f64` values, channels-first with spatial order
/// depth x height x width, plus an optional gradient of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch {
                context: "Tensor::new".into(),
                expected: vec![expected],
                got: vec![data.len()],
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) {
        debug_assert_eq!(grad.len(), self.data.len());
        self.grad = Some(grad);
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Spatial extents of a channels-first feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims3 {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims3 {
    pub fn new(d: usize, h: usize, w: usize) -> Self {
        Self { d, h, w }
    }

    pub fn count(&self) -> usize {
        self.d * self.h * self.w
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.h + y) * self.w + x
    }

    pub fn to_vec(&self) -> Vec<usize> {
        vec![self.d, self.h, self.w]
    }
}

