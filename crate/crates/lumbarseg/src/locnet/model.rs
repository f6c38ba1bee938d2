//! The corner-displacement regression network.
//!
//! Input is a single-channel 32³ patch. Three stages of two same-padded
//! 3×3×3 convolutions (each with batch norm and ReLU) followed by 2×2×2 max
//! pooling shrink the patch to 4³. A valid 4×4×4 convolution reduces that to
//! a 1×1×1 feature vector, and two 1×1×1 convolutions map the features to
//! the 6 regression outputs (normalized corner displacements). The head is a
//! per-patch fully connected stack, so it carries no batch norm; with a
//! batch of one, normalizing a 1×1×1 activation would erase it.

use rand::Rng;

use super::LocNetConfig;
use crate::autodiff::{
    register_bn, register_conv, BnLayer, ConvLayer, Dims3, Graph, NodeId, Padding, ParamSet,
    TensorError,
};
use crate::dataset::Volume;

/// Edge length of the cubic input patch.
pub const PATCH_EDGE: usize = 32;

struct EncoderStage {
    conv1: ConvLayer,
    bn1: BnLayer,
    conv2: ConvLayer,
    bn2: BnLayer,
}

/// Parameter handles for the localization network. The handles index into
/// the [`ParamSet`] the model was built with (or any set with the same
/// registration order, e.g. one restored from a checkpoint).
pub struct LocNetModel {
    stages: Vec<EncoderStage>,
    reduce: ConvLayer,
    hidden: ConvLayer,
    output: ConvLayer,
}

impl LocNetModel {
    /// Registers all parameters in a fixed order and returns the handles.
    pub fn build(params: &mut ParamSet, config: &LocNetConfig, rng: &mut impl Rng) -> Self {
        let mut stages = Vec::with_capacity(3);
        let mut c_in = 1;
        for (i, &width) in config.widths.iter().enumerate() {
            let conv1 = register_conv(params, rng, &format!("loc.enc{i}.conv1"), c_in, width, 3);
            let bn1 = register_bn(params, &format!("loc.enc{i}.bn1"), width);
            let conv2 = register_conv(params, rng, &format!("loc.enc{i}.conv2"), width, width, 3);
            let bn2 = register_bn(params, &format!("loc.enc{i}.bn2"), width);
            stages.push(EncoderStage {
                conv1,
                bn1,
                conv2,
                bn2,
            });
            c_in = width;
        }
        let reduce = register_conv(
            params,
            rng,
            "loc.head.reduce",
            config.widths[2],
            config.head_features,
            4,
        );
        let hidden = register_conv(
            params,
            rng,
            "loc.head.hidden",
            config.head_features,
            config.head_hidden,
            1,
        );
        let output = register_conv(params, rng, "loc.head.out", config.head_hidden, 6, 1);
        Self {
            stages,
            reduce,
            hidden,
            output,
        }
    }

    /// Runs the network on a 32³ single-channel input node and returns the
    /// 6-channel 1×1×1 output node.
    pub fn forward(
        &self,
        graph: &mut Graph,
        params: &ParamSet,
        patch: NodeId,
    ) -> Result<NodeId, TensorError> {
        let dims = graph.dims(patch);
        let cube = Dims3::new(PATCH_EDGE, PATCH_EDGE, PATCH_EDGE);
        if dims != cube || graph.channels(patch) != 1 {
            return Err(TensorError::ShapeMismatch {
                context: "localization input".into(),
                expected: vec![1, cube.d, cube.h, cube.w],
                got: vec![graph.channels(patch), dims.d, dims.h, dims.w],
            });
        }
        let mut x = patch;
        for stage in &self.stages {
            x = graph.conv(params, x, &stage.conv1, Padding::Same)?;
            x = graph.batchnorm(params, x, &stage.bn1)?;
            x = graph.relu(x);
            x = graph.conv(params, x, &stage.conv2, Padding::Same)?;
            x = graph.batchnorm(params, x, &stage.bn2)?;
            x = graph.relu(x);
            x = graph.maxpool2(x)?;
        }
        debug_assert_eq!(graph.dims(x), Dims3::new(4, 4, 4));
        x = graph.conv(params, x, &self.reduce, Padding::Valid)?;
        x = graph.relu(x);
        x = graph.conv(params, x, &self.hidden, Padding::Same)?;
        x = graph.relu(x);
        graph.conv(params, x, &self.output, Padding::Same)
    }
}

/// Copies the cubic patch centered at `center` out of `volume` (the
/// reference voxel lands at patch index 16 on each axis), zero-filling
/// anything outside the volume.
pub fn extract_patch(volume: &Volume, center: [usize; 3]) -> Vec<f64> {
    let half = (PATCH_EDGE / 2) as isize;
    let e = volume.extents().to_vec();
    let mut patch = vec![0.0f64; PATCH_EDGE * PATCH_EDGE * PATCH_EDGE];
    let mut i = 0;
    for pz in 0..PATCH_EDGE as isize {
        let z = center[0] as isize - half + pz;
        for py in 0..PATCH_EDGE as isize {
            let y = center[1] as isize - half + py;
            for px in 0..PATCH_EDGE as isize {
                let x = center[2] as isize - half + px;
                if z >= 0
                    && y >= 0
                    && x >= 0
                    && (z as usize) < e[0]
                    && (y as usize) < e[1]
                    && (x as usize) < e[2]
                {
                    patch[i] = volume.get(z as usize, y as usize, x as usize) as f64;
                }
                i += 1;
            }
        }
    }
    patch
}

/// Per-patch standardization to zero mean and unit variance; patches with
/// (numerically) no variance are only centered.
pub fn standardize(patch: &mut [f64]) {
    let n = patch.len() as f64;
    let mean = patch.iter().sum::<f64>() / n;
    let var = patch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std > 1e-8 {
        for v in patch.iter_mut() {
            *v = (*v - mean) / std;
        }
    } else {
        for v in patch.iter_mut() {
            *v -= mean;
        }
    }
}
