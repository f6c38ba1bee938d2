//! The U-net style segmentation network.
//!
//! Encoder: `depth` levels of two same-padded 3×3×3 convolutions (batch norm
//! + ReLU after each) followed by 2×2×2 max pooling, channel width doubling
//! per level. A bottleneck block sits below the last pool. Decoder: per
//! level, a 2×2×2 stride-2 transposed convolution, concatenation with the
//! equal-resolution encoder features (the shortcut connection), and two more
//! conv-BN-ReLU pairs. A final 1×1×1 convolution maps to class logits, so
//! output extents always equal input extents.

use rand::Rng;

use super::SegNetConfig;
use crate::autodiff::{
    register_bn, register_conv, register_tconv, BnLayer, ConvLayer, Graph, NodeId, Padding,
    ParamSet, TensorError,
};

struct ConvBlock {
    conv1: ConvLayer,
    bn1: BnLayer,
    conv2: ConvLayer,
    bn2: BnLayer,
}

impl ConvBlock {
    fn register(
        params: &mut ParamSet,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
    ) -> Self {
        Self {
            conv1: register_conv(params, rng, &format!("{name}.conv1"), c_in, c_out, 3),
            bn1: register_bn(params, &format!("{name}.bn1"), c_out),
            conv2: register_conv(params, rng, &format!("{name}.conv2"), c_out, c_out, 3),
            bn2: register_bn(params, &format!("{name}.bn2"), c_out),
        }
    }

    fn forward(
        &self,
        graph: &mut Graph,
        params: &ParamSet,
        input: NodeId,
    ) -> Result<NodeId, TensorError> {
        let mut x = graph.conv(params, input, &self.conv1, Padding::Same)?;
        x = graph.batchnorm(params, x, &self.bn1)?;
        x = graph.relu(x);
        x = graph.conv(params, x, &self.conv2, Padding::Same)?;
        x = graph.batchnorm(params, x, &self.bn2)?;
        Ok(graph.relu(x))
    }
}

/// Parameter handles for the segmentation network; the final layer is named
/// `seg.head` so the multi-class initialization can skip exactly it.
pub struct SegNetModel {
    encoder: Vec<ConvBlock>,
    bottleneck: ConvBlock,
    upsamplers: Vec<ConvLayer>,
    decoder: Vec<ConvBlock>,
    head: ConvLayer,
}

/// Prefix of the final classification layer's parameter names.
pub(crate) const HEAD_PREFIX: &str = "seg.head";

impl SegNetModel {
    /// Registers all parameters in a fixed order and returns the handles.
    pub fn build(params: &mut ParamSet, config: &SegNetConfig, rng: &mut impl Rng) -> Self {
        let width = |level: usize| config.base_width << level;
        let mut encoder = Vec::with_capacity(config.depth);
        let mut c_in = 1;
        for level in 0..config.depth {
            encoder.push(ConvBlock::register(
                params,
                rng,
                &format!("seg.enc{level}"),
                c_in,
                width(level),
            ));
            c_in = width(level);
        }
        let bottleneck = ConvBlock::register(
            params,
            rng,
            "seg.bottleneck",
            c_in,
            width(config.depth),
        );
        let mut upsamplers = Vec::with_capacity(config.depth);
        let mut decoder = Vec::with_capacity(config.depth);
        // Decoder levels run deep to shallow.
        for level in (0..config.depth).rev() {
            upsamplers.push(register_tconv(
                params,
                rng,
                &format!("seg.up{level}"),
                width(level + 1),
                width(level),
            ));
            decoder.push(ConvBlock::register(
                params,
                rng,
                &format!("seg.dec{level}"),
                2 * width(level),
                width(level),
            ));
        }
        let head = register_conv(
            params,
            rng,
            HEAD_PREFIX,
            config.base_width,
            config.class_count,
            1,
        );
        Self {
            encoder,
            bottleneck,
            upsamplers,
            decoder,
            head,
        }
    }

    /// Runs the network; output extents equal input extents, with
    /// `class_count` logit channels. Every input extent must be divisible by
    /// `2^depth`.
    pub fn forward(
        &self,
        graph: &mut Graph,
        params: &ParamSet,
        input: NodeId,
    ) -> Result<NodeId, TensorError> {
        let dims = graph.dims(input);
        let divisor = 1usize << self.encoder.len();
        for (axis, extent) in [("depth", dims.d), ("height", dims.h), ("width", dims.w)] {
            if extent % divisor != 0 || extent == 0 {
                return Err(TensorError::ShapeMismatch {
                    context: format!(
                        "segmentation input {axis} extent must be divisible by {divisor}"
                    ),
                    expected: vec![divisor],
                    got: vec![extent],
                });
            }
        }
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut x = input;
        for block in &self.encoder {
            let features = block.forward(graph, params, x)?;
            skips.push(features);
            x = graph.maxpool2(features)?;
        }
        x = self.bottleneck.forward(graph, params, x)?;
        for (i, (up, block)) in self.upsamplers.iter().zip(&self.decoder).enumerate() {
            let skip = skips[self.encoder.len() - 1 - i];
            x = graph.tconv_up2(params, x, up)?;
            x = graph.concat_channels(x, skip)?;
            x = block.forward(graph, params, x)?;
        }
        graph.conv(params, x, &self.head, Padding::Same)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Dims3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(depth: usize, class_count: usize) -> SegNetConfig {
        SegNetConfig {
            depth,
            base_width: 2,
            class_count,
            patch_extents: Dims3::new(16, 16, 16),
            ..SegNetConfig::default()
        }
    }

    fn forward_dims(depth: usize, dims: Dims3) -> (Dims3, usize) {
        let config = tiny(depth, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamSet::new();
        let model = SegNetModel::build(&mut params, &config, &mut rng);
        let mut graph = Graph::new(false);
        let data: Vec<f64> = (0..dims.count()).map(|i| (i % 11) as f64 / 11.0).collect();
        let input = graph.input(1, dims, data).unwrap();
        let out = model.forward(&mut graph, &params, input).unwrap();
        (graph.dims(out), graph.channels(out))
    }

    #[test]
    fn output_extents_match_input_for_depths_two_to_four() {
        assert_eq!(
            forward_dims(2, Dims3::new(12, 8, 16)),
            (Dims3::new(12, 8, 16), 6)
        );
        assert_eq!(
            forward_dims(3, Dims3::new(16, 8, 24)),
            (Dims3::new(16, 8, 24), 6)
        );
        assert_eq!(
            forward_dims(4, Dims3::new(16, 16, 32)),
            (Dims3::new(16, 16, 32), 6)
        );
    }

    #[test]
    fn indivisible_extents_are_rejected() {
        let config = tiny(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamSet::new();
        let model = SegNetModel::build(&mut params, &config, &mut rng);
        let mut graph = Graph::new(false);
        let dims = Dims3::new(12, 16, 16);
        let input = graph.input(1, dims, vec![0.0; dims.count()]).unwrap();
        assert!(model.forward(&mut graph, &params, input).is_err());
    }

    #[test]
    fn zero_head_gives_uniform_softmax() {
        let config = tiny(2, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ParamSet::new();
        let model = SegNetModel::build(&mut params, &config, &mut rng);
        let id = params.find("seg.head.weight").unwrap();
        params.value_mut(id).fill(0.0);
        let mut graph = Graph::new(false);
        let dims = Dims3::new(8, 8, 8);
        let data: Vec<f64> = (0..dims.count()).map(|i| i as f64 * 0.01).collect();
        let input = graph.input(1, dims, data).unwrap();
        let logits = model.forward(&mut graph, &params, input).unwrap();
        let probs = graph.softmax(logits);
        for p in graph.value(probs) {
            assert!((p - 1.0 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shortcut_connections_feed_the_output() {
        // The decoder's first convolution sees [upsampled | skip] channels.
        // Zeroing the weight slice that multiplies the skip channels must
        // change the output — proving the shortcut path contributes.
        let config = tiny(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = ParamSet::new();
        let model = SegNetModel::build(&mut params, &config, &mut rng);
        let dims = Dims3::new(8, 8, 8);
        let data: Vec<f64> = (0..dims.count()).map(|i| ((i * 7) % 13) as f64 / 13.0).collect();

        let run = |params: &ParamSet| {
            let mut graph = Graph::new(false);
            let input = graph.input(1, dims, data.clone()).unwrap();
            let out = model.forward(&mut graph, params, input).unwrap();
            graph.value(out).to_vec()
        };
        let baseline = run(&params);

        // seg.dec1 is the deepest decoder block: weight [c_out, 2w, 3,3,3],
        // skip channels are the second half of the input-channel axis.
        let id = params.find("seg.dec1.conv1.weight").unwrap();
        let shape = params.shape(id).to_vec();
        let (c_out, c_in, k3) = (shape[0], shape[1], shape[2] * shape[3] * shape[4]);
        let w = params.value_mut(id);
        for o in 0..c_out {
            for i in c_in / 2..c_in {
                for t in 0..k3 {
                    w[(o * c_in + i) * k3 + t] = 0.0;
                }
            }
        }
        let ablated = run(&params);
        assert_ne!(baseline, ablated);
    }
}
