//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation of one forward pass as a node holding
//! its output value plus whatever the backward pass needs (pooling argmax
//! indices, normalization statistics, softmax probabilities). Calling
//! [`Graph::backward`] walks the tape in reverse and accumulates parameter
//! gradients into a [`GradBuffer`]. Nodes form a DAG through `NodeId`
//! references; values live in plain `Vec<f64>` in `[C, D, H, W]` layout.
//!
//! The graph is rebuilt per step — there is no retained computation graph —
//! which keeps op records simple enums instead of closures and makes every
//! pass deterministic for a fixed input regardless of thread count.

use super::kernels;
use super::params::{BnLayer, ConvLayer, GradBuffer, ParamId, ParamSet};
use super::{Dims3, TensorError};

/// Variance stabilizer inside every batch-norm denominator.
pub const BN_EPS: f64 = 1e-5;
/// Decay applied to running statistics: `running = M * running + (1 - M) * batch`.
pub const BN_MOMENTUM: f64 = 0.9;
/// Floor on the intersection-over-union ratio before the log, so the loss
/// stays finite (and its gradient defined zero) for disjoint boxes.
pub const IOU_EPS: f64 = 1e-6;

/// Handle to one node in a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Padding policy for stride-1 convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `k / 2` on every face; preserves spatial extents for
    /// odd kernel sizes.
    Same,
    /// No padding; output shrinks by `k - 1` per axis.
    Valid,
}

/// Batch statistics observed by one train-mode normalization layer, to be
/// folded into its running statistics after the forward pass completes.
///
/// Updates are applied in tape order by [`apply_bn_updates`], never inside
/// the forward pass itself, so parallel patch pipelines cannot race on them.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Folds recorded batch statistics into the running-statistics parameters.
pub fn apply_bn_updates(params: &mut ParamSet, updates: &[BnUpdate]) {
    for u in updates {
        let rm = params.value_mut(u.running_mean);
        for (r, &m) in rm.iter_mut().zip(&u.mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
        }
        let rv = params.value_mut(u.running_var);
        for (r, &v) in rv.iter_mut().zip(&u.var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
        }
    }
}

enum OpRecord {
    Input,
    Conv {
        input: NodeId,
        weight: ParamId,
        bias: ParamId,
        k: usize,
        pad: usize,
    },
    TConv {
        input: NodeId,
        weight: ParamId,
        bias: ParamId,
    },
    MaxPool {
        input: NodeId,
        argmax: Vec<u32>,
    },
    BatchNorm {
        input: NodeId,
        scale: ParamId,
        shift: ParamId,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Relu {
        input: NodeId,
    },
    ScaleShift {
        input: NodeId,
        scale: f64,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    Softmax {
        input: NodeId,
    },
    MseLoss {
        input: NodeId,
        target: Vec<f64>,
    },
    CeLoss {
        input: NodeId,
        labels: Vec<u8>,
        class_weights: Vec<f64>,
        probs: Vec<f64>,
    },
    IouLoss {
        input: NodeId,
        target: [f64; 6],
    },
}

struct Node {
    channels: usize,
    dims: Dims3,
    value: Vec<f64>,
    op: OpRecord,
}

impl Node {
    fn len(&self) -> usize {
        self.channels * self.dims.count()
    }
}

/// One forward tape. Build with the op methods, then call [`Graph::backward`]
/// on a scalar loss node.
pub struct Graph {
    training: bool,
    nodes: Vec<Node>,
    bn_updates: Vec<BnUpdate>,
}

impl Graph {
    /// `training` selects batch statistics (and records [`BnUpdate`]s) in
    /// normalization layers; evaluation mode reads the stored running
    /// statistics instead.
    pub fn new(training: bool) -> Self {
        Graph {
            training,
            nodes: Vec::new(),
            bn_updates: Vec::new(),
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    /// Batch statistics recorded by train-mode normalization layers, in tape
    /// order.
    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    /// Output value of a node.
    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn channels(&self, id: NodeId) -> usize {
        self.nodes[id.0].channels
    }

    pub fn dims(&self, id: NodeId) -> Dims3 {
        self.nodes[id.0].dims
    }

    fn push(&mut self, channels: usize, dims: Dims3, value: Vec<f64>, op: OpRecord) -> NodeId {
        debug_assert_eq!(value.len(), channels * dims.count());
        self.nodes.push(Node {
            channels,
            dims,
            value,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Introduces a leaf holding `data` interpreted as `[channels, dims]`.
    pub fn input(
        &mut self,
        channels: usize,
        dims: Dims3,
        data: Vec<f64>,
    ) -> Result<NodeId, TensorError> {
        if data.len() != channels * dims.count() {
            return Err(TensorError::ShapeMismatch {
                context: "graph input".into(),
                expected: vec![channels, dims.d, dims.h, dims.w],
                got: vec![data.len()],
            });
        }
        Ok(self.push(channels, dims, data, OpRecord::Input))
    }

    /// Stride-1 convolution with the given layer's weight `[c_out, c_in, k, k, k]`.
    pub fn conv(
        &mut self,
        params: &ParamSet,
        input: NodeId,
        layer: &ConvLayer,
        padding: Padding,
    ) -> Result<NodeId, TensorError> {
        let w_shape = params.shape(layer.weight).to_vec();
        let (c_out, c_in, k) = (w_shape[0], w_shape[1], w_shape[2]);
        let node = &self.nodes[input.0];
        if node.channels != c_in {
            return Err(TensorError::ShapeMismatch {
                context: format!("conv {}", params.name(layer.weight)),
                expected: vec![c_in],
                got: vec![node.channels],
            });
        }
        let pad = match padding {
            Padding::Same => k / 2,
            Padding::Valid => 0,
        };
        let dims = node.dims;
        if dims.d + 2 * pad < k || dims.h + 2 * pad < k || dims.w + 2 * pad < k {
            return Err(TensorError::ShapeMismatch {
                context: format!("conv {}: input smaller than kernel", params.name(layer.weight)),
                expected: vec![k, k, k],
                got: vec![dims.d, dims.h, dims.w],
            });
        }
        let out = kernels::conv_out_dims(dims, k, pad);
        let mut value = vec![0.0; c_out * out.count()];
        kernels::conv3_forward(
            &node.value,
            c_in,
            dims,
            params.value(layer.weight),
            params.value(layer.bias),
            c_out,
            k,
            pad,
            &mut value,
        );
        Ok(self.push(
            c_out,
            out,
            value,
            OpRecord::Conv {
                input,
                weight: layer.weight,
                bias: layer.bias,
                k,
                pad,
            },
        ))
    }

    /// 2x2x2 stride-2 transposed convolution; doubles every spatial extent.
    pub fn tconv_up2(
        &mut self,
        params: &ParamSet,
        input: NodeId,
        layer: &ConvLayer,
    ) -> Result<NodeId, TensorError> {
        let w_shape = params.shape(layer.weight).to_vec();
        let (c_in, c_out) = (w_shape[0], w_shape[1]);
        let node = &self.nodes[input.0];
        if node.channels != c_in {
            return Err(TensorError::ShapeMismatch {
                context: format!("tconv {}", params.name(layer.weight)),
                expected: vec![c_in],
                got: vec![node.channels],
            });
        }
        let dims = node.dims;
        let out = Dims3::new(dims.d * 2, dims.h * 2, dims.w * 2);
        let mut value = vec![0.0; c_out * out.count()];
        kernels::tconv_forward(
            &node.value,
            c_in,
            dims,
            params.value(layer.weight),
            params.value(layer.bias),
            c_out,
            &mut value,
        );
        Ok(self.push(
            c_out,
            out,
            value,
            OpRecord::TConv {
                input,
                weight: layer.weight,
                bias: layer.bias,
            },
        ))
    }

    /// 2x2x2 max pooling with stride 2; every spatial extent must be even.
    pub fn maxpool2(&mut self, input: NodeId) -> Result<NodeId, TensorError> {
        let node = &self.nodes[input.0];
        let dims = node.dims;
        for (axis, extent) in [("depth", dims.d), ("height", dims.h), ("width", dims.w)] {
            if extent % 2 != 0 || extent == 0 {
                return Err(TensorError::OddExtent {
                    context: format!("maxpool {axis}"),
                    extent,
                });
            }
        }
        let out = Dims3::new(dims.d / 2, dims.h / 2, dims.w / 2);
        let channels = node.channels;
        let mut value = vec![0.0; channels * out.count()];
        let mut argmax = Vec::new();
        kernels::maxpool_forward(&node.value, channels, dims, &mut value, &mut argmax);
        Ok(self.push(channels, out, value, OpRecord::MaxPool { input, argmax }))
    }

    /// Per-channel batch normalization. Training mode computes statistics
    /// from the input and records a [`BnUpdate`]; evaluation mode applies the
    /// layer's running statistics.
    pub fn batchnorm(
        &mut self,
        params: &ParamSet,
        input: NodeId,
        layer: &BnLayer,
    ) -> Result<NodeId, TensorError> {
        let node = &self.nodes[input.0];
        let channels = node.channels;
        if params.shape(layer.scale) != [channels] {
            return Err(TensorError::ShapeMismatch {
                context: format!("batchnorm {}", params.name(layer.scale)),
                expected: vec![channels],
                got: params.shape(layer.scale).to_vec(),
            });
        }
        let spatial = node.dims.count();
        let (mean, var) = if self.training {
            let (m, v) = kernels::channel_stats(&node.value, channels, spatial);
            self.bn_updates.push(BnUpdate {
                running_mean: layer.running_mean,
                running_var: layer.running_var,
                mean: m.clone(),
                var: v.clone(),
            });
            (m, v)
        } else {
            (
                params.value(layer.running_mean).to_vec(),
                params.value(layer.running_var).to_vec(),
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut value = vec![0.0; node.len()];
        kernels::batchnorm_apply(
            &node.value,
            channels,
            spatial,
            &mean,
            &inv_std,
            params.value(layer.scale),
            params.value(layer.shift),
            &mut value,
        );
        let dims = node.dims;
        let batch_stats = self.training;
        Ok(self.push(
            channels,
            dims,
            value,
            OpRecord::BatchNorm {
                input,
                scale: layer.scale,
                shift: layer.shift,
                mean,
                inv_std,
                batch_stats,
            },
        ))
    }

    /// Elementwise `max(x, 0)`.
    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let node = &self.nodes[input.0];
        let value: Vec<f64> = node.value.iter().map(|&v| v.max(0.0)).collect();
        let (channels, dims) = (node.channels, node.dims);
        self.push(channels, dims, value, OpRecord::Relu { input })
    }

    /// Elementwise affine map `y_i = scale * x_i + shift_i` with constant
    /// coefficients (e.g. de-normalizing displacements and adding a
    /// reference position).
    pub fn scale_shift(
        &mut self,
        input: NodeId,
        scale: f64,
        shift: &[f64],
    ) -> Result<NodeId, TensorError> {
        let node = &self.nodes[input.0];
        if shift.len() != node.len() {
            return Err(TensorError::ShapeMismatch {
                context: "scale_shift".into(),
                expected: vec![node.len()],
                got: vec![shift.len()],
            });
        }
        let value: Vec<f64> = node
            .value
            .iter()
            .zip(shift)
            .map(|(x, s)| scale * x + s)
            .collect();
        let (channels, dims) = (node.channels, node.dims);
        Ok(self.push(channels, dims, value, OpRecord::ScaleShift { input, scale }))
    }

    /// Concatenates two nodes along the channel axis; spatial extents must match.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if na.dims != nb.dims {
            return Err(TensorError::ShapeMismatch {
                context: "concat_channels".into(),
                expected: na.dims.to_vec(),
                got: nb.dims.to_vec(),
            });
        }
        let mut value = Vec::with_capacity(na.len() + nb.len());
        value.extend_from_slice(&na.value);
        value.extend_from_slice(&nb.value);
        let channels = na.channels + nb.channels;
        let dims = na.dims;
        Ok(self.push(channels, dims, value, OpRecord::Concat { a, b }))
    }

    /// Per-voxel softmax across channels.
    pub fn softmax(&mut self, input: NodeId) -> NodeId {
        let node = &self.nodes[input.0];
        let (channels, dims) = (node.channels, node.dims);
        let mut value = vec![0.0; node.len()];
        kernels::softmax_channels(&node.value, channels, dims.count(), &mut value);
        self.push(channels, dims, value, OpRecord::Softmax { input })
    }

    /// Mean squared error against `target`, averaged over all elements.
    pub fn mse_loss(&mut self, input: NodeId, target: &[f64]) -> Result<NodeId, TensorError> {
        let node = &self.nodes[input.0];
        if target.len() != node.len() {
            return Err(TensorError::ShapeMismatch {
                context: "mse_loss target".into(),
                expected: vec![node.len()],
                got: vec![target.len()],
            });
        }
        let n = node.len() as f64;
        let loss = node
            .value
            .iter()
            .zip(target)
            .map(|(x, t)| (x - t) * (x - t))
            .sum::<f64>()
            / n;
        Ok(self.push(
            1,
            Dims3::new(1, 1, 1),
            vec![loss],
            OpRecord::MseLoss {
                input,
                target: target.to_vec(),
            },
        ))
    }

    /// Class-weighted cross-entropy over per-voxel channel logits, fused with
    /// a numerically stable log-softmax and averaged over voxels:
    /// `loss = mean_v w[l_v] * (logsumexp_c x[c,v] - x[l_v, v])`.
    pub fn weighted_ce_loss(
        &mut self,
        input: NodeId,
        labels: &[u8],
        class_weights: &[f64],
    ) -> Result<NodeId, TensorError> {
        let node = &self.nodes[input.0];
        let channels = node.channels;
        let spatial = node.dims.count();
        if labels.len() != spatial {
            return Err(TensorError::ShapeMismatch {
                context: "weighted_ce_loss labels".into(),
                expected: vec![spatial],
                got: vec![labels.len()],
            });
        }
        if class_weights.len() != channels {
            return Err(TensorError::ShapeMismatch {
                context: "weighted_ce_loss class weights".into(),
                expected: vec![channels],
                got: vec![class_weights.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= channels) {
            return Err(TensorError::Invalid(format!(
                "label {bad} out of range for {channels} classes"
            )));
        }
        let mut probs = vec![0.0; channels * spatial];
        kernels::softmax_channels(&node.value, channels, spatial, &mut probs);
        let mut loss = 0.0;
        for (v, &label) in labels.iter().enumerate() {
            let l = label as usize;
            // -ln p computed from logits via logsumexp for stability.
            let mut max = f64::NEG_INFINITY;
            for c in 0..channels {
                max = max.max(node.value[c * spatial + v]);
            }
            let mut lse = 0.0;
            for c in 0..channels {
                lse += (node.value[c * spatial + v] - max).exp();
            }
            let nll = max + lse.ln() - node.value[l * spatial + v];
            loss += class_weights[l] * nll;
        }
        loss /= spatial as f64;
        Ok(self.push(
            1,
            Dims3::new(1, 1, 1),
            vec![loss],
            OpRecord::CeLoss {
                input,
                labels: labels.to_vec(),
                class_weights: class_weights.to_vec(),
                probs,
            },
        ))
    }

    /// Negative log intersection-over-union between a predicted box and a
    /// fixed target box, both as `[corner1_z, corner1_y, corner1_x,
    /// corner2_z, corner2_y, corner2_x]`. The predicted corners are sorted
    /// componentwise first, so any prediction describes a valid box and the
    /// sort stays differentiable (gradients route to the selected corner).
    /// The ratio is floored at [`IOU_EPS`] before the log, so identical
    /// boxes score exactly zero, disjoint boxes score `-ln(eps)` with zero
    /// gradient, and the loss is never negative.
    pub fn iou_loss(&mut self, input: NodeId, target: [f64; 6]) -> Result<NodeId, TensorError> {
        let node = &self.nodes[input.0];
        if node.len() != 6 {
            return Err(TensorError::ShapeMismatch {
                context: "iou_loss prediction".into(),
                expected: vec![6],
                got: vec![node.len()],
            });
        }
        let loss = -box_iou(&node.value, &target).max(IOU_EPS).ln();
        Ok(self.push(
            1,
            Dims3::new(1, 1, 1),
            vec![loss],
            OpRecord::IouLoss { input, target },
        ))
    }

    /// Runs reverse-mode accumulation from a scalar `loss` node, adding
    /// parameter gradients into `grads`.
    pub fn backward(
        &self,
        loss: NodeId,
        params: &ParamSet,
        grads: &mut GradBuffer,
    ) -> Result<(), TensorError> {
        if self.nodes[loss.0].len() != 1 {
            return Err(TensorError::ShapeMismatch {
                context: "backward seed".into(),
                expected: vec![1],
                got: vec![self.nodes[loss.0].len()],
            });
        }
        let mut node_grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        node_grads[loss.0][0] = 1.0;

        for i in (0..=loss.0).rev() {
            if node_grads[i].iter().all(|&g| g == 0.0) {
                continue;
            }
            // Detach this node's gradient so inputs can be borrowed freely.
            let gout = std::mem::take(&mut node_grads[i]);
            let node = &self.nodes[i];
            match &node.op {
                OpRecord::Input => {}
                OpRecord::Conv {
                    input,
                    weight,
                    bias,
                    k,
                    pad,
                } => {
                    let inp = &self.nodes[input.0];
                    let (gw, gb) = grads.pair_mut(*weight, *bias);
                    kernels::conv3_backward(
                        &inp.value,
                        inp.channels,
                        inp.dims,
                        params.value(*weight),
                        node.channels,
                        *k,
                        *pad,
                        &gout,
                        Some(&mut node_grads[input.0]),
                        gw,
                        gb,
                    );
                }
                OpRecord::TConv {
                    input,
                    weight,
                    bias,
                } => {
                    let inp = &self.nodes[input.0];
                    let (gw, gb) = grads.pair_mut(*weight, *bias);
                    kernels::tconv_backward(
                        &inp.value,
                        inp.channels,
                        inp.dims,
                        params.value(*weight),
                        node.channels,
                        &gout,
                        Some(&mut node_grads[input.0]),
                        gw,
                        gb,
                    );
                }
                OpRecord::MaxPool { input, argmax } => {
                    kernels::maxpool_backward(&gout, argmax, &mut node_grads[input.0]);
                }
                OpRecord::BatchNorm {
                    input,
                    scale,
                    shift,
                    mean,
                    inv_std,
                    batch_stats,
                } => {
                    let inp = &self.nodes[input.0];
                    let spatial = inp.dims.count();
                    let (gs, gb) = grads.pair_mut(*scale, *shift);
                    if *batch_stats {
                        kernels::batchnorm_backward_train(
                            &inp.value,
                            inp.channels,
                            spatial,
                            mean,
                            inv_std,
                            params.value(*scale),
                            &gout,
                            &mut node_grads[input.0],
                            gs,
                            gb,
                        );
                    } else {
                        kernels::batchnorm_backward_eval(
                            &inp.value,
                            inp.channels,
                            spatial,
                            mean,
                            inv_std,
                            params.value(*scale),
                            &gout,
                            &mut node_grads[input.0],
                            gs,
                            gb,
                        );
                    }
                }
                OpRecord::Relu { input } => {
                    let gi = &mut node_grads[input.0];
                    for (v, (g, o)) in node.value.iter().zip(gout.iter().zip(gi.iter_mut())) {
                        if *v > 0.0 {
                            *o += g;
                        }
                    }
                }
                OpRecord::ScaleShift { input, scale } => {
                    for (o, g) in node_grads[input.0].iter_mut().zip(&gout) {
                        *o += scale * g;
                    }
                }
                OpRecord::Concat { a, b } => {
                    let a_len = self.nodes[a.0].value.len();
                    for (o, g) in node_grads[a.0].iter_mut().zip(&gout[..a_len]) {
                        *o += g;
                    }
                    for (o, g) in node_grads[b.0].iter_mut().zip(&gout[a_len..]) {
                        *o += g;
                    }
                }
                OpRecord::Softmax { input } => {
                    let spatial = node.dims.count();
                    kernels::softmax_channels_backward(
                        &node.value,
                        node.channels,
                        spatial,
                        &gout,
                        &mut node_grads[input.0],
                    );
                }
                OpRecord::MseLoss { input, target } => {
                    let inp = &self.nodes[input.0];
                    let n = inp.value.len() as f64;
                    let g = gout[0];
                    for ((o, x), t) in node_grads[input.0]
                        .iter_mut()
                        .zip(&inp.value)
                        .zip(target)
                    {
                        *o += g * 2.0 * (x - t) / n;
                    }
                }
                OpRecord::CeLoss {
                    input,
                    labels,
                    class_weights,
                    probs,
                } => {
                    let spatial = labels.len();
                    let channels = node_grads[input.0].len() / spatial;
                    let g = gout[0] / spatial as f64;
                    let gi = &mut node_grads[input.0];
                    for (v, &label) in labels.iter().enumerate() {
                        let l = label as usize;
                        let w = class_weights[l];
                        for c in 0..channels {
                            let delta = if c == l { 1.0 } else { 0.0 };
                            gi[c * spatial + v] += g * w * (probs[c * spatial + v] - delta);
                        }
                    }
                }
                OpRecord::IouLoss { input, target } => {
                    let inp = &self.nodes[input.0];
                    iou_backward(&inp.value, target, gout[0], &mut node_grads[input.0]);
                }
            }
        }
        Ok(())
    }
}

/// Per-axis pieces of the box-overlap computation after sorting the
/// predicted corners: which input index supplies the low/high predicted
/// corner, the resulting extents, and the clamped overlap.
struct IouParts {
    lo_idx: [usize; 3],
    hi_idx: [usize; 3],
    pe: [f64; 3],
    ov: [f64; 3],
    vi: f64,
    vu: f64,
}

fn iou_parts(pred: &[f64], target: &[f64; 6]) -> IouParts {
    let mut parts = IouParts {
        lo_idx: [0; 3],
        hi_idx: [0; 3],
        pe: [0.0; 3],
        ov: [0.0; 3],
        vi: 0.0,
        vu: 0.0,
    };
    let mut te = [0.0; 3];
    for i in 0..3 {
        let (lo, hi) = if pred[i] <= pred[i + 3] {
            (i, i + 3)
        } else {
            (i + 3, i)
        };
        parts.lo_idx[i] = lo;
        parts.hi_idx[i] = hi;
        parts.pe[i] = pred[hi] - pred[lo];
        te[i] = target[i + 3] - target[i];
        parts.ov[i] = (pred[hi].min(target[i + 3]) - pred[lo].max(target[i])).max(0.0);
    }
    let vp = parts.pe[0] * parts.pe[1] * parts.pe[2];
    let vt = te[0] * te[1] * te[2];
    parts.vi = parts.ov[0] * parts.ov[1] * parts.ov[2];
    parts.vu = vp + vt - parts.vi;
    parts
}

/// Intersection-over-union of two corner-pair boxes; the first box's corners
/// are sorted componentwise, the second's are assumed ordered.
pub fn box_iou(pred: &[f64], target: &[f64; 6]) -> f64 {
    let p = iou_parts(pred, target);
    if p.vu > 0.0 {
        p.vi / p.vu
    } else {
        0.0
    }
}

/// Gradient of `-ln(max(IoU, eps))` with respect to the predicted corners.
fn iou_backward(pred: &[f64], target: &[f64; 6], gout: f64, grad: &mut [f64]) {
    let p = iou_parts(pred, target);
    if p.vu <= 0.0 {
        return;
    }
    let iou = p.vi / p.vu;
    if iou <= IOU_EPS {
        return; // clamped branch: constant loss, zero gradient
    }
    let d_loss_d_iou = -gout / iou;
    // IoU = Vi / Vu with Vu = Vp + Vt - Vi.
    let d_iou_d_vi = (p.vu + p.vi) / (p.vu * p.vu);
    let d_iou_d_vp = -p.vi / (p.vu * p.vu);
    for i in 0..3 {
        // Partial products skip the current axis, so a zero extent on one
        // axis still leaves a finite gradient on the others.
        let ov_rest = p.ov[(i + 1) % 3] * p.ov[(i + 2) % 3];
        let pe_rest = p.pe[(i + 1) % 3] * p.pe[(i + 2) % 3];
        let (lo, hi) = (p.lo_idx[i], p.hi_idx[i]);
        // Overlap term: ov_i = min(p_hi, t_hi) - max(p_lo, t_lo), if positive.
        if p.ov[i] > 0.0 {
            let d = d_loss_d_iou * d_iou_d_vi * ov_rest;
            if pred[lo] > target[i] {
                grad[lo] += -d; // predicted low corner selected by the max
            }
            if pred[hi] < target[i + 3] {
                grad[hi] += d; // predicted high corner selected by the min
            }
        }
        // Predicted-volume term: pe_i = p_hi - p_lo (non-negative by sort).
        let d = d_loss_d_iou * d_iou_d_vp * pe_rest;
        grad[lo] += -d;
        grad[hi] += d;
    }
}
