//! Raw numeric kernels behind the graph operations.
//!
//! Convolutions lower to chunked im2col plus a dense GEMM so the hot loop is
//! a single `matrixmultiply::dgemm` call; chunking keeps the column buffer a
//! few megabytes regardless of volume size. Everything operates on plain
//! `f64` slices in channels-first `[C, D, H, W]` layout.

use super::Dims3;

/// Output spatial extents of a stride-1 convolution.
pub fn conv_out_dims(dims: Dims3, k: usize, pad: usize) -> Dims3 {
    Dims3::new(
        dims.d + 2 * pad + 1 - k,
        dims.h + 2 * pad + 1 - k,
        dims.w + 2 * pad + 1 - k,
    )
}

/// Target number of f64 elements in one im2col chunk (~4 MB).
const COL_CHUNK_BUDGET: usize = 1 << 19;

/// Builds `count` output rows (each `out_w` wide, starting at flattened
/// (z, y) row index `row_start`) of the im2col matrix.
///
/// `col` has `c_in * k^3` rows of `count * out_w` columns, row-major.
#[allow(clippy::too_many_arguments)]
fn im2col_rows(
    input: &[f64],
    c_in: usize,
    dims: Dims3,
    k: usize,
    pad: usize,
    out: Dims3,
    row_start: usize,
    count: usize,
    col: &mut [f64],
) {
    let cols = count * out.w;
    let in_plane = dims.h * dims.w;
    for ic in 0..c_in {
        let chan = &input[ic * dims.count()..(ic + 1) * dims.count()];
        for dz in 0..k {
            for dy in 0..k {
                for dx in 0..k {
                    let r = ((ic * k + dz) * k + dy) * k + dx;
                    let dest_row = &mut col[r * cols..(r + 1) * cols];
                    for j in 0..count {
                        let row = row_start + j;
                        let oz = row / out.h;
                        let oy = row % out.h;
                        let dest = &mut dest_row[j * out.w..(j + 1) * out.w];
                        let z = oz + dz;
                        let y = oy + dy;
                        if z < pad || z >= dims.d + pad || y < pad || y >= dims.h + pad {
                            dest.fill(0.0);
                            continue;
                        }
                        let (z, y) = (z - pad, y - pad);
                        // Input x = ox + dx - pad; valid where it lands in [0, w).
                        let lo = pad.saturating_sub(dx).min(out.w);
                        let hi = (dims.w + pad - dx).min(out.w).max(lo);
                        dest[..lo].fill(0.0);
                        dest[hi..].fill(0.0);
                        if hi > lo {
                            let src = z * in_plane + y * dims.w + (lo + dx - pad);
                            dest[lo..hi].copy_from_slice(&chan[src..src + (hi - lo)]);
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds im2col-layout gradients back onto the input gradient.
#[allow(clippy::too_many_arguments)]
fn col2im_rows(
    col: &[f64],
    c_in: usize,
    dims: Dims3,
    k: usize,
    pad: usize,
    out: Dims3,
    row_start: usize,
    count: usize,
    grad_input: &mut [f64],
) {
    let cols = count * out.w;
    let in_plane = dims.h * dims.w;
    for ic in 0..c_in {
        let chan = &mut grad_input[ic * dims.count()..(ic + 1) * dims.count()];
        for dz in 0..k {
            for dy in 0..k {
                for dx in 0..k {
                    let r = ((ic * k + dz) * k + dy) * k + dx;
                    let src_row = &col[r * cols..(r + 1) * cols];
                    for j in 0..count {
                        let row = row_start + j;
                        let oz = row / out.h;
                        let oy = row % out.h;
                        let z = oz + dz;
                        let y = oy + dy;
                        if z < pad || z >= dims.d + pad || y < pad || y >= dims.h + pad {
                            continue;
                        }
                        let (z, y) = (z - pad, y - pad);
                        let lo = pad.saturating_sub(dx).min(out.w);
                        let hi = (dims.w + pad - dx).min(out.w).max(lo);
                        if hi > lo {
                            let src = &src_row[j * out.w + lo..j * out.w + hi];
                            let dst_base = z * in_plane + y * dims.w + (lo + dx - pad);
                            let dst = &mut chan[dst_base..dst_base + (hi - lo)];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn rows_per_chunk(kernel_rows: usize, out: Dims3) -> usize {
    let budget_cols = (COL_CHUNK_BUDGET / kernel_rows).max(out.w);
    (budget_cols / out.w).max(1).min(out.d * out.h)
}

/// Stride-1 3D convolution forward pass. `weight` is `[c_out, c_in, k, k, k]`.
#[allow(clippy::too_many_arguments)]
pub fn conv3_forward(
    input: &[f64],
    c_in: usize,
    dims: Dims3,
    weight: &[f64],
    bias: &[f64],
    c_out: usize,
    k: usize,
    pad: usize,
    output: &mut [f64],
) {
    let out = conv_out_dims(dims, k, pad);
    let out_count = out.count();
    debug_assert_eq!(output.len(), c_out * out_count);
    let kr = c_in * k * k * k;
    let chunk_rows = rows_per_chunk(kr, out);
    let mut col = vec![0.0; kr * chunk_rows * out.w];

    let total_rows = out.d * out.h;
    let mut row = 0;
    while row < total_rows {
        let count = chunk_rows.min(total_rows - row);
        let cols = count * out.w;
        im2col_rows(input, c_in, dims, k, pad, out, row, count, &mut col);
        // output[oc, row*out_w ..] = weight (c_out x kr) * col (kr x cols)
        unsafe {
            matrixmultiply::dgemm(
                c_out,
                kr,
                cols,
                1.0,
                weight.as_ptr(),
                kr as isize,
                1,
                col.as_ptr(),
                cols as isize,
                1,
                0.0,
                output.as_mut_ptr().add(row * out.w),
                out_count as isize,
                1,
            );
        }
        row += count;
    }
    for oc in 0..c_out {
        let b = bias[oc];
        for v in &mut output[oc * out_count..(oc + 1) * out_count] {
            *v += b;
        }
    }
}

/// Backward pass of [`conv3_forward`]. Recomputes im2col chunks from the
/// saved input rather than retaining them. All gradient outputs accumulate.
#[allow(clippy::too_many_arguments)]
pub fn conv3_backward(
    input: &[f64],
    c_in: usize,
    dims: Dims3,
    weight: &[f64],
    c_out: usize,
    k: usize,
    pad: usize,
    grad_output: &[f64],
    grad_input: Option<&mut [f64]>,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) {
    let out = conv_out_dims(dims, k, pad);
    let out_count = out.count();
    let kr = c_in * k * k * k;
    let chunk_rows = rows_per_chunk(kr, out);
    let mut col = vec![0.0; kr * chunk_rows * out.w];
    let mut dcol = vec![0.0; kr * chunk_rows * out.w];
    let mut grad_input = grad_input;

    for oc in 0..c_out {
        grad_bias[oc] += grad_output[oc * out_count..(oc + 1) * out_count]
            .iter()
            .sum::<f64>();
    }

    let total_rows = out.d * out.h;
    let mut row = 0;
    while row < total_rows {
        let count = chunk_rows.min(total_rows - row);
        let cols = count * out.w;
        im2col_rows(input, c_in, dims, k, pad, out, row, count, &mut col);
        unsafe {
            // grad_weight (c_out x kr) += grad_out_chunk (c_out x cols) * col^T
            matrixmultiply::dgemm(
                c_out,
                cols,
                kr,
                1.0,
                grad_output.as_ptr().add(row * out.w),
                out_count as isize,
                1,
                col.as_ptr(),
                1,
                cols as isize,
                1.0,
                grad_weight.as_mut_ptr(),
                kr as isize,
                1,
            );
            if grad_input.is_some() {
                // dcol (kr x cols) = weight^T * grad_out_chunk
                matrixmultiply::dgemm(
                    kr,
                    c_out,
                    cols,
                    1.0,
                    weight.as_ptr(),
                    1,
                    kr as isize,
                    grad_output.as_ptr().add(row * out.w),
                    out_count as isize,
                    1,
                    0.0,
                    dcol.as_mut_ptr(),
                    cols as isize,
                    1,
                );
            }
        }
        if let Some(gi) = grad_input.as_deref_mut() {
            col2im_rows(&dcol, c_in, dims, k, pad, out, row, count, gi);
        }
        row += count;
    }
}

/// 2x2x2 max pooling with stride 2. Returns argmax as flat input indices.
pub fn maxpool_forward(
    input: &[f64],
    channels: usize,
    dims: Dims3,
    output: &mut [f64],
    argmax: &mut Vec<u32>,
) {
    let out = Dims3::new(dims.d / 2, dims.h / 2, dims.w / 2);
    argmax.clear();
    argmax.reserve(channels * out.count());
    for c in 0..channels {
        let chan_base = c * dims.count();
        for oz in 0..out.d {
            for oy in 0..out.h {
                for ox in 0..out.w {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let idx = chan_base
                                    + dims.index(oz * 2 + dz, oy * 2 + dy, ox * 2 + dx);
                                let v = input[idx];
                                if v > best {
                                    best = v;
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    output[c * out.count() + out.index(oz, oy, ox)] = best;
                    argmax.push(best_idx as u32);
                }
            }
        }
    }
}

pub fn maxpool_backward(grad_output: &[f64], argmax: &[u32], grad_input: &mut [f64]) {
    for (g, &idx) in grad_output.iter().zip(argmax) {
        grad_input[idx as usize] += g;
    }
}

/// 2x2x2 stride-2 transposed convolution forward: doubles every spatial
/// extent. `weight` is `[c_in, c_out, 2, 2, 2]`; each output voxel receives
/// exactly one kernel tap, the adjoint of a stride-2 convolution.
pub fn tconv_forward(
    input: &[f64],
    c_in: usize,
    dims: Dims3,
    weight: &[f64],
    bias: &[f64],
    c_out: usize,
    output: &mut [f64],
) {
    let out = Dims3::new(dims.d * 2, dims.h * 2, dims.w * 2);
    let in_count = dims.count();
    let out_count = out.count();
    for oc in 0..c_out {
        output[oc * out_count..(oc + 1) * out_count].fill(bias[oc]);
    }
    // Repack to [c_out][tap][c_in] so the inner dot is contiguous.
    let mut wt = vec![0.0; weight.len()];
    for ic in 0..c_in {
        for oc in 0..c_out {
            for t in 0..8 {
                wt[(oc * 8 + t) * c_in + ic] = weight[(ic * c_out + oc) * 8 + t];
            }
        }
    }
    let mut in_vec = vec![0.0; c_in];
    for z in 0..dims.d {
        for y in 0..dims.h {
            for x in 0..dims.w {
                let v = dims.index(z, y, x);
                for (ic, slot) in in_vec.iter_mut().enumerate() {
                    *slot = input[ic * in_count + v];
                }
                for oc in 0..c_out {
                    let out_chan = &mut output[oc * out_count..(oc + 1) * out_count];
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let t = (dz * 2 + dy) * 2 + dx;
                                let wrow = &wt[(oc * 8 + t) * c_in..(oc * 8 + t + 1) * c_in];
                                let mut acc = 0.0;
                                for ic in 0..c_in {
                                    acc += wrow[ic] * in_vec[ic];
                                }
                                out_chan[out.index(z * 2 + dz, y * 2 + dy, x * 2 + dx)] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn tconv_backward(
    input: &[f64],
    c_in: usize,
    dims: Dims3,
    weight: &[f64],
    c_out: usize,
    grad_output: &[f64],
    grad_input: Option<&mut [f64]>,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) {
    let out = Dims3::new(dims.d * 2, dims.h * 2, dims.w * 2);
    let in_count = dims.count();
    let out_count = out.count();
    for oc in 0..c_out {
        grad_bias[oc] += grad_output[oc * out_count..(oc + 1) * out_count]
            .iter()
            .sum::<f64>();
    }
    let mut g_vec = vec![0.0; c_out * 8];
    let mut grad_input = grad_input;
    for z in 0..dims.d {
        for y in 0..dims.h {
            for x in 0..dims.w {
                let v = dims.index(z, y, x);
                for oc in 0..c_out {
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let t = (dz * 2 + dy) * 2 + dx;
                                g_vec[oc * 8 + t] = grad_output[oc * out_count
                                    + out.index(z * 2 + dz, y * 2 + dy, x * 2 + dx)];
                            }
                        }
                    }
                }
                for ic in 0..c_in {
                    // weight[ic, :, :] is one contiguous run of c_out * 8.
                    let wrow = &weight[ic * c_out * 8..(ic + 1) * c_out * 8];
                    if let Some(gi) = grad_input.as_deref_mut() {
                        let mut acc = 0.0;
                        for (wv, gv) in wrow.iter().zip(&g_vec) {
                            acc += wv * gv;
                        }
                        gi[ic * in_count + v] += acc;
                    }
                    let a = input[ic * in_count + v];
                    let gw = &mut grad_weight[ic * c_out * 8..(ic + 1) * c_out * 8];
                    for (gwv, gv) in gw.iter_mut().zip(&g_vec) {
                        *gwv += a * gv;
                    }
                }
            }
        }
    }
}

/// Per-channel batch statistics over the spatial voxels of one sample.
/// Returns (mean, biased variance) per channel.
pub fn channel_stats(input: &[f64], channels: usize, spatial: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    let n = spatial as f64;
    for c in 0..channels {
        let chan = &input[c * spatial..(c + 1) * spatial];
        let m = chan.iter().sum::<f64>() / n;
        let v = chan.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        mean[c] = m;
        var[c] = v;
    }
    (mean, var)
}

/// Normalizes with the given statistics: `y = scale * (x - mean) * inv_std + shift`.
pub fn batchnorm_apply(
    input: &[f64],
    channels: usize,
    spatial: usize,
    mean: &[f64],
    inv_std: &[f64],
    scale: &[f64],
    shift: &[f64],
    output: &mut [f64],
) {
    for c in 0..channels {
        let (m, s, g, b) = (mean[c], inv_std[c], scale[c], shift[c]);
        let src = &input[c * spatial..(c + 1) * spatial];
        let dst = &mut output[c * spatial..(c + 1) * spatial];
        for (o, x) in dst.iter_mut().zip(src) {
            *o = g * (x - m) * s + b;
        }
    }
}

/// Train-mode batch-norm backward, where mean and variance are functions of
/// the input.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_backward_train(
    input: &[f64],
    channels: usize,
    spatial: usize,
    mean: &[f64],
    inv_std: &[f64],
    scale: &[f64],
    grad_output: &[f64],
    grad_input: &mut [f64],
    grad_scale: &mut [f64],
    grad_shift: &mut [f64],
) {
    let n = spatial as f64;
    for c in 0..channels {
        let (m, s, g) = (mean[c], inv_std[c], scale[c]);
        let x = &input[c * spatial..(c + 1) * spatial];
        let dy = &grad_output[c * spatial..(c + 1) * spatial];
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for (xi, di) in x.iter().zip(dy) {
            let xh = (xi - m) * s;
            sum_dy += di;
            sum_dy_xhat += di * xh;
        }
        grad_shift[c] += sum_dy;
        grad_scale[c] += sum_dy_xhat;
        let gi = &mut grad_input[c * spatial..(c + 1) * spatial];
        let k1 = sum_dy / n;
        let k2 = sum_dy_xhat / n;
        for ((o, xi), di) in gi.iter_mut().zip(x).zip(dy) {
            let xh = (xi - m) * s;
            *o += g * s * (di - k1 - xh * k2);
        }
    }
}

/// Eval-mode batch-norm backward: the running statistics are constants.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_backward_eval(
    input: &[f64],
    channels: usize,
    spatial: usize,
    mean: &[f64],
    inv_std: &[f64],
    scale: &[f64],
    grad_output: &[f64],
    grad_input: &mut [f64],
    grad_scale: &mut [f64],
    grad_shift: &mut [f64],
) {
    for c in 0..channels {
        let (m, s, g) = (mean[c], inv_std[c], scale[c]);
        let x = &input[c * spatial..(c + 1) * spatial];
        let dy = &grad_output[c * spatial..(c + 1) * spatial];
        let gi = &mut grad_input[c * spatial..(c + 1) * spatial];
        for ((o, xi), di) in gi.iter_mut().zip(x).zip(dy) {
            grad_shift[c] += di;
            grad_scale[c] += di * (xi - m) * s;
            *o += g * s * di;
        }
    }
}

/// Per-voxel softmax across channels, stabilized by max subtraction.
pub fn softmax_channels(input: &[f64], channels: usize, spatial: usize, output: &mut [f64]) {
    for v in 0..spatial {
        let mut max = f64::NEG_INFINITY;
        for c in 0..channels {
            max = max.max(input[c * spatial + v]);
        }
        let mut sum = 0.0;
        for c in 0..channels {
            let e = (input[c * spatial + v] - max).exp();
            output[c * spatial + v] = e;
            sum += e;
        }
        for c in 0..channels {
            output[c * spatial + v] /= sum;
        }
    }
}

pub fn softmax_channels_backward(
    output: &[f64],
    channels: usize,
    spatial: usize,
    grad_output: &[f64],
    grad_input: &mut [f64],
) {
    for v in 0..spatial {
        let mut dot = 0.0;
        for c in 0..channels {
            dot += grad_output[c * spatial + v] * output[c * spatial + v];
        }
        for c in 0..channels {
            let y = output[c * spatial + v];
            grad_input[c * spatial + v] += y * (grad_output[c * spatial + v] - dot);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_conv(
        input: &[f64],
        c_in: usize,
        dims: Dims3,
        weight: &[f64],
        bias: &[f64],
        c_out: usize,
        k: usize,
        pad: usize,
    ) -> Vec<f64> {
        let out = conv_out_dims(dims, k, pad);
        let mut res = vec![0.0; c_out * out.count()];
        for oc in 0..c_out {
            for oz in 0..out.d {
                for oy in 0..out.h {
                    for ox in 0..out.w {
                        let mut acc = bias[oc];
                        for ic in 0..c_in {
                            for dz in 0..k {
                                for dy in 0..k {
                                    for dx in 0..k {
                                        let z = oz + dz;
                                        let y = oy + dy;
                                        let x = ox + dx;
                                        if z < pad
                                            || y < pad
                                            || x < pad
                                            || z >= dims.d + pad
                                            || y >= dims.h + pad
                                            || x >= dims.w + pad
                                        {
                                            continue;
                                        }
                                        let iv =
                                            input[ic * dims.count()
                                                + dims.index(z - pad, y - pad, x - pad)];
                                        let wv = weight
                                            [(((oc * c_in + ic) * k + dz) * k + dy) * k + dx];
                                        acc += iv * wv;
                                    }
                                }
                            }
                        }
                        res[oc * out.count() + out.index(oz, oy, ox)] = acc;
                    }
                }
            }
        }
        res
    }

    #[test]
    fn conv_matches_direct_summation() {
        // Deterministic pseudo-random fill without pulling in an RNG.
        let dims = Dims3::new(5, 4, 6);
        let c_in = 2;
        let c_out = 3;
        let k = 3;
        let input: Vec<f64> = (0..c_in * dims.count())
            .map(|i| ((i * 2654435761usize) % 1000) as f64 / 500.0 - 1.0)
            .collect();
        let weight: Vec<f64> = (0..c_out * c_in * 27)
            .map(|i| ((i * 40503usize) % 997) as f64 / 499.0 - 1.0)
            .collect();
        let bias = vec![0.25, -0.5, 0.0];
        for pad in [0usize, 1] {
            let out = conv_out_dims(dims, k, pad);
            let mut got = vec![0.0; c_out * out.count()];
            conv3_forward(&input, c_in, dims, &weight, &bias, c_out, k, pad, &mut got);
            let want = brute_conv(&input, c_in, dims, &weight, &bias, c_out, k, pad);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-9, "pad {pad}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn conv_all_ones_center_is_27() {
        let dims = Dims3::new(4, 4, 4);
        let input = vec![1.0; dims.count()];
        let weight = vec![1.0; 27];
        let mut out = vec![0.0; dims.count()];
        conv3_forward(&input, 1, dims, &weight, &[0.0], 1, 3, 1, &mut out);
        // Interior voxel sees the full 3x3x3 neighborhood.
        assert_eq!(out[dims.index(1, 1, 1)], 27.0);
        // A corner voxel sees only the 2x2x2 corner of the neighborhood.
        assert_eq!(out[dims.index(0, 0, 0)], 8.0);
    }

    #[test]
    fn conv_zero_input_zero_output() {
        let dims = Dims3::new(4, 4, 4);
        let input = vec![0.0; dims.count()];
        let weight: Vec<f64> = (0..2 * 27).map(|i| i as f64 * 0.1 - 1.0).collect();
        let mut out = vec![9.0; 2 * dims.count()];
        conv3_forward(&input, 1, dims, &weight, &[0.0, 0.0], 2, 3, 1, &mut out);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let dims = Dims3::new(2, 2, 2);
        let mut input = vec![0.0; 8];
        input[dims.index(1, 0, 1)] = 5.0;
        let mut out = vec![0.0; 1];
        let mut argmax = Vec::new();
        maxpool_forward(&input, 1, dims, &mut out, &mut argmax);
        assert_eq!(out[0], 5.0);
        let mut gi = vec![0.0; 8];
        maxpool_backward(&[2.0], &argmax, &mut gi);
        assert_eq!(gi[dims.index(1, 0, 1)], 2.0);
        assert_eq!(gi.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn tconv_stamps_kernel_at_impulse() {
        let dims = Dims3::new(2, 2, 2);
        let mut input = vec![0.0; dims.count()];
        input[dims.index(1, 0, 1)] = 1.0;
        let weight: Vec<f64> = (1..=8).map(|v| v as f64).collect(); // [1,1,2,2,2]
        let mut out = vec![0.0; 64];
        tconv_forward(&input, 1, dims, &weight, &[0.0], 1, &mut out);
        let od = Dims3::new(4, 4, 4);
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let t = (dz * 2 + dy) * 2 + dx;
                    assert_eq!(out[od.index(2 + dz, dy, 2 + dx)], weight[t]);
                }
            }
        }
        assert_eq!(out.iter().sum::<f64>(), 36.0);
    }

    #[test]
    #[ignore = "manual throughput probe; run with --release --ignored --nocapture"]
    fn conv_throughput_probe() {
        let dims = Dims3::new(32, 32, 48);
        let (c_in, c_out, k) = (16usize, 16usize, 3usize);
        let input: Vec<f64> = (0..c_in * dims.count())
            .map(|i| ((i * 2654435761usize) % 1000) as f64 / 500.0 - 1.0)
            .collect();
        let weight: Vec<f64> = (0..c_out * c_in * k * k * k)
            .map(|i| ((i * 40503usize) % 997) as f64 / 499.0 - 1.0)
            .collect();
        let bias = vec![0.0; c_out];
        let out = conv_out_dims(dims, k, 1);
        let mut output = vec![0.0; c_out * out.count()];
        let mut gi = vec![0.0; c_in * dims.count()];
        let mut gw = vec![0.0; weight.len()];
        let mut gb = vec![0.0; c_out];
        let flop_fwd = 2.0 * (c_out * out.count() * c_in * k * k * k) as f64;

        let t0 = std::time::Instant::now();
        let iters = 5;
        for _ in 0..iters {
            conv3_forward(&input, c_in, dims, &weight, &bias, c_out, k, 1, &mut output);
        }
        let fwd = t0.elapsed().as_secs_f64() / iters as f64;
        let t1 = std::time::Instant::now();
        for _ in 0..iters {
            conv3_backward(
                &input,
                c_in,
                dims,
                &weight,
                c_out,
                k,
                1,
                &output,
                Some(&mut gi),
                &mut gw,
                &mut gb,
            );
        }
        let bwd = t1.elapsed().as_secs_f64() / iters as f64;
        println!(
            "conv 16->16 k3 on 32x32x48: fwd {:.1} ms ({:.2} GFLOP/s), bwd {:.1} ms",
            fwd * 1e3,
            flop_fwd / fwd / 1e9,
            bwd * 1e3
        );
    }

    #[test]
    fn softmax_sums_to_one_and_is_stable() {
        let input = vec![1000.0, 0.0];
        let mut out = vec![0.0; 2];
        softmax_channels(&input, 2, 1, &mut out);
        assert!(out[0] > 0.999999 && out[1] < 1e-6);
        assert!((out[0] + out[1] - 1.0).abs() < 1e-12);
    }
}
