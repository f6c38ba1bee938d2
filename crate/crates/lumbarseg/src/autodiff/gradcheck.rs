//! Finite-difference verification of the backward pass.
//!
//! For selected parameter entries, compares the analytic gradient against a
//! central difference of the loss. Entries sitting on a non-differentiable
//! kink (ReLU corners, max-pool ties, box-overlap boundaries) are detected
//! by disagreement between the two one-sided differences and skipped rather
//! than counted as failures.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId, Padding};
use super::kernels::conv_out_dims;
use super::params::{register_bn, register_conv, register_tconv, GradBuffer, ParamId, ParamSet};
use super::{Dims3, TensorError};

/// One probe that exceeded the tolerance.
#[derive(Debug, Clone)]
pub struct FdFailure {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone, Default)]
pub struct FdReport {
    /// Probes compared against the analytic gradient.
    pub checked: usize,
    /// Probes skipped because the one-sided differences disagreed.
    pub kinks_skipped: usize,
    pub max_rel_error: f64,
    pub failures: Vec<FdFailure>,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

/// Relative error with an absolute floor so near-zero pairs compare sanely.
fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(0.01)
}

/// Draws `per_param` random entry indices from every trainable parameter.
pub fn sample_probes(
    params: &ParamSet,
    per_param: usize,
    rng: &mut impl Rng,
) -> Vec<(ParamId, usize)> {
    let mut probes = Vec::new();
    for id in params.ids() {
        if !params.trainable(id) {
            continue;
        }
        let n = params.value(id).len();
        if n <= per_param {
            probes.extend((0..n).map(|i| (id, i)));
        } else {
            let mut indices: Vec<usize> = (0..n).collect();
            indices.shuffle(rng);
            probes.extend(indices[..per_param].iter().map(|&i| (id, i)));
        }
    }
    probes
}

/// Compares analytic parameter gradients against central differences.
///
/// `forward` must rebuild the computation for the current parameter values
/// and return the graph plus its scalar loss node. Probes whose one-sided
/// differences disagree by more than `1e-3 + 0.05 * max(|d+|, |d-|)` are
/// recorded as kinks and skipped. Everything else must match the analytic
/// gradient within `tol` relative error (with a 0.01 magnitude floor).
pub fn finite_difference_check(
    params: &mut ParamSet,
    mut forward: impl FnMut(&ParamSet) -> Result<(Graph, NodeId), TensorError>,
    probes: &[(ParamId, usize)],
    step: f64,
    tol: f64,
) -> Result<FdReport, TensorError> {
    let (graph, loss) = forward(params)?;
    let base_loss = graph.value(loss)[0];
    if !base_loss.is_finite() {
        return Err(TensorError::NonFinite {
            context: "finite_difference_check base loss".into(),
        });
    }
    let mut grads = GradBuffer::zeros_like(params);
    graph.backward(loss, params, &mut grads)?;

    let mut report = FdReport::default();
    for &(id, index) in probes {
        let analytic = grads.grad(id)[index];
        let original = params.value(id)[index];

        params.value_mut(id)[index] = original + step;
        let (g_plus, l_plus) = forward(params)?;
        let loss_plus = g_plus.value(l_plus)[0];

        params.value_mut(id)[index] = original - step;
        let (g_minus, l_minus) = forward(params)?;
        let loss_minus = g_minus.value(l_minus)[0];

        params.value_mut(id)[index] = original;

        if !loss_plus.is_finite() || !loss_minus.is_finite() {
            return Err(TensorError::NonFinite {
                context: format!("perturbed loss for {}", params.name(id)),
            });
        }

        let d_plus = (loss_plus - base_loss) / step;
        let d_minus = (base_loss - loss_minus) / step;
        if (d_plus - d_minus).abs() > 1e-3 + 0.05 * d_plus.abs().max(d_minus.abs()) {
            report.kinks_skipped += 1;
            continue;
        }

        let numeric = (loss_plus - loss_minus) / (2.0 * step);
        let rel = rel_error(analytic, numeric);
        report.checked += 1;
        report.max_rel_error = report.max_rel_error.max(rel);
        if rel > tol {
            report.failures.push(FdFailure {
                param: params.name(id).to_string(),
                index,
                analytic,
                numeric,
                rel_error: rel,
            });
        }
    }
    Ok(report)
}

fn random_data(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn merge(into: &mut FdReport, from: FdReport) {
    into.checked += from.checked;
    into.kinks_skipped += from.kinks_skipped;
    into.max_rel_error = into.max_rel_error.max(from.max_rel_error);
    into.failures.extend(from.failures);
}

/// Runs one finite-difference trial over every trainable entry of `params`
/// (up to three probes each). When `corrupt` is set, the loss is scaled by
/// a factor computed from the parameter values outside the graph, so the
/// backward pass misses part of the true dependency while the difference
/// quotient sees it — used to prove the check can fail.
fn check_family(
    params: &mut ParamSet,
    rng: &mut impl Rng,
    corrupt: bool,
    build: impl Fn(&ParamSet, &mut Graph) -> Result<NodeId, TensorError>,
) -> Result<FdReport, TensorError> {
    let probes = sample_probes(params, 3, rng);
    finite_difference_check(
        params,
        |p| {
            let mut g = Graph::new(true);
            let loss = build(p, &mut g)?;
            let loss = if corrupt {
                let mut factor = 1.0;
                for id in p.ids() {
                    if p.trainable(id) {
                        factor += 0.5 * p.value(id).iter().sum::<f64>();
                    }
                }
                g.scale_shift(loss, factor, &[0.0])?
            } else {
                loss
            };
            Ok((g, loss))
        },
        &probes,
        1e-5,
        1e-4,
    )
}

/// Finite-difference sweep over every differentiable operation family:
/// convolutions (all kernel sizes and both padding modes), transposed
/// convolutions, batch normalization in training mode, ReLU/pool
/// composites, softmax with weighted cross-entropy, mean-squared error,
/// and the box-overlap loss. Each family gets `inputs_per_family` random
/// small inputs with freshly initialized parameters; reports are merged
/// per family. `corrupt` deliberately breaks the comparison (see
/// [`check_family`]) and must make the suite fail.
pub fn standard_suite(
    inputs_per_family: usize,
    seed: u64,
    corrupt: bool,
) -> Result<Vec<(&'static str, FdReport)>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut conv_report = FdReport::default();
    for trial in 0..inputs_per_family {
        let mut trng = ChaCha8Rng::seed_from_u64(rng.gen());
        let k = [1usize, 3, 4][trial % 3];
        let padding = if k == 4 { Padding::Valid } else { Padding::Same };
        let dims = Dims3::new(
            trng.gen_range(4..=5),
            trng.gen_range(4..=5),
            trng.gen_range(4..=5),
        );
        let pad = match padding {
            Padding::Same => k / 2,
            Padding::Valid => 0,
        };
        let c_in = trng.gen_range(1..=2);
        let c_out = trng.gen_range(1..=3);
        let mut params = ParamSet::new();
        let conv = register_conv(&mut params, &mut trng, "conv", c_in, c_out, k);
        let x = random_data(&mut trng, c_in * dims.count());
        let target = random_data(&mut trng, c_out * conv_out_dims(dims, k, pad).count());
        let report = check_family(&mut params, &mut trng, corrupt, |p, g| {
            let inp = g.input(c_in, dims, x.clone())?;
            let y = g.conv(p, inp, &conv, padding)?;
            g.mse_loss(y, &target)
        })?;
        merge(&mut conv_report, report);
    }
    out.push(("conv3d", conv_report));

    let mut tconv_report = FdReport::default();
    for _ in 0..inputs_per_family {
        let mut trng = ChaCha8Rng::seed_from_u64(rng.gen());
        let dims = Dims3::new(
            trng.gen_range(2..=3),
            trng.gen_range(2..=3),
            trng.gen_range(2..=3),
        );
        let c_in = trng.gen_range(1..=2);
        let c_out = trng.gen_range(1..=2);
        let mut params = ParamSet::new();
        let up = register_tconv(&mut params, &mut trng, "up", c_in, c_out);
        let x = random_data(&mut trng, c_in * dims.count());
        let target = random_data(&mut trng, c_out * dims.count() * 8);
        let report = check_family(&mut params, &mut trng, corrupt, |p, g| {
            let inp = g.input(c_in, dims, x.clone())?;
            let y = g.tconv_up2(p, inp, &up)?;
            g.mse_loss(y, &target)
        })?;
        merge(&mut tconv_report, report);
    }
    out.push(("transposed conv", tconv_report));

    let mut bn_report = FdReport::default();
    for _ in 0..inputs_per_family {
        let mut trng = ChaCha8Rng::seed_from_u64(rng.gen());
        let dims = Dims3::new(
            trng.gen_range(3..=4),
            trng.gen_range(3..=4),
            trng.gen_range(3..=4),
        );
        let c = trng.gen_range(2..=3);
        let mut params = ParamSet::new();
        let conv = register_conv(&mut params, &mut trng, "pre", 1, c, 1);
        let bn = register_bn(&mut params, "norm", c);
        let x = random_data(&mut trng, dims.count());
        let target = random_data(&mut trng, c * dims.count());
        let report = check_family(&mut params, &mut trng, corrupt, |p, g| {
            let inp = g.input(1, dims, x.clone())?;
            let y = g.conv(p, inp, &conv, Padding::Same)?;
            let y = g.batchnorm(p, y, &bn)?;
            g.mse_loss(y, &target)
        })?;
        merge(&mut bn_report, report);
    }
    out.push(("batch norm (training)", bn_report));

    let mut relu_report = FdReport::default();
    for _ in 0..inputs_per_family {
        let mut trng = ChaCha8Rng::seed_from_u64(rng.gen());
        let dims = Dims3::new(4, 4, 4);
        let c = trng.gen_range(2..=3);
        let mut params = ParamSet::new();
        let conv0 = register_conv(&mut params, &mut trng, "c0", 1, c, 3);
        let bn0 = register_bn(&mut params, "b0", c);
        let conv1 = register_conv(&mut params, &mut trng, "c1", c, 2, 1);
        let x = random_data(&mut trng, dims.count());
        let labels: Vec<u8> = (0..dims.count() / 8).map(|_| trng.gen_range(0..2)).collect();
        let w1 = trng.gen_range(0.5..3.0);
        let report = check_family(&mut params, &mut trng, corrupt, |p, g| {
            let inp = g.input(1, dims, x.clone())?;
            let y = g.conv(p, inp, &conv0, Padding::Same)?;
            let y = g.batchnorm(p, y, &bn0)?;
            let y = g.relu(y);
            let y = g.maxpool2(y)?;
            let y = g.conv(p, y, &conv1, Padding::Same)?;
            g.weighted_ce_loss(y, &labels, &[1.0, w1])
        })?;
        merge(&mut relu_report, report);
    }
    out.push(("relu composite", relu_report));

    let mut ce_report = FdReport::default();
    for _ in 0..inputs_per_family {
        let mut trng = ChaCha8Rng::seed_from_u64(rng.gen());
        let dims = Dims3::new(
            trng.gen_range(2..=3),
            trng.gen_range(2..=3),
            trng.gen_range(2..=3),
        );
        let classes = trng.gen_range(2..=4);
        let mut params = ParamSet::new();
        let conv = register_conv(&mut params, &mut trng, "head", 1, classes, 1);
        let x = random_data(&mut trng, dims.count());
        let labels: Vec<u8> = (0..dims.count())
            .map(|_| trng.gen_range(0..classes as u8))
            .collect();
        let weights: Vec<f64> = (0..classes).map(|_| trng.gen_range(0.5..2.0)).collect();
        let report = check_family(&mut params, &mut trng, corrupt, |p, g| {
            let inp = g.input(1, dims, x.clone())?;
            let y = g.conv(p, inp, &conv, Padding::Same)?;
            g.weighted_ce_loss(y, &labels, &weights)
        })?;
        merge(&mut ce_report, report);
    }
    out.push(("softmax cross-entropy", ce_report));

    let mut mse_report = FdReport::default();
    for _ in 0..inputs_per_family {
        let mut trng = ChaCha8Rng::seed_from_u64(rng.gen());
        let dims = Dims3::new(
            trng.gen_range(2..=3),
            trng.gen_range(2..=3),
            trng.gen_range(2..=3),
        );
        let mut params = ParamSet::new();
        let conv = register_conv(&mut params, &mut trng, "lin", 1, 1, 1);
        let x = random_data(&mut trng, dims.count());
        let target = random_data(&mut trng, dims.count());
        let shift = random_data(&mut trng, dims.count());
        let scale = trng.gen_range(0.5..1.5);
        let report = check_family(&mut params, &mut trng, corrupt, |p, g| {
            let inp = g.input(1, dims, x.clone())?;
            let y = g.conv(p, inp, &conv, Padding::Same)?;
            let y = g.scale_shift(y, scale, &shift)?;
            g.mse_loss(y, &target)
        })?;
        merge(&mut mse_report, report);
    }
    out.push(("mse", mse_report));

    let mut iou_report = FdReport::default();
    for _ in 0..inputs_per_family {
        let mut trng = ChaCha8Rng::seed_from_u64(rng.gen());
        let mut params = ParamSet::new();
        let conv = register_conv(&mut params, &mut trng, "box", 1, 6, 1);
        let x = vec![trng.gen_range(0.1..0.5)];
        let spread = [-1.0, -1.0, -1.0, 1.5, 1.5, 1.5];
        let mut target = [0.0; 6];
        for axis in 0..3 {
            target[axis] = trng.gen_range(-0.6..-0.4);
            target[3 + axis] = trng.gen_range(1.2..1.6);
        }
        let report = check_family(&mut params, &mut trng, corrupt, |p, g| {
            let inp = g.input(1, Dims3::new(1, 1, 1), x.clone())?;
            let y = g.conv(p, inp, &conv, Padding::Same)?;
            let y = g.scale_shift(y, 1.0, &spread)?;
            g.iou_loss(y, target)
        })?;
        merge(&mut iou_report, report);
    }
    out.push(("iou", iou_report));

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_model_gradient_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamSet::new();
        let conv = register_conv(&mut params, &mut rng, "lin", 1, 1, 1);
        let x = vec![0.7, -0.3, 1.1, 0.4];
        let target = vec![1.0, 0.0, -1.0, 0.5];
        let probes: Vec<_> = sample_probes(&params, 4, &mut rng);
        let report = finite_difference_check(
            &mut params,
            |p| {
                let mut g = Graph::new(true);
                let inp = g.input(1, Dims3::new(1, 2, 2), x.clone())?;
                let y = g.conv(p, inp, &conv, crate::autodiff::graph::Padding::Same)?;
                let loss = g.mse_loss(y, &target)?;
                Ok((g, loss))
            },
            &probes,
            1e-5,
            1e-7,
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.failures);
        assert_eq!(report.kinks_skipped, 0);
    }

    #[test]
    fn relu_corner_is_detected_as_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamSet::new();
        let conv = register_conv(&mut params, &mut rng, "lin", 1, 1, 1);
        // Park the weight exactly on the ReLU corner.
        params.value_mut(conv.weight)[0] = 0.0;
        let probes = vec![(conv.weight, 0)];
        let report = finite_difference_check(
            &mut params,
            |p| {
                let mut g = Graph::new(true);
                let inp = g.input(1, Dims3::new(1, 1, 1), vec![1.0])?;
                let y = g.conv(p, inp, &conv, crate::autodiff::graph::Padding::Same)?;
                let y = g.relu(y);
                let loss = g.mse_loss(y, &[1.0])?;
                Ok((g, loss))
            },
            &probes,
            1e-4,
            1e-4,
        )
        .unwrap();
        assert_eq!(report.kinks_skipped, 1);
        assert_eq!(report.checked, 0);
    }

    #[test]
    fn small_network_with_norm_and_pool_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut params = ParamSet::new();
        let conv0 = register_conv(&mut params, &mut rng, "c0", 1, 3, 3);
        let bn0 = register_bn(&mut params, "b0", 3);
        let conv1 = register_conv(&mut params, &mut rng, "c1", 3, 2, 1);
        let dims = Dims3::new(4, 4, 4);
        let x: Vec<f64> = (0..dims.count())
            .map(|i| ((i * 37) % 17) as f64 / 8.0 - 1.0)
            .collect();
        let labels: Vec<u8> = (0..(dims.count() / 8)).map(|i| (i % 2) as u8).collect();
        let probes = sample_probes(&params, 6, &mut rng);
        let report = finite_difference_check(
            &mut params,
            |p| {
                let mut g = Graph::new(true);
                let inp = g.input(1, dims, x.clone())?;
                let y = g.conv(p, inp, &conv0, crate::autodiff::graph::Padding::Same)?;
                let y = g.batchnorm(p, y, &bn0)?;
                let y = g.relu(y);
                let y = g.maxpool2(y)?;
                let y = g.conv(p, y, &conv1, crate::autodiff::graph::Padding::Same)?;
                let loss = g.weighted_ce_loss(y, &labels, &[1.0, 2.0])?;
                Ok((g, loss))
            },
            &probes,
            1e-4,
            1e-4,
        )
        .unwrap();
        assert!(
            report.passed(),
            "max rel {} failures {:?}",
            report.max_rel_error,
            report.failures
        );
    }

    #[test]
    fn standard_suite_covers_every_family() {
        let reports = standard_suite(2, 11, false).unwrap();
        assert_eq!(reports.len(), 7);
        for (name, report) in &reports {
            assert!(
                report.passed(),
                "family {name}: max rel {} failures {:?}",
                report.max_rel_error,
                report.failures
            );
        }
    }

    #[test]
    fn corrupted_suite_reports_failures() {
        let reports = standard_suite(2, 11, true).unwrap();
        assert!(
            reports.iter().any(|(_, r)| !r.failures.is_empty()),
            "a corrupted gradient must not pass the sweep"
        );
    }
}
