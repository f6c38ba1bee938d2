//! Verifies the backward pass against finite differences, two ways: the
//! built-in sweep over every operation family, and a hand-rolled check of
//! one small network showing the raw API.
//!
//! Run with: `cargo run --example gradient_check`

use std::error::Error;

use lumbarseg::autodiff::{
    finite_difference_check, register_bn, register_conv, sample_probes, standard_suite, Dims3,
    Graph, Padding, ParamSet,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn Error>> {
    println!("built-in sweep, 5 random inputs per family:");
    for (family, report) in standard_suite(5, 42, false)? {
        println!(
            "  {family:<24} {:>4} probes, {} kinks skipped, max rel error {:.2e}",
            report.checked, report.kinks_skipped, report.max_rel_error
        );
        assert!(report.passed(), "{family} failed: {:?}", report.failures);
    }

    // The same machinery by hand: a conv → norm → relu block against a
    // mean-squared-error target.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut params = ParamSet::new();
    let conv = register_conv(&mut params, &mut rng, "demo.conv", 1, 4, 3);
    let bn = register_bn(&mut params, "demo.norm", 4);
    let dims = Dims3::new(5, 5, 5);
    let input: Vec<f64> = (0..dims.count()).map(|i| (i as f64 * 0.13).sin()).collect();
    let target: Vec<f64> = (0..4 * dims.count())
        .map(|i| (i as f64 * 0.07).cos())
        .collect();

    let probes = sample_probes(&params, 4, &mut rng);
    let report = finite_difference_check(
        &mut params,
        |p| {
            let mut g = Graph::new(true);
            let x = g.input(1, dims, input.clone())?;
            let y = g.conv(p, x, &conv, Padding::Same)?;
            let y = g.batchnorm(p, y, &bn)?;
            let y = g.relu(y);
            let loss = g.mse_loss(y, &target)?;
            Ok((g, loss))
        },
        &probes,
        1e-5,
        1e-4,
    )?;

    println!(
        "\nhand-rolled conv+norm+relu block: {} probes, {} kinks skipped, max rel error {:.2e}",
        report.checked, report.kinks_skipped, report.max_rel_error
    );
    assert!(report.passed());
    println!("all gradients match finite differences");
    Ok(())
}
