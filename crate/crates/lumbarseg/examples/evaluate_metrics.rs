//! Scores a deliberately degraded copy of a phantom's labels against the
//! original: the full per-vertebra report first, then the individual
//! overlap and surface-distance calls it is built from.
//!
//! Run with: `cargo run --example evaluate_metrics`

use std::error::Error;

use lumbarseg::dataset::{gen_phantom, LabelVolume, PhantomSpec};
use lumbarseg::metrics::{
    dice, evaluate, extract_surface, jaccard, render_report_table, surface_distances,
};

/// Shifts every label one voxel along x and erases one vertebra entirely,
/// imitating a prediction with a registration error and a missed level.
fn degrade(truth: &LabelVolume) -> LabelVolume {
    let dims = truth.extents();
    let mut out = LabelVolume::zeros(truth.geometry());
    for z in 0..dims.d {
        for y in 0..dims.h {
            for x in 1..dims.w {
                let label = truth.get(z, y, x - 1);
                if label != 3 {
                    out.set(z, y, x, label);
                }
            }
        }
    }
    out
}

fn main() -> Result<(), Box<dyn Error>> {
    let (_, truth, _) = gen_phantom(&PhantomSpec {
        seed: 11,
        ..PhantomSpec::default()
    })?;
    let predicted = degrade(&truth);

    let report = evaluate(&predicted, &truth)?;
    print!("{}", render_report_table(&report));
    if !report.mismatched.is_empty() {
        println!("labels in only one volume: {:?}", report.mismatched);
    }

    println!("\nthe same numbers from the individual metric calls, label 1:");
    let dc = dice(&predicted, &truth, 1)?.expect("label 1 present in both");
    let jc = jaccard(&predicted, &truth, 1)?.expect("label 1 present in both");
    let surf_p = extract_surface(&predicted, 1);
    let surf_t = extract_surface(&truth, 1);
    let d = surface_distances(&surf_p, &surf_t).expect("both surfaces non-empty");
    println!("  dice        {dc:.4}");
    println!("  jaccard     {jc:.4}");
    println!("  hausdorff   {:.3} mm", d.hausdorff_mm);
    println!("  avg surface {:.3} mm", d.assd_mm);
    println!(
        "  ({} and {} surface voxels)",
        surf_p.points.len(),
        surf_t.points.len()
    );
    Ok(())
}
