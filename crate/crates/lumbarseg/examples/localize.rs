//! Trains the localization network on synthetic phantoms, then predicts
//! the lumbar region of a held-out case: edge-detected reference voxels
//! each vote for the two box corners, and kernel density estimation fuses
//! the votes.
//!
//! Run with: `cargo run --example localize`

use std::error::Error;

use lumbarseg::dataset::{gen_phantom, PhantomSpec};
use lumbarseg::locnet::{predict_roi, train_localizer, LocNetConfig, RoiCase};

fn main() -> Result<(), Box<dyn Error>> {
    // Small widths and budgets keep this demo in the seconds range.
    let config = LocNetConfig {
        widths: [4, 8, 16],
        head_features: 32,
        head_hidden: 16,
        train_references_per_volume: 8,
        infer_reference_budget: 128,
        round1_epochs: 3,
        round2_epochs: 1,
        ..LocNetConfig::default()
    };

    let cases: Vec<_> = (0..3u64)
        .map(|seed| {
            gen_phantom(&PhantomSpec {
                seed,
                ..PhantomSpec::default()
            })
        })
        .collect::<Result<_, _>>()?;
    let roi_cases: Vec<RoiCase> = cases
        .iter()
        .map(|(volume, _, bbox)| RoiCase { volume, bbox })
        .collect();

    let trained = train_localizer(&roi_cases, &config, 0)?;
    println!("round 1 (squared error on normalized offsets):");
    for (i, loss) in trained.round1_losses.iter().enumerate() {
        println!("  epoch {}: {loss:.4}", i + 1);
    }
    println!("round 2 (negative log box overlap):");
    for (i, loss) in trained.round2_losses.iter().enumerate() {
        println!("  epoch {}: {loss:.4}", i + 1);
    }
    println!(
        "round handoff verified: {}",
        trained.handoff_hash == trained.round2_start_hash
    );

    let (held_volume, _, held_box) = gen_phantom(&PhantomSpec {
        seed: 99,
        ..PhantomSpec::default()
    })?;
    let roi = predict_roi(
        &held_volume,
        &trained.checkpoint.params,
        &trained.model,
        &config,
        0,
    )?;

    let p = (roi.bbox.corner_low(), roi.bbox.corner_high());
    let t = (held_box.corner_low(), held_box.corner_high());
    println!("\nheld-out case:");
    println!(
        "  predicted ({:5.1}, {:5.1}, {:5.1}) .. ({:5.1}, {:5.1}, {:5.1})",
        p.0[0], p.0[1], p.0[2], p.1[0], p.1[1], p.1[2]
    );
    println!(
        "  truth     ({:5.1}, {:5.1}, {:5.1}) .. ({:5.1}, {:5.1}, {:5.1})",
        t.0[0], t.0[1], t.0[2], t.1[0], t.1[1], t.1[2]
    );
    println!(
        "  overlap (IoU) {:.3} from {} reference voxels, {} corner votes",
        roi.bbox.iou(&held_box),
        roi.references_used,
        roi.votes.low.len() + roi.votes.high.len(),
    );
    Ok(())
}
