//! The full pipeline on a held-out phantom: train the localizer and the
//! two-stage segmenter on three cases, then localize, crop, segment, and
//! post-process a fourth case and score it against its ground truth.
//!
//! Run with: `cargo run --release --example segment_volume`

use std::error::Error;

use lumbarseg::autodiff::Dims3;
use lumbarseg::dataset::{gen_phantom, PhantomSpec};
use lumbarseg::locnet::{train_localizer, LocNetConfig, RoiCase};
use lumbarseg::metrics::{evaluate, render_report_table};
use lumbarseg::segnet::{segment_volume, train_binary, train_multiclass, SegCase, SegNetConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let cases: Vec<_> = (0..3u64)
        .map(|seed| {
            gen_phantom(&PhantomSpec {
                seed,
                ..PhantomSpec::default()
            })
        })
        .collect::<Result<_, _>>()?;

    let loc_config = LocNetConfig {
        widths: [4, 8, 16],
        head_features: 32,
        head_hidden: 16,
        train_references_per_volume: 8,
        infer_reference_budget: 128,
        round1_epochs: 3,
        round2_epochs: 1,
        ..LocNetConfig::default()
    };
    let roi_cases: Vec<RoiCase> = cases
        .iter()
        .map(|(volume, _, bbox)| RoiCase { volume, bbox })
        .collect();
    println!("training localizer on {} cases...", roi_cases.len());
    let localizer = train_localizer(&roi_cases, &loc_config, 0)?;

    let seg_base = SegNetConfig {
        depth: 2,
        base_width: 4,
        patch_extents: Dims3::new(16, 16, 32),
        patches_per_volume: 2,
        epochs: 2,
        ..SegNetConfig::default()
    };
    let seg_cases: Vec<SegCase> = cases
        .iter()
        .map(|(volume, labels, bbox)| SegCase {
            volume,
            labels,
            bbox,
        })
        .collect();
    println!("training segmenter (binary stage)...");
    let binary = train_binary(
        &seg_cases,
        &SegNetConfig {
            class_count: 2,
            ..seg_base.clone()
        },
        1,
    )?;
    println!("training segmenter (multi-class stage)...");
    let seg_config = SegNetConfig {
        class_count: 6,
        ..seg_base
    };
    let segmenter = train_multiclass(&seg_cases, &binary.checkpoint, &seg_config, 2)?;

    let (held_volume, held_labels, _) = gen_phantom(&PhantomSpec {
        seed: 99,
        ..PhantomSpec::default()
    })?;
    println!("segmenting held-out case...");
    let outcome = segment_volume(
        &held_volume,
        &localizer.checkpoint.params,
        &localizer.model,
        &loc_config,
        &segmenter.checkpoint.params,
        &segmenter.model,
        &seg_config,
        0,
    )?;

    let low = outcome.roi.corner_low();
    let high = outcome.roi.corner_high();
    println!(
        "predicted region ({:.1}, {:.1}, {:.1}) .. ({:.1}, {:.1}, {:.1}) from {} votes\n",
        low[0], low[1], low[2], high[0], high[1], high[2], outcome.references_used
    );

    let report = evaluate(&outcome.labels, &held_labels)?;
    print!("{}", render_report_table(&report));
    Ok(())
}
