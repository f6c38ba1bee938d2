//! Trains the segmentation network in its two stages: a binary
//! vertebra-vs-background pass first, then a multi-class pass (five
//! vertebrae plus background) whose shared layers start from the binary
//! weights. The shared-parameter hashes prove the handoff.
//!
//! Run with: `cargo run --example train_segmenter`

use std::error::Error;

use lumbarseg::autodiff::Dims3;
use lumbarseg::dataset::{gen_phantom, PhantomSpec};
use lumbarseg::segnet::{train_binary, train_multiclass, SegCase, SegNetConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let cases: Vec<_> = (0..3u64)
        .map(|seed| {
            gen_phantom(&PhantomSpec {
                seed,
                ..PhantomSpec::default()
            })
        })
        .collect::<Result<_, _>>()?;
    let seg_cases: Vec<SegCase> = cases
        .iter()
        .map(|(volume, labels, bbox)| SegCase {
            volume,
            labels,
            bbox,
        })
        .collect();

    // A shallow network on small patches; the full-size defaults train the
    // same way, just slower.
    let base = SegNetConfig {
        depth: 2,
        base_width: 4,
        patch_extents: Dims3::new(16, 16, 32),
        patches_per_volume: 2,
        epochs: 2,
        ..SegNetConfig::default()
    };

    let binary_config = SegNetConfig {
        class_count: 2,
        ..base.clone()
    };
    let binary = train_binary(&seg_cases, &binary_config, 0)?;
    println!("binary stage (vertebra vs background):");
    println!("  class weights {:?}", binary.class_weights);
    for (i, loss) in binary.epoch_losses.iter().enumerate() {
        println!("  epoch {}: {loss:.4}", i + 1);
    }

    let multi_config = SegNetConfig {
        class_count: 6,
        ..base
    };
    let multi = train_multiclass(&seg_cases, &binary.checkpoint, &multi_config, 1)?;
    println!("multi-class stage (background + five vertebrae):");
    println!("  class weights {:?}", multi.class_weights);
    for warning in &multi.weight_warnings {
        println!("  note: {warning}");
    }
    for (i, loss) in multi.epoch_losses.iter().enumerate() {
        println!("  epoch {}: {loss:.4}", i + 1);
    }

    let (from_binary, at_start) = multi
        .init_hashes
        .expect("multi-class training always records the handoff hashes");
    println!("shared weights out of binary stage  {from_binary}");
    println!("shared weights into multi-class     {at_start}");
    println!("handoff verified: {}", from_binary == at_start);
    Ok(())
}
