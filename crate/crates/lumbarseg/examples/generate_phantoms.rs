//! Generates a few synthetic phantom cases and shows the exact ground
//! truth each one carries: per-label voxel counts and the tight lumbar
//! bounding box.
//!
//! Run with: `cargo run --example generate_phantoms`

use std::error::Error;

use lumbarseg::dataset::{gen_phantom, save_box, save_labels, save_volume, PhantomSpec};

fn main() -> Result<(), Box<dyn Error>> {
    let out_dir = std::env::temp_dir().join("lumbarseg-phantoms");
    std::fs::create_dir_all(&out_dir)?;

    for seed in 0..3u64 {
        let spec = PhantomSpec {
            seed,
            ..PhantomSpec::default()
        };
        let (volume, labels, bbox) = gen_phantom(&spec)?;

        let mut counts = [0usize; 6];
        for &l in labels.data() {
            counts[l as usize] += 1;
        }
        let low = bbox.corner_low();
        let high = bbox.corner_high();
        println!(
            "case {seed}: extents {:?}, box ({:.1}, {:.1}, {:.1}) .. ({:.1}, {:.1}, {:.1}) mm",
            volume.extents().to_vec(),
            low[0],
            low[1],
            low[2],
            high[0],
            high[1],
            high[2],
        );
        println!("  vertebra voxels (labels 1..=5): {:?}", &counts[1..]);

        let stem = out_dir.join(format!("case{seed:03}"));
        save_volume(&volume, &stem.with_extension("vol.hdr"))?;
        save_labels(&labels, &stem.with_extension("lab.hdr"))?;
        save_box(&bbox, &stem.with_extension("box.txt"))?;
    }

    println!("\nwrote case files to {}", out_dir.display());
    Ok(())
}
