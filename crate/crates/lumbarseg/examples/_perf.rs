use std::time::Instant;

use lumbarseg::autodiff::Dims3;
use lumbarseg::dataset::{gen_phantom, PhantomSpec};
use lumbarseg::locnet::{predict_roi, train_localizer, LocNetConfig, RoiCase};
use lumbarseg::segnet::{train_binary, SegCase, SegNetConfig};

fn main() {
    let (v, l, b) = gen_phantom(&PhantomSpec::default()).unwrap();
    let loc_cases = vec![RoiCase {
        volume: &v,
        bbox: &b,
    }];
    let seg_cases = vec![SegCase {
        volume: &v,
        labels: &l,
        bbox: &b,
    }];

    // Localizer: per fwd+bwd step cost at three sizes.
    for (name, widths, hf, hh) in [
        ("loc [4,8,16]/32/16", [4usize, 8, 16], 32usize, 16usize),
        ("loc [6,12,24]/64/24", [6, 12, 24], 64, 24),
        ("loc [8,16,32]/128/32", [8, 16, 32], 128, 32),
    ] {
        let config = LocNetConfig {
            widths,
            head_features: hf,
            head_hidden: hh,
            train_references_per_volume: 8,
            round1_epochs: 1,
            round2_epochs: 1,
            ..LocNetConfig::default()
        };
        let t = Instant::now();
        train_localizer(&loc_cases, &config, 0).unwrap();
        let dt = t.elapsed().as_secs_f64();
        println!("{name}: 16 steps in {dt:.2} s = {:.0} ms/step", dt / 16.0 * 1000.0);

        let t = Instant::now();
        let trained = train_localizer(&loc_cases, &config, 0).unwrap();
        let roi = predict_roi(&v, &trained.checkpoint.params, &trained.model, &config, 0).unwrap();
        let infer = t.elapsed().as_secs_f64() - dt;
        println!(
            "  infer {} refs: {infer:.2} s = {:.0} ms/ref",
            roi.references_used,
            infer / roi.references_used as f64 * 1000.0
        );
    }

    // Segmenter: per-step cost at three sizes (2 patches x 1 epoch = 2 steps).
    for (name, depth, base, pd, ph, pw) in [
        ("seg d2 b4 16x16x32", 2usize, 4usize, 16usize, 16, 32),
        ("seg d3 b8 24x24x40", 3, 8, 24, 24, 40),
        ("seg d3 b16 32x32x48", 3, 16, 32, 32, 48),
    ] {
        let config = SegNetConfig {
            depth,
            base_width: base,
            class_count: 2,
            patch_extents: Dims3::new(pd, ph, pw),
            patches_per_volume: 2,
            epochs: 1,
            ..SegNetConfig::default()
        };
        let t = Instant::now();
        train_binary(&seg_cases, &config, 0).unwrap();
        let dt = t.elapsed().as_secs_f64();
        println!("{name}: 2 steps in {dt:.2} s = {:.0} ms/step", dt / 2.0 * 1000.0);
    }
}
