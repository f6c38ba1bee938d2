use std::time::Instant;

use lumbarseg::dataset::{gen_phantom, PhantomSpec};
use lumbarseg::locnet::{predict_roi, train_localizer, LocNetConfig, RoiCase};

fn main() {
    let train: Vec<_> = (0..12u64)
        .map(|seed| {
            gen_phantom(&PhantomSpec {
                seed,
                ..PhantomSpec::default()
            })
            .unwrap()
        })
        .collect();
    let held: Vec<_> = (100..103u64)
        .map(|seed| {
            gen_phantom(&PhantomSpec {
                seed,
                ..PhantomSpec::default()
            })
            .unwrap()
        })
        .collect();
    let roi_cases: Vec<RoiCase> = train
        .iter()
        .map(|(v, _, b)| RoiCase {
            volume: v,
            bbox: b,
        })
        .collect();

    let desk = LocNetConfig {
        widths: [8, 16, 32],
        head_features: 128,
        head_hidden: 32,
        infer_reference_budget: 256,
        train_references_per_volume: 12,
        round1_epochs: 6,
        round2_epochs: 2,
        ..LocNetConfig::default()
    };

    for (name, config) in [
        (
            "A0 desk r2=0   (864 steps)",
            LocNetConfig {
                round2_epochs: 0,
                ..desk.clone()
            },
        ),
        ("A  desk        (864+288)", desk.clone()),
        (
            "B  4x steps    (3456+1152)",
            LocNetConfig {
                train_references_per_volume: 24,
                round1_epochs: 12,
                round2_epochs: 4,
                ..desk.clone()
            },
        ),
    ] {
        let t = Instant::now();
        let trained = train_localizer(&roi_cases, &config, 0).unwrap();
        let train_s = t.elapsed().as_secs_f64();
        let r1 = *trained.round1_losses.last().unwrap();
        let r2 = trained.round2_losses.last().copied().unwrap_or(f64::NAN);
        println!("{name}: {train_s:.0} s train, final r1 {r1:.4} r2 {r2:.4}");
        let mut ious = Vec::new();
        for (i, (v, _, truth)) in held.iter().enumerate() {
            let roi = predict_roi(v, &trained.checkpoint.params, &trained.model, &config, 0)
                .unwrap();
            let p = roi.bbox.to_array6();
            let t6 = truth.to_array6();
            let maxerr = p
                .iter()
                .zip(&t6)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            let iou = roi.bbox.iou(truth);
            ious.push(iou);
            println!("  held {i}: iou {iou:.3}  max corner err {maxerr:.1} vox");
        }
        let mean = ious.iter().sum::<f64>() / ious.len() as f64;
        println!("  mean iou {mean:.3}");
    }
}
