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

    let base = LocNetConfig {
        widths: [8, 16, 32],
        head_features: 128,
        head_hidden: 32,
        infer_reference_budget: 256,
        train_references_per_volume: 12,
        round1_epochs: 12,
        round2_epochs: 0,
        ..LocNetConfig::default()
    };

    for (name, config) in [
        (
            "lr 1e-3",
            LocNetConfig {
                round1_lr: 1e-3,
                ..base.clone()
            },
        ),
        (
            "lr 3e-4",
            LocNetConfig {
                round1_lr: 3e-4,
                ..base.clone()
            },
        ),
        (
            "lr 1e-4",
            LocNetConfig {
                round1_lr: 1e-4,
                ..base.clone()
            },
        ),
    ] {
        let t = Instant::now();
        let trained = train_localizer(&roi_cases, &config, 0).unwrap();
        println!(
            "{name}: {:.0} s, r1 losses {:?}",
            t.elapsed().as_secs_f64(),
            trained
                .round1_losses
                .iter()
                .map(|l| (l * 1e4).round() / 1e4)
                .collect::<Vec<_>>()
        );
        for (tag, set) in [("train", &train[..3]), ("held", &held[..])] {
            let mut ious = Vec::new();
            for (v, _, truth) in set {
                let roi =
                    predict_roi(v, &trained.checkpoint.params, &trained.model, &config, 0)
                        .unwrap();
                ious.push(roi.bbox.iou(truth));
            }
            let mean = ious.iter().sum::<f64>() / ious.len() as f64;
            println!(
                "  {tag} iou {:?} mean {mean:.3}",
                ious.iter().map(|i| (i * 1e3).round() / 1e3).collect::<Vec<_>>()
            );
        }
    }
}
