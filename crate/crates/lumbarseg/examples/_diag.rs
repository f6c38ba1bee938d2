use lumbarseg::autodiff::{Dims3, Graph};
use lumbarseg::dataset::{gen_phantom, PhantomSpec};
use lumbarseg::locnet::{
    canny3d, extract_patch, kde_aggregate, standardize, train_localizer, CornerVotes,
    LocNetConfig, RoiCase, PATCH_EDGE,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

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
    let roi_cases: Vec<RoiCase> = train
        .iter()
        .map(|(v, _, b)| RoiCase {
            volume: v,
            bbox: b,
        })
        .collect();
    let config = LocNetConfig {
        widths: [8, 16, 32],
        head_features: 128,
        head_hidden: 32,
        infer_reference_budget: 256,
        train_references_per_volume: 12,
        round1_epochs: 6,
        round2_epochs: 2,
        ..LocNetConfig::default()
    };
    let trained = train_localizer(&roi_cases, &config, 0).unwrap();
    eprintln!("trained; r1 {:?}", trained.round1_losses);

    let (volume, _, truth) = gen_phantom(&PhantomSpec {
        seed: 100,
        ..PhantomSpec::default()
    })
    .unwrap();
    let t6 = truth.to_array6();
    println!("truth box {t6:?}");

    let edges = canny3d(&volume, config.sigma, config.low_threshold, config.high_threshold)
        .unwrap();
    let mut refs = edges.positions;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    refs.shuffle(&mut rng);
    refs.truncate(256);
    println!("{} refs", refs.len());

    let cube = Dims3::new(PATCH_EDGE, PATCH_EDGE, PATCH_EDGE);
    // err[k] per reference: (ref + 64*out)[k] - truth[k]
    let mut inside: Vec<[f64; 6]> = Vec::new();
    let mut outside: Vec<[f64; 6]> = Vec::new();
    let mut votes = CornerVotes {
        low: Vec::new(),
        high: Vec::new(),
    };
    for &r in &refs {
        let mut patch = extract_patch(&volume, r);
        standardize(&mut patch);
        let mut graph = Graph::new(false);
        let input = graph.input(1, cube, patch).unwrap();
        let out = trained
            .model
            .forward(&mut graph, &trained.checkpoint.params, input)
            .unwrap();
        let o = graph.value(out);
        let rr = [r[0] as f64, r[1] as f64, r[2] as f64];
        let mut err = [0.0f64; 6];
        for k in 0..6 {
            let corner = rr[k % 3] + config.norm_constant * o[k];
            err[k] = corner - t6[k];
        }
        votes.low.push([
            rr[0] + 64.0 * o[0],
            rr[1] + 64.0 * o[1],
            rr[2] + 64.0 * o[2],
        ]);
        votes.high.push([
            rr[0] + 64.0 * o[3],
            rr[1] + 64.0 * o[4],
            rr[2] + 64.0 * o[5],
        ]);
        let in_box = truth.contains_index(r[0], r[1], r[2]);
        if in_box {
            inside.push(err);
        } else {
            outside.push(err);
        }
    }
    let stats = |set: &[[f64; 6]], name: &str| {
        if set.is_empty() {
            println!("{name}: none");
            return;
        }
        let n = set.len() as f64;
        print!("{name} ({} refs) mean/sd:", set.len());
        for k in 0..6 {
            let m = set.iter().map(|e| e[k]).sum::<f64>() / n;
            let v = set.iter().map(|e| (e[k] - m) * (e[k] - m)).sum::<f64>() / n;
            print!("  {m:+.1}/{:.1}", v.sqrt());
        }
        println!();
    };
    println!("coords: low_z low_y low_x high_z high_y high_x");
    stats(&inside, "inside box ");
    stats(&outside, "outside box");

    let agg = kde_aggregate(&votes, None).unwrap();
    let a6 = agg.to_array6();
    println!("kde box  {a6:?}");
    println!("iou {:.3}", agg.iou(&truth));
}
