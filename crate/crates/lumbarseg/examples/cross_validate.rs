//! A miniature cross-validation study: four phantoms, two folds, one case
//! held out per fold. Each fold trains a fresh localizer and segmenter on
//! its training split and scores the held-out case end to end, exactly as
//! the `crossval` subcommand does at full size.
//!
//! Run with: `cargo run --release --example cross_validate`

use std::error::Error;
use std::time::Instant;

use lumbarseg::autodiff::{Dims3, ParamSet};
use lumbarseg::dataset::{gen_phantom, PhantomSpec};
use lumbarseg::locnet::{train_localizer, LocNetConfig, LocNetModel, RoiCase};
use lumbarseg::metrics::{cross_validate, render_crossval_table, CrossValCase, MetricsError};
use lumbarseg::segnet::{
    segment_volume, train_binary, train_multiclass, SegCase, SegNetConfig, SegNetModel,
};

struct FoldModels {
    loc_params: ParamSet,
    loc_model: LocNetModel,
    seg_params: ParamSet,
    seg_model: SegNetModel,
}

fn pipeline_err(stage: &str, e: impl std::fmt::Display) -> MetricsError {
    MetricsError::Pipeline(format!("{stage}: {e}"))
}

fn main() -> Result<(), Box<dyn Error>> {
    let cases: Vec<_> = (0..4u64)
        .map(|seed| {
            gen_phantom(&PhantomSpec {
                seed,
                ..PhantomSpec::default()
            })
        })
        .collect::<Result<_, _>>()?;
    let cv_cases: Vec<CrossValCase> = cases
        .iter()
        .map(|(_, labels, bbox)| CrossValCase { labels, bbox })
        .collect();

    let loc_config = LocNetConfig {
        widths: [4, 8, 16],
        head_features: 32,
        head_hidden: 16,
        train_references_per_volume: 6,
        infer_reference_budget: 96,
        round1_epochs: 2,
        round2_epochs: 1,
        ..LocNetConfig::default()
    };
    let seg_base = SegNetConfig {
        depth: 2,
        base_width: 4,
        patch_extents: Dims3::new(16, 16, 32),
        patches_per_volume: 2,
        epochs: 1,
        ..SegNetConfig::default()
    };
    let binary_config = SegNetConfig {
        class_count: 2,
        ..seg_base.clone()
    };
    let multi_config = SegNetConfig {
        class_count: 6,
        ..seg_base
    };

    let mut fold_no = 0usize;
    let train = |training: &[usize], sub_seed: u64| -> Result<FoldModels, MetricsError> {
        fold_no += 1;
        eprintln!("fold {fold_no}: training on cases {training:?}");
        let roi_cases: Vec<RoiCase> = training
            .iter()
            .map(|&i| RoiCase {
                volume: &cases[i].0,
                bbox: &cases[i].2,
            })
            .collect();
        let localizer = train_localizer(&roi_cases, &loc_config, sub_seed)
            .map_err(|e| pipeline_err("localizer", e))?;

        let seg_cases: Vec<SegCase> = training
            .iter()
            .map(|&i| SegCase {
                volume: &cases[i].0,
                labels: &cases[i].1,
                bbox: &cases[i].2,
            })
            .collect();
        let binary = train_binary(&seg_cases, &binary_config, sub_seed.wrapping_add(1))
            .map_err(|e| pipeline_err("binary stage", e))?;
        let multi = train_multiclass(
            &seg_cases,
            &binary.checkpoint,
            &multi_config,
            sub_seed.wrapping_add(2),
        )
        .map_err(|e| pipeline_err("multi-class stage", e))?;

        Ok(FoldModels {
            loc_params: localizer.checkpoint.params,
            loc_model: localizer.model,
            seg_params: multi.checkpoint.params,
            seg_model: multi.model,
        })
    };

    let predict = |models: &FoldModels, case: usize, sub_seed: u64| {
        let outcome = segment_volume(
            &cases[case].0,
            &models.loc_params,
            &models.loc_model,
            &loc_config,
            &models.seg_params,
            &models.seg_model,
            &multi_config,
            sub_seed,
        )
        .map_err(|e| pipeline_err("inference", e))?;
        Ok((outcome.labels, outcome.roi))
    };

    let started = Instant::now();
    let report = cross_validate(&cv_cases, 2, 1, train, predict, 0)?;
    print!("{}", render_crossval_table(&report));
    println!("elapsed: {:.1} s", started.elapsed().as_secs_f64());
    Ok(())
}
