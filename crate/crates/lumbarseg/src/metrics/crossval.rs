//! Leave-N-out cross-validation: repeated random holdout splits, training
//! delegated to caller-supplied closures, evaluation and aggregation here.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{evaluate, LabelMetrics, MetricReport, MetricsError};
use crate::dataset::{BoundingBox3D, LabelVolume};

/// Ground truth for one cross-validation case. The volumes themselves stay
/// with the caller; the trainer and predictor closures receive case indices.
#[derive(Clone, Copy)]
pub struct CrossValCase<'a> {
    pub labels: &'a LabelVolume,
    pub bbox: &'a BoundingBox3D,
}

/// Mean and population standard deviation of one metric over `n` values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricStats {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MetricStats {
    fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                sd: f64::NAN,
                n: 0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Self {
            mean,
            sd: var.sqrt(),
            n,
        }
    }
}

/// Aggregate statistics for one table row (a vertebra or the lumbar mean).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRow {
    pub dc: MetricStats,
    pub jc: MetricStats,
    pub hd_mm: MetricStats,
    pub assd_mm: MetricStats,
}

/// One fold: which cases were held out and how they scored.
#[derive(Debug, Clone)]
pub struct FoldReport {
    pub held_out: Vec<usize>,
    pub case_reports: Vec<MetricReport>,
    pub roi_ious: Vec<f64>,
}

/// The whole study: per-fold detail plus pooled mean ± sd per metric over
/// every held-out evaluation.
#[derive(Debug, Clone)]
pub struct CrossValReport {
    pub folds: Vec<FoldReport>,
    /// Rows for labels 1..=5; `None` when a label was never evaluable.
    pub labels: [Option<AggregateRow>; 5],
    pub lumbar: Option<AggregateRow>,
    pub roi_iou: MetricStats,
}

fn aggregate_row(values: &[&LabelMetrics]) -> Option<AggregateRow> {
    if values.is_empty() {
        return None;
    }
    let collect = |f: fn(&LabelMetrics) -> f64| -> Vec<f64> { values.iter().map(|m| f(m)).collect() };
    Some(AggregateRow {
        dc: MetricStats::of(&collect(|m| m.dc)),
        jc: MetricStats::of(&collect(|m| m.jc)),
        hd_mm: MetricStats::of(&collect(|m| m.hd_mm)),
        assd_mm: MetricStats::of(&collect(|m| m.assd_mm)),
    })
}

/// Runs `fold_count` random holdout rounds. Each fold draws
/// `held_out_per_fold` distinct test cases (deterministically from `seed`),
/// calls `train` with the remaining case indices, then `predict` for every
/// held-out case; predictions are scored against the stored truth.
///
/// `train` receives sorted training indices and a sub-seed; `predict`
/// receives the trained model, one held-out case index, and a sub-seed, and
/// returns the predicted labels plus the predicted lumbar box.
pub fn cross_validate<M>(
    cases: &[CrossValCase],
    fold_count: usize,
    held_out_per_fold: usize,
    mut train: impl FnMut(&[usize], u64) -> Result<M, MetricsError>,
    mut predict: impl FnMut(&M, usize, u64) -> Result<(LabelVolume, BoundingBox3D), MetricsError>,
    seed: u64,
) -> Result<CrossValReport, MetricsError> {
    let n = cases.len();
    if fold_count == 0 {
        return Err(MetricsError::Invalid("fold count must be positive".into()));
    }
    if held_out_per_fold == 0 {
        return Err(MetricsError::Invalid(
            "each fold must hold out at least one case".into(),
        ));
    }
    if held_out_per_fold >= n {
        return Err(MetricsError::Invalid(format!(
            "holding out {held_out_per_fold} of {n} cases leaves an empty training set"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = Vec::with_capacity(fold_count);
    for _ in 0..fold_count {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut held_out = order[..held_out_per_fold].to_vec();
        let mut training = order[held_out_per_fold..].to_vec();
        held_out.sort_unstable();
        training.sort_unstable();

        let model = train(&training, rng.gen())?;
        let mut case_reports = Vec::with_capacity(held_out.len());
        let mut roi_ious = Vec::with_capacity(held_out.len());
        for &case in &held_out {
            let (predicted, roi) = predict(&model, case, rng.gen())?;
            case_reports.push(evaluate(&predicted, cases[case].labels)?);
            roi_ious.push(roi.iou(cases[case].bbox));
        }
        folds.push(FoldReport {
            held_out,
            case_reports,
            roi_ious,
        });
    }

    let all_reports: Vec<&MetricReport> =
        folds.iter().flat_map(|f| f.case_reports.iter()).collect();
    let mut labels: [Option<AggregateRow>; 5] = [None; 5];
    for (i, slot) in labels.iter_mut().enumerate() {
        let rows: Vec<&LabelMetrics> = all_reports
            .iter()
            .filter_map(|r| r.per_label[i].as_ref())
            .collect();
        *slot = aggregate_row(&rows);
    }
    let lumbar_rows: Vec<&LabelMetrics> =
        all_reports.iter().filter_map(|r| r.lumbar.as_ref()).collect();
    let lumbar = aggregate_row(&lumbar_rows);
    let ious: Vec<f64> = folds.iter().flat_map(|f| f.roi_ious.iter().copied()).collect();
    Ok(CrossValReport {
        folds,
        labels,
        lumbar,
        roi_iou: MetricStats::of(&ious),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_phantom, PhantomSpec};
    use crate::dataset::Volume;

    fn phantom_set(count: usize) -> Vec<(Volume, LabelVolume, BoundingBox3D)> {
        (0..count)
            .map(|seed| {
                gen_phantom(&PhantomSpec {
                    seed: seed as u64,
                    ..PhantomSpec::default()
                })
                .unwrap()
            })
            .collect()
    }

    fn borrow(data: &[(Volume, LabelVolume, BoundingBox3D)]) -> Vec<CrossValCase<'_>> {
        data.iter()
            .map(|(_, labels, bbox)| CrossValCase { labels, bbox })
            .collect()
    }

    /// An oracle "model" that answers with the stored ground truth.
    fn perfect_study(
        data: &[(Volume, LabelVolume, BoundingBox3D)],
        seed: u64,
    ) -> CrossValReport {
        let cases = borrow(data);
        cross_validate(
            &cases,
            5,
            3,
            |_, _| Ok(()),
            |_, case, _| Ok((data[case].1.clone(), data[case].2)),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn perfect_predictor_scores_one_with_zero_spread() {
        let data = phantom_set(8);
        let report = perfect_study(&data, 77);
        let lumbar = report.lumbar.unwrap();
        assert_eq!(lumbar.dc.mean, 1.0);
        assert_eq!(lumbar.dc.sd, 0.0);
        assert_eq!(lumbar.assd_mm.mean, 0.0);
        assert_eq!(report.roi_iou.mean, 1.0);
        assert_eq!(report.roi_iou.sd, 0.0);
        assert_eq!(report.roi_iou.n, 15);
        for label_row in report.labels.iter() {
            assert_eq!(label_row.unwrap().dc.mean, 1.0);
        }
    }

    #[test]
    fn splits_are_deterministic_and_disjoint_per_fold() {
        let data = phantom_set(6);
        let cases = borrow(&data);
        let mut seen_training: Vec<Vec<usize>> = Vec::new();
        let report = cross_validate(
            &cases,
            4,
            2,
            |training, _| {
                seen_training.push(training.to_vec());
                Ok(())
            },
            |_, case, _| Ok((data[case].1.clone(), data[case].2)),
            123,
        )
        .unwrap();
        let repeat = cross_validate(
            &cases,
            4,
            2,
            |_, _| Ok(()),
            |_, case, _| Ok((data[case].1.clone(), data[case].2)),
            123,
        )
        .unwrap();
        for (a, b) in report.folds.iter().zip(&repeat.folds) {
            assert_eq!(a.held_out, b.held_out);
        }
        for (fold, training) in report.folds.iter().zip(&seen_training) {
            assert_eq!(training.len(), 4);
            for case in training {
                assert!(!fold.held_out.contains(case));
            }
        }
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let data = phantom_set(3);
        let cases = borrow(&data);
        let result = cross_validate(
            &cases,
            2,
            3,
            |_: &[usize], _| Ok(()),
            |_: &(), case, _| Ok((data[case].1.clone(), data[case].2)),
            0,
        );
        assert!(matches!(result, Err(MetricsError::Invalid(_))));
    }

    #[test]
    fn training_failures_propagate() {
        let data = phantom_set(3);
        let cases = borrow(&data);
        let result = cross_validate(
            &cases,
            1,
            1,
            |_: &[usize], _| -> Result<(), MetricsError> {
                Err(MetricsError::Pipeline("diverged".into()))
            },
            |_: &(), case, _| Ok((data[case].1.clone(), data[case].2)),
            0,
        );
        assert!(matches!(result, Err(MetricsError::Pipeline(_))));
    }

    #[test]
    fn stats_pool_every_heldout_evaluation() {
        let data = phantom_set(5);
        let cases = borrow(&data);
        // A predictor that erodes one fixed label produces nonzero spread.
        let report = cross_validate(
            &cases,
            3,
            2,
            |_, _| Ok(()),
            |_, case, _| {
                let mut labels = data[case].1.clone();
                let mut seen = 0usize;
                for v in labels.data_mut() {
                    if *v == 2 {
                        seen += 1;
                        if seen % (case + 2) == 0 {
                            *v = 0;
                        }
                    }
                }
                Ok((labels, data[case].2))
            },
            9,
        )
        .unwrap();
        let lumbar = report.lumbar.unwrap();
        assert_eq!(lumbar.dc.n, 6);
        assert!(lumbar.dc.mean < 1.0);
        assert!(lumbar.dc.sd > 0.0);
        assert!(lumbar.hd_mm.mean > 0.0);
    }
}
