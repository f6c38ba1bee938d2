//! Segmentation quality measures — Dice and Jaccard overlap, Hausdorff and
//! average symmetric surface distance — plus per-volume evaluation, the
//! cross-validation harness, and report rendering.

mod crossval;
mod distance;
mod overlap;
mod report;
mod surface;

pub use crossval::{
    cross_validate, AggregateRow, CrossValCase, CrossValReport, FoldReport, MetricStats,
};
pub use distance::{assd, hausdorff, surface_distances, SurfaceDistances};
pub use overlap::{dice, jaccard};
pub use report::{
    render_crossval_machine, render_crossval_table, render_report_machine, render_report_table,
};
pub use surface::{extract_surface, SurfaceVoxelSet};

use thiserror::Error;

use crate::dataset::LabelVolume;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("geometry mismatch: {0}")]
    Geometry(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("fold pipeline failure: {0}")]
    Pipeline(String),
}

/// All four measures for one label (or for the lumbar aggregate).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelMetrics {
    /// Dice coefficient in [0, 1].
    pub dc: f64,
    /// Jaccard coefficient in [0, 1]; always ≤ `dc`.
    pub jc: f64,
    /// Maximum symmetric surface distance (mm).
    pub hd_mm: f64,
    /// Average symmetric surface distance (mm).
    pub assd_mm: f64,
}

/// Evaluation of one predicted volume against its ground truth.
///
/// A vertebra row is populated only when the label occurs in *both*
/// volumes; surface distances are undefined otherwise. Labels found in
/// exactly one volume are listed in `mismatched` so misses and hallucinated
/// vertebrae stay visible, but they are excluded from the aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Metrics for vertebra labels 1..=5, index 0 ↦ label 1.
    pub per_label: [Option<LabelMetrics>; 5],
    /// Unweighted mean over the populated vertebra rows.
    pub lumbar: Option<LabelMetrics>,
    /// Labels present in exactly one of the two volumes.
    pub mismatched: Vec<u8>,
}

/// Compares a predicted label volume against ground truth on the same
/// geometry, producing per-vertebra and aggregate metrics.
pub fn evaluate(
    predicted: &LabelVolume,
    truth: &LabelVolume,
) -> Result<MetricReport, MetricsError> {
    if predicted.geometry() != truth.geometry() {
        return Err(MetricsError::Geometry(format!(
            "predicted {:?} vs truth {:?}",
            predicted.geometry(),
            truth.geometry()
        )));
    }
    let (count_p, count_t, inter) = overlap::overlap_counts(predicted, truth);
    let mut per_label: [Option<LabelMetrics>; 5] = [None; 5];
    let mut mismatched = Vec::new();
    for label in 1u8..=5 {
        let l = label as usize;
        match (count_p[l] > 0, count_t[l] > 0) {
            (false, false) => {}
            (true, true) => {
                let dc = 2.0 * inter[l] as f64 / (count_p[l] + count_t[l]) as f64;
                let jc = inter[l] as f64 / (count_p[l] + count_t[l] - inter[l]) as f64;
                let sp = extract_surface(predicted, label);
                let st = extract_surface(truth, label);
                let d = surface_distances(&sp, &st).expect("nonempty regions have surfaces");
                per_label[l - 1] = Some(LabelMetrics {
                    dc,
                    jc,
                    hd_mm: d.hausdorff_mm,
                    assd_mm: d.assd_mm,
                });
            }
            _ => mismatched.push(label),
        }
    }
    let present: Vec<LabelMetrics> = per_label.iter().flatten().copied().collect();
    let lumbar = (!present.is_empty()).then(|| {
        let n = present.len() as f64;
        LabelMetrics {
            dc: present.iter().map(|m| m.dc).sum::<f64>() / n,
            jc: present.iter().map(|m| m.jc).sum::<f64>() / n,
            hd_mm: present.iter().map(|m| m.hd_mm).sum::<f64>() / n,
            assd_mm: present.iter().map(|m| m.assd_mm).sum::<f64>() / n,
        }
    });
    Ok(MetricReport {
        per_label,
        lumbar,
        mismatched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Dims3;
    use crate::dataset::{gen_phantom, Geometry, PhantomSpec};

    #[test]
    fn perfect_prediction_scores_perfectly() {
        let (_, labels, _) = gen_phantom(&PhantomSpec::default()).unwrap();
        let report = evaluate(&labels, &labels).unwrap();
        for row in &report.per_label {
            let m = row.expect("all five vertebrae present");
            assert_eq!(m.dc, 1.0);
            assert_eq!(m.jc, 1.0);
            assert_eq!(m.hd_mm, 0.0);
            assert_eq!(m.assd_mm, 0.0);
        }
        let lumbar = report.lumbar.unwrap();
        assert_eq!(lumbar.dc, 1.0);
        assert_eq!(lumbar.assd_mm, 0.0);
        assert!(report.mismatched.is_empty());
    }

    #[test]
    fn missed_label_is_reported_and_excluded() {
        let (_, truth, _) = gen_phantom(&PhantomSpec::default()).unwrap();
        let mut predicted = truth.clone();
        for v in predicted.data_mut() {
            if *v == 3 {
                *v = 0;
            }
        }
        let report = evaluate(&predicted, &truth).unwrap();
        assert_eq!(report.per_label[2], None);
        assert_eq!(report.mismatched, vec![3]);
        // The remaining four rows are perfect, so the aggregate still is.
        assert_eq!(report.lumbar.unwrap().dc, 1.0);
    }

    #[test]
    fn label_absent_everywhere_is_silently_skipped() {
        let g = Geometry::new(Dims3::new(6, 6, 6), [1.0; 3], [0.0; 3]).unwrap();
        let mut a = LabelVolume::zeros(g);
        let mut b = LabelVolume::zeros(g);
        a.set(2, 2, 2, 1);
        b.set(2, 2, 2, 1);
        let report = evaluate(&a, &b).unwrap();
        assert!(report.per_label[0].is_some());
        assert!(report.per_label[1..].iter().all(Option::is_none));
        assert!(report.mismatched.is_empty());
    }

    #[test]
    fn geometry_mismatch_is_an_error() {
        let a = LabelVolume::zeros(Geometry::new(Dims3::new(4, 4, 4), [1.0; 3], [0.0; 3]).unwrap());
        let b = LabelVolume::zeros(Geometry::new(Dims3::new(4, 4, 5), [1.0; 3], [0.0; 3]).unwrap());
        assert!(matches!(evaluate(&a, &b), Err(MetricsError::Geometry(_))));
    }

    #[test]
    fn degraded_prediction_keeps_jc_below_dc() {
        let (_, truth, _) = gen_phantom(&PhantomSpec::default()).unwrap();
        // Erode the prediction by dropping every third voxel of label 1.
        let mut predicted = truth.clone();
        let mut seen = 0usize;
        for v in predicted.data_mut() {
            if *v == 1 {
                seen += 1;
                if seen % 3 == 0 {
                    *v = 0;
                }
            }
        }
        assert!(seen > 100, "phantom should have a substantial L1");
        let report = evaluate(&predicted, &truth).unwrap();
        for m in report.per_label.iter().flatten() {
            assert!(m.jc <= m.dc + 1e-15);
            assert!(m.dc < 1.0 || m.hd_mm == 0.0);
            assert!(m.hd_mm + 1e-12 >= m.assd_mm);
        }
        let lumbar = report.lumbar.unwrap();
        assert!(lumbar.dc < 1.0);
    }

    #[test]
    fn lumbar_row_is_the_mean_of_present_rows() {
        let (_, truth, _) = gen_phantom(&PhantomSpec {
            seed: 12,
            ..PhantomSpec::default()
        })
        .unwrap();
        let mut predicted = truth.clone();
        let dims = predicted.extents();
        for z in 0..dims.d / 2 {
            for y in 0..dims.h {
                for x in 0..dims.w {
                    if predicted.get(z, y, x) == 2 {
                        predicted.set(z, y, x, 0);
                    }
                }
            }
        }
        let report = evaluate(&predicted, &truth).unwrap();
        let rows: Vec<_> = report.per_label.iter().flatten().collect();
        let mean_dc = rows.iter().map(|m| m.dc).sum::<f64>() / rows.len() as f64;
        assert!((report.lumbar.unwrap().dc - mean_dc).abs() < 1e-15);
    }
}
