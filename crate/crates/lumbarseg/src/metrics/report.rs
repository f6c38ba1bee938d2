//! Report rendering: a human-readable metric table (rows L1..L5 plus the
//! lumbar mean; columns DC %, JC %, HD mm, ASSD mm) and a line-oriented
//! `key=value` form for downstream tooling.

use super::{AggregateRow, CrossValReport, LabelMetrics, MetricReport, MetricStats};

const ROW_NAMES: [&str; 5] = ["L1", "L2", "L3", "L4", "L5"];

fn stat_cell(s: &MetricStats, scale: f64) -> String {
    format!("{:6.2} ± {:5.2}", s.mean * scale, s.sd * scale)
}

fn table_header(out: &mut String, width: usize) {
    out.push_str(&format!(
        "{:<8}{:>w$}{:>w$}{:>w$}{:>w$}\n",
        "",
        "DC (%)",
        "JC (%)",
        "HD (mm)",
        "ASSD (mm)",
        w = width
    ));
}

fn metric_row(out: &mut String, name: &str, metrics: Option<&LabelMetrics>) {
    match metrics {
        Some(m) => out.push_str(&format!(
            "{:<8}{:>10.2}{:>10.2}{:>10.2}{:>10.2}\n",
            name,
            m.dc * 100.0,
            m.jc * 100.0,
            m.hd_mm,
            m.assd_mm,
        )),
        None => out.push_str(&format!("{name:<8}    absent\n")),
    }
}

/// Table for a single evaluation.
pub fn render_report_table(report: &MetricReport) -> String {
    let mut out = String::new();
    table_header(&mut out, 10);
    for (i, name) in ROW_NAMES.iter().enumerate() {
        metric_row(&mut out, name, report.per_label[i].as_ref());
    }
    metric_row(&mut out, "Lumbar", report.lumbar.as_ref());
    if !report.mismatched.is_empty() {
        let list: Vec<String> = report.mismatched.iter().map(|l| format!("L{l}")).collect();
        out.push_str(&format!(
            "note: {} present in only one volume (excluded above)\n",
            list.join(", ")
        ));
    }
    out
}

fn machine_metrics(out: &mut String, key: &str, metrics: Option<&LabelMetrics>) {
    match metrics {
        Some(m) => {
            out.push_str(&format!("{key}.dc={}\n", m.dc));
            out.push_str(&format!("{key}.jc={}\n", m.jc));
            out.push_str(&format!("{key}.hd_mm={}\n", m.hd_mm));
            out.push_str(&format!("{key}.assd_mm={}\n", m.assd_mm));
        }
        None => out.push_str(&format!("{key}.absent=1\n")),
    }
}

/// `key=value` lines for a single evaluation; absent rows are marked.
pub fn render_report_machine(report: &MetricReport) -> String {
    let mut out = String::from("format=report-v1\n");
    for (i, name) in ROW_NAMES.iter().enumerate() {
        machine_metrics(&mut out, &name.to_lowercase(), report.per_label[i].as_ref());
    }
    machine_metrics(&mut out, "lumbar", report.lumbar.as_ref());
    for l in &report.mismatched {
        out.push_str(&format!("mismatched=l{l}\n"));
    }
    out
}

fn aggregate_table_row(out: &mut String, name: &str, row: Option<&AggregateRow>) {
    match row {
        Some(r) => out.push_str(&format!(
            "{:<8}{:>16}{:>16}{:>16}{:>16}\n",
            name,
            stat_cell(&r.dc, 100.0),
            stat_cell(&r.jc, 100.0),
            stat_cell(&r.hd_mm, 1.0),
            stat_cell(&r.assd_mm, 1.0),
        )),
        None => out.push_str(&format!("{name:<8}    never evaluable\n")),
    }
}

/// Table for a cross-validation study, mean ± sd per metric.
pub fn render_crossval_table(report: &CrossValReport) -> String {
    let mut out = String::new();
    table_header(&mut out, 16);
    for (i, name) in ROW_NAMES.iter().enumerate() {
        aggregate_table_row(&mut out, name, report.labels[i].as_ref());
    }
    aggregate_table_row(&mut out, "Lumbar", report.lumbar.as_ref());
    out.push_str(&format!(
        "ROI IoU {:.3} ± {:.3} over {} held-out evaluations in {} folds\n",
        report.roi_iou.mean,
        report.roi_iou.sd,
        report.roi_iou.n,
        report.folds.len()
    ));
    out
}

fn machine_stats(out: &mut String, key: &str, s: &MetricStats) {
    out.push_str(&format!("{key}.mean={}\n", s.mean));
    out.push_str(&format!("{key}.sd={}\n", s.sd));
    out.push_str(&format!("{key}.n={}\n", s.n));
}

fn machine_aggregate(out: &mut String, key: &str, row: Option<&AggregateRow>) {
    match row {
        Some(r) => {
            machine_stats(out, &format!("{key}.dc"), &r.dc);
            machine_stats(out, &format!("{key}.jc"), &r.jc);
            machine_stats(out, &format!("{key}.hd_mm"), &r.hd_mm);
            machine_stats(out, &format!("{key}.assd_mm"), &r.assd_mm);
        }
        None => out.push_str(&format!("{key}.absent=1\n")),
    }
}

/// `key=value` lines for a cross-validation study.
pub fn render_crossval_machine(report: &CrossValReport) -> String {
    let mut out = String::from("format=crossval-v1\n");
    out.push_str(&format!("folds={}\n", report.folds.len()));
    for (i, name) in ROW_NAMES.iter().enumerate() {
        machine_aggregate(&mut out, &name.to_lowercase(), report.labels[i].as_ref());
    }
    machine_aggregate(&mut out, "lumbar", report.lumbar.as_ref());
    machine_stats(&mut out, "roi_iou", &report.roi_iou);
    for (i, fold) in report.folds.iter().enumerate() {
        let held: Vec<String> = fold.held_out.iter().map(|c| c.to_string()).collect();
        out.push_str(&format!("fold{i}.held_out={}\n", held.join(",")));
        for (iou, case) in fold.roi_ious.iter().zip(&fold.held_out) {
            out.push_str(&format!("fold{i}.case{case}.roi_iou={iou}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_phantom, PhantomSpec};
    use crate::metrics::{cross_validate, evaluate, CrossValCase};

    #[test]
    fn single_report_table_shows_all_rows() {
        let (_, labels, _) = gen_phantom(&PhantomSpec::default()).unwrap();
        let report = evaluate(&labels, &labels).unwrap();
        let table = render_report_table(&report);
        for name in ["DC (%)", "JC (%)", "HD (mm)", "ASSD (mm)", "L1", "L5", "Lumbar"] {
            assert!(table.contains(name), "missing {name} in:\n{table}");
        }
        assert!(table.contains("100.00"));
        let machine = render_report_machine(&report);
        assert!(machine.starts_with("format=report-v1\n"));
        assert!(machine.contains("l3.dc=1\n"));
        assert!(machine.contains("lumbar.assd_mm=0\n"));
    }

    #[test]
    fn absent_rows_are_marked_in_both_formats() {
        let (_, truth, _) = gen_phantom(&PhantomSpec::default()).unwrap();
        let mut predicted = truth.clone();
        for v in predicted.data_mut() {
            if *v == 5 {
                *v = 0;
            }
        }
        let report = evaluate(&predicted, &truth).unwrap();
        let table = render_report_table(&report);
        assert!(table.contains("L5          absent"));
        assert!(table.contains("note: L5 present in only one volume"));
        let machine = render_report_machine(&report);
        assert!(machine.contains("l5.absent=1\n"));
        assert!(machine.contains("mismatched=l5\n"));
    }

    #[test]
    fn crossval_renderers_cover_folds_and_rows() {
        let data: Vec<_> = (0..4)
            .map(|seed| {
                gen_phantom(&PhantomSpec {
                    seed,
                    ..PhantomSpec::default()
                })
                .unwrap()
            })
            .collect();
        let cases: Vec<CrossValCase> = data
            .iter()
            .map(|(_, labels, bbox)| CrossValCase { labels, bbox })
            .collect();
        let report = cross_validate(
            &cases,
            2,
            1,
            |_, _| Ok(()),
            |_, case, _| Ok((data[case].1.clone(), data[case].2)),
            4,
        )
        .unwrap();
        let table = render_crossval_table(&report);
        assert!(table.contains("Lumbar"));
        assert!(table.contains("ROI IoU"));
        assert!(table.contains("±"));
        let machine = render_crossval_machine(&report);
        assert!(machine.starts_with("format=crossval-v1\nfolds=2\n"));
        assert!(machine.contains("lumbar.dc.mean=1\n"));
        assert!(machine.contains("roi_iou.mean=1\n"));
        assert!(machine.contains("fold0.held_out="));
        assert!(machine.contains(".roi_iou=1\n"));
    }
}
