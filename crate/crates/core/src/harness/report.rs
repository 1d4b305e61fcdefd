//! Markdown tables: labeling statistics, per-approach performance and the
//! cross-project matrix. Scores are percentages; standard deviations are
//! rendered as subscripts.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;
use serde::{Deserialize, Serialize};

use super::{CrossMatrix, MeanStd, MetricSummary};
use crate::labeler::error_rate;
use crate::{stats, LabeledSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingRow {
    pub project: String,
    pub auto_intermittent: usize,
    pub auto_regular: usize,
    pub manual_intermittent: usize,
    pub manual_regular: usize,
    pub error_rate: Option<f64>,
}

/// Counts over the manually labeled samples only.
pub fn labeling_row(project: &str, samples: &[LabeledSample]) -> LabelingRow {
    let manual: Vec<&LabeledSample> = samples.iter().filter(|s| s.manual_label.is_some()).collect();
    let ai = manual.iter().filter(|s| s.auto_label.is_intermittent()).count();
    let mi = manual.iter().filter(|s| s.effective_label().is_intermittent()).count();
    let owned: Vec<LabeledSample> = manual.iter().map(|s| (*s).clone()).collect();
    LabelingRow {
        project: project.into(),
        auto_intermittent: ai,
        auto_regular: manual.len() - ai,
        manual_intermittent: mi,
        manual_regular: manual.len() - mi,
        error_rate: error_rate(&owned).ok(),
    }
}

pub fn render_labeling_table(rows: &[LabelingRow]) -> String {
    let mut out = String::new();
    out.push_str("| Project | Automated intermittent | Automated regular | Manual intermittent | Manual regular | Error rate (E) |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|\n");
    for r in rows {
        let e = r.error_rate.map_or_else(|| String::from("n/a"), |e| format!("{:.2}%", e * 100.0));
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            r.project, r.auto_intermittent, r.auto_regular, r.manual_intermittent, r.manual_regular, e
        );
    }
    out
}

fn pct(x: f64) -> String {
    format!("{:.0}", x * 100.0)
}

fn cell(m: &MeanStd) -> String {
    format!("{}<sub>{}</sub>", pct(m.mean), pct(m.std))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRow {
    pub project: String,
    /// One entry per approach column.
    pub columns: Vec<Option<MetricSummary>>,
}

fn fields(s: &MetricSummary) -> [MeanStd; 5] {
    [s.f1, s.precision_intermittent, s.recall_intermittent, s.precision_regular, s.recall_regular]
}

/// Per-project F1 and per-class precision/recall for each approach, with
/// median and mean rows across projects.
pub fn render_performance_table(approaches: &[&str], rows: &[PerformanceRow]) -> String {
    let mut out = String::from("| Project |");
    for a in approaches {
        let _ = write!(out, " {a} F1 | {a} Int. Pre | {a} Int. Rec | {a} Reg. Pre | {a} Reg. Rec |");
    }
    out.push_str("\n|---|");
    for _ in approaches {
        out.push_str("---:|---:|---:|---:|---:|");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "| {} |", r.project);
        for c in 0..approaches.len() {
            match r.columns.get(c).copied().flatten() {
                Some(s) => {
                    for f in fields(&s) {
                        let _ = write!(out, " {} |", cell(&f));
                    }
                }
                None => out.push_str(" n/a | n/a | n/a | n/a | n/a |"),
            }
        }
        out.push('\n');
    }
    for (name, agg) in [("Median", stats::median as fn(&[f64]) -> Option<f64>), ("Mean", stats::mean)] {
        let _ = write!(out, "| {name} |");
        for c in 0..approaches.len() {
            let present: Vec<[MeanStd; 5]> = rows.iter().filter_map(|r| r.columns.get(c).copied().flatten()).map(|s| fields(&s)).collect();
            for k in 0..5 {
                let means: Vec<f64> = present.iter().map(|f| f[k].mean).collect();
                let stds: Vec<f64> = present.iter().map(|f| f[k].std).collect();
                match (agg(&means), agg(&stds)) {
                    (Some(m), Some(s)) => {
                        let _ = write!(out, " {} |", cell(&MeanStd { mean: m, std: s }));
                    }
                    _ => out.push_str(" n/a |"),
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Rows are predicted projects, columns training projects; the optional
/// last column holds the comparator's F1 per predicted project.
pub fn render_cross_table(matrix: &CrossMatrix, baseline: &BTreeMap<String, f64>) -> String {
    let mut out = String::from("| Pred \\ Train |");
    for p in &matrix.projects {
        let _ = write!(out, " {p} |");
    }
    let with_baseline = !baseline.is_empty();
    if with_baseline {
        out.push_str(" Baseline |");
    }
    out.push_str("\n|---|");
    for _ in &matrix.projects {
        out.push_str("---:|");
    }
    if with_baseline {
        out.push_str("---:|");
    }
    out.push('\n');
    for row in &matrix.rows {
        let _ = write!(out, "| {} |", row.target);
        for c in &row.cells {
            match c {
                Some(c) => {
                    let _ = write!(out, " {} |", cell(&c.f1));
                }
                None => out.push_str(" n/a |"),
            }
        }
        if with_baseline {
            match baseline.get(&row.target) {
                Some(b) => {
                    let _ = write!(out, " {} |", pct(*b));
                }
                None => out.push_str(" n/a |"),
            }
        }
        out.push('\n');
    }
    for n in &matrix.notices {
        let _ = writeln!(out, "\n> {n}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn cells_show_mean_and_std() {
        assert_eq!(cell(&MeanStd { mean: 0.8149, std: 0.051 }), "81<sub>5</sub>");
    }

    #[test]
    fn performance_table_shape() {
        let s = |f| MetricSummary {
            f1: MeanStd { mean: f, std: 0.05 },
            precision_intermittent: MeanStd { mean: 0.9, std: 0.04 },
            recall_intermittent: MeanStd { mean: 0.75, std: 0.1 },
            precision_regular: MeanStd { mean: 0.86, std: 0.05 },
            recall_regular: MeanStd { mean: 0.95, std: 0.03 },
        };
        let rows = vec![
            PerformanceRow { project: "A".to_string(), columns: vec![Some(s(0.81)), None] },
            PerformanceRow { project: "B".to_string(), columns: vec![Some(s(0.83)), None] },
        ];
        let t = render_performance_table(&["N=12", "Baseline"], &rows);
        assert_eq!(t.lines().count(), 6);
        assert!(t.contains("| A | 81<sub>5</sub> | 90<sub>4</sub> | 75<sub>10</sub>"));
        assert!(t.contains("| Mean | 82<sub>5</sub>"));
    }
}
