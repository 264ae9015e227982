//! Confusion counts, accuracy / sensitivity / specificity / F1, and the
//! R-only vs R+S ablation table.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wfdb_io::Label;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("prediction and truth lengths differ ({predicted} vs {truth})")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("reports cover different segment sets: {0}")]
    SegmentSetMismatch(String),
}

/// TP/TN/FP/FN tallies with SA as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }
}

pub fn confusion(predicted: &[Label], truth: &[Label]) -> Result<ConfusionCounts, MetricsError> {
    if predicted.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            predicted: predicted.len(),
            truth: truth.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (p, t) in predicted.iter().zip(truth) {
        match (p.is_apnea(), t.is_apnea()) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Which metrics hit a zero denominator and were reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degenerate {
    pub accuracy: bool,
    pub sensitivity: bool,
    pub specificity: bool,
    pub f1_sa: bool,
    pub f1_non_sa: bool,
}

impl Degenerate {
    pub fn any(&self) -> bool {
        self.accuracy || self.sensitivity || self.specificity || self.f1_sa || self.f1_non_sa
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1_sa: f64,
    pub f1_non_sa: f64,
    pub counts: ConfusionCounts,
    pub degenerate: Degenerate,
}

fn ratio(num: u64, den: u64, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(c: &ConfusionCounts) -> MetricsReport {
    let mut d = Degenerate::default();
    let accuracy = ratio(c.tp + c.tn, c.total(), &mut d.accuracy);
    let sensitivity = ratio(c.tp, c.tp + c.fn_, &mut d.sensitivity);
    let specificity = ratio(c.tn, c.tn + c.fp, &mut d.specificity);
    let f1_sa = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, &mut d.f1_sa);
    // Non-SA as the positive class: TN plays TP, FN plays FP and vice versa.
    let f1_non_sa = ratio(2 * c.tn, 2 * c.tn + c.fn_ + c.fp, &mut d.f1_non_sa);
    MetricsReport {
        accuracy,
        sensitivity,
        specificity,
        f1_sa,
        f1_non_sa,
        counts: *c,
        degenerate: d,
    }
}

impl MetricsReport {
    /// JSON with the fixed keys `accuracy`, `sensitivity`, `specificity`,
    /// `f1_sa`, `f1_non_sa`, plus `counts` and `degenerate`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.counts;
        writeln!(f, "{:<12} {:>8}", "metric", "value")?;
        writeln!(f, "{:<12} {:>7.2}%", "accuracy", 100.0 * self.accuracy)?;
        writeln!(f, "{:<12} {:>7.2}%", "sensitivity", 100.0 * self.sensitivity)?;
        writeln!(f, "{:<12} {:>7.2}%", "specificity", 100.0 * self.specificity)?;
        writeln!(f, "{:<12} {:>7.2}%", "f1_sa", 100.0 * self.f1_sa)?;
        writeln!(f, "{:<12} {:>7.2}%", "f1_non_sa", 100.0 * self.f1_non_sa)?;
        write!(f, "TP {}  TN {}  FP {}  FN {}", c.tp, c.tn, c.fp, c.fn_)?;
        if self.degenerate.any() {
            write!(f, "  (degenerate: some denominators were zero)")?;
        }
        Ok(())
    }
}

/// Per-metric differences `rs - r`, in fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub r_only: MetricsReport,
    pub r_and_s: MetricsReport,
    pub delta_accuracy: f64,
    pub delta_specificity: f64,
    pub delta_sensitivity: f64,
    pub delta_f1_sa: f64,
    pub delta_f1_non_sa: f64,
}

pub fn compare_feature_sets(report_r: &MetricsReport, report_rs: &MetricsReport) -> Result<AblationTable, MetricsError> {
    let (a, b) = (&report_r.counts, &report_rs.counts);
    if a.positives() != b.positives() || a.negatives() != b.negatives() {
        return Err(MetricsError::SegmentSetMismatch(format!(
            "R-only has {}/{} SA/non-SA segments, R+S has {}/{}",
            a.positives(),
            a.negatives(),
            b.positives(),
            b.negatives()
        )));
    }
    Ok(AblationTable {
        r_only: *report_r,
        r_and_s: *report_rs,
        delta_accuracy: report_rs.accuracy - report_r.accuracy,
        delta_specificity: report_rs.specificity - report_r.specificity,
        delta_sensitivity: report_rs.sensitivity - report_r.sensitivity,
        delta_f1_sa: report_rs.f1_sa - report_r.f1_sa,
        delta_f1_non_sa: report_rs.f1_non_sa - report_r.f1_non_sa,
    })
}

impl AblationTable {
    /// Feature combination | Acc | Spe | Sen | F1 SA | F1 Non-SA, in percent.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let row = |out: &mut String, name: &str, v: [f64; 5], signed: bool| {
            let cells: Vec<String> = v
                .iter()
                .map(|x| {
                    if signed {
                        format!("{:>+8.2}", 100.0 * x)
                    } else {
                        format!("{:>8.2}", 100.0 * x)
                    }
                })
                .collect();
            let _ = writeln!(out, "{:<34}|{}", name, cells.join(" |"));
        };
        let _ = writeln!(
            out,
            "{:<34}|{:>8} |{:>8} |{:>8} |{:>8} |{:>8}",
            "Feature combination", "Acc(%)", "Spe(%)", "Sen(%)", "F1 SA", "F1 Non"
        );
        let _ = writeln!(out, "{}", "-".repeat(34 + 5 * 10));
        let vals = |m: &MetricsReport| [m.accuracy, m.specificity, m.sensitivity, m.f1_sa, m.f1_non_sa];
        row(&mut out, "RR intervals, R amplitude", vals(&self.r_only), false);
        row(&mut out, "RR, R amp, SS intervals, S amp", vals(&self.r_and_s), false);
        row(
            &mut out,
            "delta (R+S minus R)",
            [
                self.delta_accuracy,
                self.delta_specificity,
                self.delta_sensitivity,
                self.delta_f1_sa,
                self.delta_f1_non_sa,
            ],
            true,
        );
        out
    }
}
