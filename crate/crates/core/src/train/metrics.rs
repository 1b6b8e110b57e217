//! Confusion counts and the scores derived from them.
//!
//! COVID is the positive class. With `TP`, `FP`, `FN`, `TN` counted at the
//! 0.5 threshold:
//!
//! ```text
//! accuracy  = (TP + TN) / (TP + FP + FN + TN)
//! precision = TP / (TP + FP)
//! recall    = TP / (TP + FN)
//! f1        = 2 * precision * recall / (precision + recall)
//! ```
//!
//! A ratio with a zero denominator is reported as 0 and its name is added to
//! [`MetricsReport::zero_division`].

use serde::Serialize;

use crate::error::{Error, Result};

/// Probabilities at or above this value are predicted COVID.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Adds one prediction.
    pub fn record(&mut self, predicted_positive: bool, actually_positive: bool) {
        match (predicted_positive, actually_positive) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    /// Counts with the classes swapped, so NON-COVID is positive.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

/// Thresholds `probs` at [`DECISION_THRESHOLD`] against 0/1 `labels`.
pub fn confusion_from_predictions(probs: &[f64], labels: &[f64]) -> Result<ConfusionCounts> {
    if probs.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut counts = ConfusionCounts::default();
    for (&p, &y) in probs.iter().zip(labels) {
        counts.record(p >= DECISION_THRESHOLD, y >= 0.5);
    }
    Ok(counts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of samples whose true label is this class.
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    /// COVID-positive precision, recall and F1.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub covid: ClassMetrics,
    pub non_covid: ClassMetrics,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    /// Metrics whose denominator was zero and were reported as 0.
    pub zero_division: Vec<String>,
}

fn ratio(num: u64, den: u64, name: &str, flags: &mut Vec<String>) -> f64 {
    if den == 0 {
        flags.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall.
pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    let sum = precision + recall;
    (sum > 0.0).then(|| 2.0 * precision * recall / sum)
}

fn class_metrics(c: &ConfusionCounts, prefix: &str, flags: &mut Vec<String>) -> ClassMetrics {
    let precision = ratio(c.tp, c.tp + c.fp, &format!("{prefix}precision"), flags);
    let recall = ratio(c.tp, c.tp + c.fn_, &format!("{prefix}recall"), flags);
    let f1 = f1_score(precision, recall).unwrap_or_else(|| {
        flags.push(format!("{prefix}f1"));
        0.0
    });
    ClassMetrics {
        precision,
        recall,
        f1,
        support: c.tp + c.fn_,
    }
}

pub fn compute_metrics(counts: ConfusionCounts) -> Result<MetricsReport> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::Empty(
            "cannot compute metrics over zero samples".into(),
        ));
    }
    let mut flags = Vec::new();
    let covid = class_metrics(&counts, "", &mut flags);
    let non_covid = class_metrics(&counts.swapped(), "non_covid.", &mut flags);
    let t = total as f64;
    let (wc, wn) = (covid.support as f64 / t, non_covid.support as f64 / t);
    Ok(MetricsReport {
        counts,
        accuracy: (counts.tp + counts.tn) as f64 / t,
        precision: covid.precision,
        recall: covid.recall,
        f1: covid.f1,
        macro_precision: (covid.precision + non_covid.precision) / 2.0,
        macro_recall: (covid.recall + non_covid.recall) / 2.0,
        macro_f1: (covid.f1 + non_covid.f1) / 2.0,
        weighted_precision: wc * covid.precision + wn * non_covid.precision,
        weighted_recall: wc * covid.recall + wn * non_covid.recall,
        weighted_f1: wc * covid.f1 + wn * non_covid.f1,
        covid,
        non_covid,
        zero_division: flags,
    })
}

impl MetricsReport {
    /// One `key: value` line per field.
    pub fn to_text(&self) -> String {
        let c = &self.counts;
        let mut lines = vec![
            format!("samples: {}", c.total()),
            format!("tp: {}", c.tp),
            format!("fp: {}", c.fp),
            format!("fn: {}", c.fn_),
            format!("tn: {}", c.tn),
            format!("accuracy: {:.6}", self.accuracy),
            format!("precision: {:.6}", self.precision),
            format!("recall: {:.6}", self.recall),
            format!("f1: {:.6}", self.f1),
        ];
        for (name, m) in [("covid", &self.covid), ("non_covid", &self.non_covid)] {
            lines.push(format!("{name}.precision: {:.6}", m.precision));
            lines.push(format!("{name}.recall: {:.6}", m.recall));
            lines.push(format!("{name}.f1: {:.6}", m.f1));
            lines.push(format!("{name}.support: {}", m.support));
        }
        lines.extend([
            format!("macro.precision: {:.6}", self.macro_precision),
            format!("macro.recall: {:.6}", self.macro_recall),
            format!("macro.f1: {:.6}", self.macro_f1),
            format!("weighted.precision: {:.6}", self.weighted_precision),
            format!("weighted.recall: {:.6}", self.weighted_recall),
            format!("weighted.f1: {:.6}", self.weighted_f1),
            format!("zero_division: {}", self.zero_division.join(",")),
        ]);
        lines.join("\n") + "\n"
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}
