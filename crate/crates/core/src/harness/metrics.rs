use serde::{Deserialize, Serialize};

use crate::Label;

/// Confusion counts with intermittent as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_labels(predictions: &[Label], truth: &[Label]) -> Result<Self, MetricsError> {
        if predictions.len() != truth.len() {
            return Err(MetricsError::LengthMismatch { predictions: predictions.len(), truth: truth.len() });
        }
        let mut c = Confusion::default();
        for (p, t) in predictions.iter().zip(truth) {
            match (p.is_intermittent(), t.is_intermittent()) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    /// The same counts seen from the regular class.
    pub fn swapped(self) -> Self {
        Confusion { tp: self.tn, fp: self.fn_, fn_: self.fp, tn: self.tp }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a denominator was zero and the value was reported as 0.
    pub undefined: bool,
}

impl ClassMetrics {
    fn from_counts(c: Confusion) -> Self {
        let (precision, p_undef) = ratio(c.tp, c.tp + c.fp);
        let (recall, r_undef) = ratio(c.tp, c.tp + c.fn_);
        let (f1, f_undef) = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
        ClassMetrics { precision, recall, f1, undefined: p_undef || r_undef || f_undef }
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub confusion: Confusion,
    pub intermittent: ClassMetrics,
    pub regular: ClassMetrics,
}

impl Metrics {
    /// Headline score: intermittent-class F1.
    pub fn f1(&self) -> f64 {
        self.intermittent.f1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("{predictions} predictions for {truth} truth labels")]
    LengthMismatch { predictions: usize, truth: usize },
}

/// Per-class precision, recall and F1. F1 is computed as `2TP / (2TP + FP + FN)`,
/// which equals the harmonic mean of precision and recall whenever both are
/// defined and stays defined when only one of them is.
pub fn metrics(predictions: &[Label], truth: &[Label]) -> Result<Metrics, MetricsError> {
    let confusion = Confusion::from_labels(predictions, truth)?;
    Ok(Metrics {
        confusion,
        intermittent: ClassMetrics::from_counts(confusion),
        regular: ClassMetrics::from_counts(confusion.swapped()),
    })
}

pub fn harmonic_f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}
