use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

/// Span-level confusion counts with the derived precision, recall and F1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl Metrics {
    /// Any 0/0 is taken as 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp as f64, (tp + fp) as f64);
        let recall = ratio(tp as f64, (tp + fn_) as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        Metrics { tp, fp, fn_, precision, recall, f1 }
    }

    /// Micro-averaged metrics of (predicted, gold) pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (pred, gold) in pairs {
            match (pred, gold) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        Self::from_counts(tp, fp, fn_)
    }
}

impl AddAssign for Metrics {
    /// Pools the counts (micro-aggregation) and recomputes the ratios.
    fn add_assign(&mut self, other: Metrics) {
        *self = Metrics::from_counts(self.tp + other.tp, self.fp + other.fp, self.fn_ + other.fn_);
    }
}
