//! Confusion counts, precision/recall, threshold-swept PR curves and the
//! interpolated precision at a fixed recall.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{invalid, Error, Result};

/// Recall at which classifiers are compared.
pub const DEFAULT_RECALL_TARGET: f64 = 0.83;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Positive class is `Label::Positive`.
pub fn confusion(predictions: &[Label], labels: &[Label]) -> Result<ConfusionCounts> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: predictions.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (p, y) in predictions.iter().zip(labels) {
        match (p, y) {
            (Label::Positive, Label::Positive) => c.tp += 1,
            (Label::Positive, Label::Negative) => c.fp += 1,
            (Label::Negative, Label::Negative) => c.tn += 1,
            (Label::Negative, Label::Positive) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `(P, R)`; either is `None` when its denominator is zero.
pub fn precision_recall(c: &ConfusionCounts) -> (Option<f64>, Option<f64>) {
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    (ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn_))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Points sorted by increasing recall, one per distinct recall value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

/// Sweeps decision thresholds over the observed margins.
///
/// A sample is predicted positive when `margin >= threshold`. Thresholds are
/// the distinct margin values, thinned to `n_thresholds` evenly spaced ranks
/// when there are more of them. Among points sharing a recall the highest
/// precision is kept.
pub fn pr_curve(margins: &[f64], labels: &[Label], n_thresholds: usize) -> Result<PrCurve> {
    if margins.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: margins.len(),
        });
    }
    if n_thresholds < 2 {
        return Err(invalid("need at least two thresholds"));
    }
    if margins.iter().any(|m| !m.is_finite()) {
        return Err(invalid("margins must be finite"));
    }
    let n_pos = labels.iter().filter(|&&l| l == Label::Positive).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::SingleClass);
    }
    // samples by decreasing margin; prefix counts give tp/fp per threshold
    let mut order: Vec<usize> = (0..margins.len()).collect();
    order.sort_by(|&a, &b| margins[b].total_cmp(&margins[a]));
    let mut distinct: Vec<f64> = order.iter().map(|&i| margins[i]).collect();
    distinct.dedup();
    let thresholds: Vec<f64> = if distinct.len() <= n_thresholds {
        distinct
    } else {
        let m = distinct.len() - 1;
        let mut t: Vec<f64> = (0..n_thresholds)
            .map(|k| distinct[(k * m + (n_thresholds - 1) / 2) / (n_thresholds - 1)])
            .collect();
        t.dedup();
        t
    };

    let mut points: Vec<PrPoint> = Vec::with_capacity(thresholds.len());
    let (mut tp, mut fp, mut at) = (0usize, 0usize, 0usize);
    // thresholds are decreasing, so the predicted-positive set only grows
    for &t in &thresholds {
        while at < order.len() && margins[order[at]] >= t {
            match labels[order[at]] {
                Label::Positive => tp += 1,
                Label::Negative => fp += 1,
            }
            at += 1;
        }
        if tp + fp == 0 {
            continue;
        }
        let point = PrPoint {
            threshold: t,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / n_pos as f64,
        };
        match points.last_mut() {
            Some(last) if last.recall == point.recall => {
                if point.precision > last.precision {
                    *last = point;
                }
            }
            _ => points.push(point),
        }
    }
    Ok(PrCurve { points })
}

/// Linear interpolation of precision between the two points whose recalls
/// bracket `r_target`.
pub fn precision_at_recall(curve: &PrCurve, r_target: f64) -> Result<f64> {
    let pts = &curve.points;
    let (Some(first), Some(last)) = (pts.first(), pts.last()) else {
        return Err(invalid("empty PR curve"));
    };
    if r_target < first.recall || r_target > last.recall {
        return Err(Error::RecallOutOfRange {
            target: r_target,
            low: first.recall,
            high: last.recall,
        });
    }
    if let Some(p) = pts.iter().find(|p| p.recall == r_target) {
        return Ok(p.precision);
    }
    let hi = pts.partition_point(|p| p.recall < r_target);
    let (a, b) = (&pts[hi - 1], &pts[hi]);
    let t = (r_target - a.recall) / (b.recall - a.recall);
    Ok(a.precision + t * (b.precision - a.precision))
}
