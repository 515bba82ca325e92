//! Classification metrics: confusion counts, the four ratio metrics,
//! rank-based AUC with a trapezoidal cross-check, and bootstrap
//! confidence intervals.

use crate::error::{ProcanError, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Probability scores paired with binary labels.
#[derive(Clone, Debug, Default)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(ProcanError::usage(format!(
                "scores ({}) and labels ({}) must have equal length",
                scores.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(ProcanError::data("labels must be 0 or 1".to_string()));
        }
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(ProcanError::data(
                "scores must be probabilities in [0,1]".to_string(),
            ));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }
}

/// Threshold the scores: score >= threshold predicts positive.
pub fn confusion(set: &ScoredSet, threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&s, &l) in set.scores.iter().zip(&set.labels) {
        let predicted_positive = s >= threshold;
        match (predicted_positive, l) {
            (true, 1) => c.tp += 1,
            (true, 0) => c.fp += 1,
            (false, 1) => c.fn_ += 1,
            (false, 0) => c.tn += 1,
            _ => unreachable!("labels validated to 0/1"),
        }
    }
    c
}

/// Accuracy, sensitivity, precision, and F1. A zero denominator makes
/// that metric undefined (`None`), never a crash and never a silent zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

pub fn classification_metrics(c: &ConfusionCounts) -> ClassificationMetrics {
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    ClassificationMetrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        precision: ratio(c.tp, c.tp + c.fp),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    }
}

/// Rank-based AUC: the probability a random positive outscores a random
/// negative, ties counting one half. Computed from average ranks, which
/// agrees exactly with the all-pairs count.
pub fn auc(set: &ScoredSet) -> Result<f64> {
    let pos = set.positives();
    let neg = set.negatives();
    if pos == 0 || neg == 0 {
        return Err(ProcanError::usage(format!(
            "auc needs at least one positive and one negative (got {pos} and {neg})"
        )));
    }
    let n = set.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        set.scores[a]
            .partial_cmp(&set.scores[b])
            .expect("scores are finite")
    });
    // Average ranks over tie groups (ranks are 1-based).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && set.scores[order[j + 1]] == set.scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if set.labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// AUC as the trapezoidal integral of the ROC curve. Kept separate from
/// the rank form so each can serve as the other's oracle.
pub fn auc_trapezoidal(set: &ScoredSet) -> Result<f64> {
    let pos = set.positives();
    let neg = set.negatives();
    if pos == 0 || neg == 0 {
        return Err(ProcanError::usage(
            "auc needs at least one positive and one negative".to_string(),
        ));
    }
    // Sweep thresholds from high to low; tied scores move as one step.
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| {
        set.scores[b]
            .partial_cmp(&set.scores[a])
            .expect("scores are finite")
    });
    let mut area = 0.0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_tp, mut prev_fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && set.scores[order[j + 1]] == set.scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if set.labels[idx] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        // Trapezoid between the previous and current ROC points.
        let dx = (fp - prev_fp) as f64 / neg as f64;
        let y0 = prev_tp as f64 / pos as f64;
        let y1 = tp as f64 / pos as f64;
        area += dx * (y0 + y1) / 2.0;
        prev_tp = tp;
        prev_fp = fp;
        i = j + 1;
    }
    Ok(area)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEstimate {
    pub mean: f64,
    pub std: f64,
    /// Resamples discarded because the metric was undefined on them
    /// (single-class draws, for instance).
    pub skipped: usize,
}

/// Resample the set with replacement `iterations` times and report the
/// mean and sample standard deviation of the metric across resamples.
pub fn bootstrap_ci(
    set: &ScoredSet,
    metric: &dyn Fn(&ScoredSet) -> Result<f64>,
    iterations: usize,
    rng: &mut impl Rng,
) -> Result<BootstrapEstimate> {
    if iterations < 2 {
        return Err(ProcanError::usage(
            "bootstrap needs at least 2 iterations".to_string(),
        ));
    }
    if set.is_empty() {
        return Err(ProcanError::usage("bootstrap needs a nonempty set".to_string()));
    }
    let n = set.len();
    let mut values = Vec::with_capacity(iterations);
    let mut skipped = 0usize;
    for _ in 0..iterations {
        let mut scores = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let idx = rng.random_range(0..n);
            scores.push(set.scores[idx]);
            labels.push(set.labels[idx]);
        }
        let resample = ScoredSet { scores, labels };
        match metric(&resample) {
            Ok(v) => values.push(v),
            Err(_) => skipped += 1,
        }
    }
    if values.is_empty() {
        return Err(ProcanError::usage(
            "metric was undefined on every bootstrap resample".to_string(),
        ));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let std = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (values.len() - 1) as f64;
        var.sqrt()
    } else {
        0.0
    };
    Ok(BootstrapEstimate {
        mean,
        std,
        skipped,
    })
}

/// The large-sample standard-error approximation for an AUC estimate on
/// `pos` positives and `neg` negatives (Hanley-McNeil form). Used as an
/// independent sanity bound on the bootstrap spread.
pub fn auc_standard_error_approx(auc: f64, pos: usize, neg: usize) -> f64 {
    let a = auc;
    let q1 = a / (2.0 - a);
    let q2 = 2.0 * a * a / (1.0 + a);
    let p = pos as f64;
    let n = neg as f64;
    ((a * (1.0 - a) + (p - 1.0) * (q1 - a * a) + (n - 1.0) * (q2 - a * a)) / (p * n)).sqrt()
}
