//! Calibration and performance metrics.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{activation_label, InteractionRecord};
use crate::math::bar;
use crate::{Error, Result};

/// Default ECE bin count.
pub const DEFAULT_ECE_BINS: usize = 10;

/// Number of initial-response bins for binned averages.
pub const RESPONSE_BINS: usize = 21;

/// Index of `x` among `n` equal-width bins on `[lo, hi]`. A value on an
/// interior edge goes to the lower bin; the rightmost bin is closed.
pub fn bin_index(x: f64, lo: f64, hi: f64, n: usize) -> usize {
    let t = (x - lo) / (hi - lo) * n as f64;
    let last = n as i64 - 1;
    let mut idx = (libm::ceil(t) as i64 - 1).clamp(0, last);
    let edge = |k: i64| lo + (hi - lo) * k as f64 / n as f64;
    // Compare against the same edge values `edges` reports.
    if idx > 0 && x <= edge(idx) {
        idx -= 1;
    } else if idx < last && x > edge(idx + 1) {
        idx += 1;
    }
    idx as usize
}

fn edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

/// Reliability data over the confidence of the predicted label, `[0.5, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBins {
    pub edges: Vec<f64>,
    pub bins: Vec<CalibrationBin>,
}

impl CalibrationBins {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn ece(&self) -> f64 {
        let n = self.total() as f64;
        self.bins
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| b.count as f64 / n * libm::fabs(b.accuracy - b.mean_confidence))
            .sum()
    }
}

/// Bins predictions `probs` (probability of label 1) against binary
/// `outcomes`. The predicted label is 1 when `p >= 0.5`.
pub fn calibration_bins(probs: &[f64], outcomes: &[u8], n_bins: usize) -> Result<CalibrationBins> {
    if probs.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if probs.len() != outcomes.len() {
        return Err(Error::Shape(alloc::format!(
            "{} predictions vs {} outcomes",
            probs.len(),
            outcomes.len()
        )));
    }
    if n_bins == 0 {
        return Err(Error::OutOfRange { what: "n_bins", value: 0.0 });
    }
    let mut conf_sum = alloc::vec![0.0; n_bins];
    let mut correct = alloc::vec![0usize; n_bins];
    let mut count = alloc::vec![0usize; n_bins];
    for (&p, &y) in probs.iter().zip(outcomes) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::OutOfRange { what: "predicted probability", value: p });
        }
        let conf = bar(p);
        let predicted = u8::from(p >= 0.5);
        let b = bin_index(conf, 0.5, 1.0, n_bins);
        count[b] += 1;
        conf_sum[b] += conf;
        if predicted == y {
            correct[b] += 1;
        }
    }
    let bins = (0..n_bins)
        .map(|b| {
            let c = count[b];
            if c == 0 {
                CalibrationBin { count: 0, mean_confidence: 0.0, accuracy: 0.0 }
            } else {
                CalibrationBin {
                    count: c,
                    mean_confidence: conf_sum[b] / c as f64,
                    accuracy: correct[b] as f64 / c as f64,
                }
            }
        })
        .collect();
    Ok(CalibrationBins { edges: edges(0.5, 1.0, n_bins), bins })
}

/// Expected calibration error with equal-width confidence bins.
pub fn ece(probs: &[f64], outcomes: &[u8], n_bins: usize) -> Result<f64> {
    Ok(calibration_bins(probs, outcomes, n_bins)?.ece())
}

/// ECE of the advice shown in `records`. The advice is stored relative to
/// the correct label, so every outcome is "correct label".
pub fn advice_ece(records: &[InteractionRecord], n_bins: usize) -> Result<f64> {
    let probs: Vec<f64> = records.iter().map(|r| r.advice.prob()).collect();
    let outcomes = alloc::vec![1u8; probs.len()];
    ece(&probs, &outcomes, n_bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseSelector {
    R1,
    R2,
}

impl ResponseSelector {
    pub fn pick(self, r: &InteractionRecord) -> f64 {
        match self {
            Self::R1 => r.r1.value(),
            Self::R2 => r.r2.value(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub accuracy: f64,
    pub correct_confidence: f64,
    pub activation_rate: f64,
}

/// Accuracy and correct-label confidence of the selected response, plus the
/// activation rate at threshold `delta`. A response exactly at the midpoint
/// counts as incorrect.
pub fn performance(
    records: &[InteractionRecord],
    selector: ResponseSelector,
    delta: f64,
) -> Result<Performance> {
    if records.is_empty() {
        return Err(Error::Empty("records"));
    }
    let n = records.len() as f64;
    let accuracy = records.iter().filter(|r| selector.pick(r) > 0.0).count() as f64 / n;
    let correct_confidence = records.iter().map(|r| selector.pick(r)).sum::<f64>() / n;
    let activation_rate = records.iter().filter(|r| activation_label(r, delta)).count() as f64 / n;
    Ok(Performance { accuracy, correct_confidence, activation_rate })
}

/// Per-record quantity averaged within initial-response bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum BinnedQuantity {
    ActivationRate { delta: f64 },
    Accuracy { response: ResponseSelector },
    CorrectConfidence { response: ResponseSelector },
    /// Accuracy after advice minus accuracy before.
    AccuracyDelta,
    /// Correct-label confidence after advice minus before.
    ConfidenceDelta,
}

impl BinnedQuantity {
    pub fn value(self, r: &InteractionRecord) -> f64 {
        let correct = |v: f64| if v > 0.0 { 1.0 } else { 0.0 };
        match self {
            Self::ActivationRate { delta } => f64::from(u8::from(activation_label(r, delta))),
            Self::Accuracy { response } => correct(response.pick(r)),
            Self::CorrectConfidence { response } => response.pick(r),
            Self::AccuracyDelta => correct(r.r2.value()) - correct(r.r1.value()),
            Self::ConfidenceDelta => r.r2.value() - r.r1.value(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedMetric {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Per-bin mean, `None` for empty bins.
    pub values: Vec<Option<f64>>,
    /// Unweighted mean over non-empty bins.
    pub mean: f64,
}

/// Groups records by initial response into [`RESPONSE_BINS`] uniform bins on
/// `[-1, 1]` and averages `quantity` per bin, then across non-empty bins.
pub fn binned_metrics(records: &[InteractionRecord], quantity: BinnedQuantity) -> Result<BinnedMetric> {
    binned_by(records, RESPONSE_BINS, |r| quantity.value(r))
}

pub fn binned_by(
    records: &[InteractionRecord],
    n_bins: usize,
    value: impl Fn(&InteractionRecord) -> f64,
) -> Result<BinnedMetric> {
    if records.is_empty() {
        return Err(Error::Empty("records"));
    }
    let mut sums = alloc::vec![0.0; n_bins];
    let mut counts = alloc::vec![0usize; n_bins];
    for r in records {
        let b = bin_index(r.r1.value(), -1.0, 1.0, n_bins);
        sums[b] += value(r);
        counts[b] += 1;
    }
    let values: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    let filled: Vec<f64> = values.iter().flatten().copied().collect();
    let mean = filled.iter().sum::<f64>() / filled.len() as f64;
    Ok(BinnedMetric { edges: edges(-1.0, 1.0, n_bins), counts, values, mean })
}

/// Histogram of `values` over `n` equal-width bins on `[lo, hi]`.
pub fn histogram(values: &[f64], lo: f64, hi: f64, n: usize) -> (Vec<f64>, Vec<usize>) {
    let mut counts = alloc::vec![0usize; n];
    for &v in values {
        counts[bin_index(v, lo, hi, n)] += 1;
    }
    (edges(lo, hi, n), counts)
}

/// Area under the ROC curve via the rank-sum statistic; tied scores share
/// their average rank.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(alloc::format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Empty("one of the ROC classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg;
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::Shape(alloc::format!("{} predictions vs {} targets", pred.len(), truth.len())));
    }
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(libm::sqrt(sse / pred.len() as f64))
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r_squared(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::Shape(alloc::format!("{} predictions vs {} targets", pred.len(), truth.len())));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Empty("target variance"));
    }
    Ok(1.0 - ss_res / ss_tot)
}
