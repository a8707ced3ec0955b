//! Interaction records, scale conversions, feature extraction, participant
//! splits, advice construction and synthetic advice-accuracy shifting.
//!
//! All signed quantities use the *correctness* orientation: `+1` is full
//! confidence in the true label, `-1` full confidence in the wrong one.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::math::{bar, clamp_prob, logit, sigmoid, sign_nonzero};
use crate::{Error, Result};

/// Default activation threshold on the `[-1, 1]` scale.
pub const DEFAULT_ACTIVATION_DELTA: f64 = 0.02;

/// Number of model input features.
pub const N_FEATURES: usize = 12;

/// Number of demographic / survey features (features 6..=12).
pub const N_DEMOGRAPHIC: usize = 7;

/// A response on the `[-1, 1]` scale, signed relative to the true label.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SignedResponse(f64);

impl SignedResponse {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite("signed response"));
        }
        if !(-1.0..=1.0).contains(&value) {
            return Err(Error::OutOfRange { what: "signed response", value });
        }
        Ok(Self(value))
    }

    /// From the probability assigned to the correct label.
    pub fn from_prob(p: f64) -> Result<Self> {
        Self::new(2.0 * p - 1.0)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Probability assigned to the correct label.
    pub fn prob(self) -> f64 {
        0.5 * (1.0 + self.0)
    }

    pub fn confidence(self) -> f64 {
        libm::fabs(self.0)
    }

    pub fn is_correct(self) -> bool {
        self.0 > 0.0
    }

    pub fn flipped(self) -> Self {
        Self(-self.0)
    }
}

impl TryFrom<f64> for SignedResponse {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SignedResponse> for f64 {
    fn from(r: SignedResponse) -> f64 {
        r.0
    }
}

/// Inverse sigmoid of an advice probability toward the correct label.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct AdviceLogit(pub f64);

impl AdviceLogit {
    pub fn prob(self) -> f64 {
        sigmoid(self.0)
    }

    pub fn signed(self) -> f64 {
        2.0 * sigmoid(self.0) - 1.0
    }

    pub fn confidence(self) -> f64 {
        bar(sigmoid(self.0))
    }
}

/// AI advice as the probability it assigns to the correct label.
///
/// The probability is the stored quantity so that the canonical dataset file
/// round-trips bit for bit; the logit is derived. Construction clamps to
/// `[1e-6, 1 - 1e-6]` so the logit is always finite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Advice(f64);

impl Advice {
    pub fn from_prob(p: f64) -> Result<Self> {
        if !p.is_finite() {
            return Err(Error::NonFinite("advice probability"));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::OutOfRange { what: "advice probability", value: p });
        }
        Ok(Self(clamp_prob(p)))
    }

    pub fn from_logit(a: AdviceLogit) -> Result<Self> {
        if !a.0.is_finite() {
            return Err(Error::NonFinite("advice logit"));
        }
        Self::from_prob(sigmoid(a.0))
    }

    pub fn prob(self) -> f64 {
        self.0
    }

    pub fn logit(self) -> AdviceLogit {
        AdviceLogit(logit(self.0))
    }

    /// Signed advice `2p - 1`.
    pub fn signed(self) -> f64 {
        2.0 * self.0 - 1.0
    }

    pub fn confidence(self) -> f64 {
        bar(self.0)
    }

    pub fn is_correct(self) -> bool {
        self.0 > 0.5
    }

    pub fn flipped(self) -> Self {
        Self(1.0 - self.0)
    }
}

impl TryFrom<f64> for Advice {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::from_prob(v)
    }
}

impl From<Advice> for f64 {
    fn from(a: Advice) -> f64 {
        a.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub age: f64,
    pub sex: u8,
    pub programming_experience: u8,
    pub ses: f64,
    pub ai_presence: f64,
    pub education: f64,
    pub ai_perception: f64,
}

impl Demographics {
    pub fn validate(&self) -> Result<()> {
        fn range(what: &'static str, v: f64, lo: f64, hi: f64) -> Result<()> {
            if !v.is_finite() {
                return Err(Error::NonFinite(what));
            }
            if v < lo || v > hi {
                return Err(Error::OutOfRange { what, value: v });
            }
            Ok(())
        }
        range("age", self.age, 18.0, f64::INFINITY)?;
        range("sex", f64::from(self.sex), 0.0, 1.0)?;
        range("programming", f64::from(self.programming_experience), 0.0, 1.0)?;
        range("ses", self.ses, 1.0, 10.0)?;
        range("ai_presence", self.ai_presence, 0.0, 1.0)?;
        range("education", self.education, 1.0, 8.0)?;
        range("ai_perception", self.ai_perception, -1.0, 1.0)?;
        Ok(())
    }

    /// Raw features 6..=12 in model order.
    pub fn raw_features(&self) -> [f64; N_DEMOGRAPHIC] {
        [
            self.ai_perception,
            self.age,
            f64::from(self.sex),
            f64::from(self.programming_experience),
            self.ses,
            self.ai_presence,
            self.education,
        ]
    }
}

/// One participant answering one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub participant_id: String,
    pub task_id: String,
    pub question_id: String,
    pub r1: SignedResponse,
    pub r2: SignedResponse,
    /// Advice as shown to the participant.
    pub advice: Advice,
    /// Ground-truth label in the task's own encoding.
    pub label: u8,
    pub demographics: Demographics,
}

impl InteractionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::OutOfRange { what: "label", value: f64::from(self.label) });
        }
        self.demographics.validate()
    }

    /// The same interaction with both response and advice labels flipped.
    pub fn label_flipped(&self) -> Self {
        Self {
            r1: self.r1.flipped(),
            r2: self.r2.flipped(),
            advice: self.advice.flipped(),
            ..self.clone()
        }
    }
}

/// Per-feature z-score statistics for the demographic block, taken from the
/// training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: [f64; N_DEMOGRAPHIC],
    pub std: [f64; N_DEMOGRAPHIC],
}

impl FeatureStats {
    /// Identity standardisation.
    pub fn identity() -> Self {
        Self { mean: [0.0; N_DEMOGRAPHIC], std: [1.0; N_DEMOGRAPHIC] }
    }

    pub fn fit(records: &[InteractionRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("records for feature statistics"));
        }
        let n = records.len() as f64;
        let mut mean = [0.0; N_DEMOGRAPHIC];
        for r in records {
            for (m, v) in mean.iter_mut().zip(r.demographics.raw_features()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; N_DEMOGRAPHIC];
        for r in records {
            for ((s, v), m) in var.iter_mut().zip(r.demographics.raw_features()).zip(mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut std = [1.0; N_DEMOGRAPHIC];
        for (s, v) in std.iter_mut().zip(var) {
            let sd = libm::sqrt(v / n);
            // Constant columns standardise to zero rather than dividing by zero.
            *s = if sd > 1e-12 { sd } else { 1.0 };
        }
        Ok(Self { mean, std })
    }

    pub fn standardize(&self, d: &Demographics) -> [f64; N_DEMOGRAPHIC] {
        let mut out = d.raw_features();
        for ((v, m), s) in out.iter_mut().zip(self.mean).zip(self.std) {
            *v = (*v - m) / s;
        }
        out
    }
}

/// The 12 model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    /// Builds features from an initial response, the advice probability
    /// presented (toward the correct label) and standardised demographics.
    pub fn from_parts(r1: f64, presented_prob: f64, demographics: &[f64; N_DEMOGRAPHIC]) -> Self {
        let mut f = [0.0; N_FEATURES];
        let agree = agreement(r1, presented_prob);
        f[0] = libm::fabs(r1);
        f[1] = bar(presented_prob);
        f[2] = agree;
        f[3] = f[0] * agree;
        f[4] = f[1] * agree;
        f[5..].copy_from_slice(demographics);
        Self(f)
    }

    /// Replaces the advice-derived features (2, 3, 5) for a given `r1`.
    pub fn with_advice(mut self, r1: f64, presented_prob: f64) -> Self {
        let agree = agreement(r1, presented_prob);
        self.0[1] = bar(presented_prob);
        self.0[2] = agree;
        self.0[3] = self.0[0] * agree;
        self.0[4] = self.0[1] * agree;
        self
    }

    /// Replaces every response- and advice-derived feature (1..=5).
    pub fn with_response_and_advice(mut self, r1: f64, presented_prob: f64) -> Self {
        self.0[0] = libm::fabs(r1);
        self.with_advice(r1, presented_prob)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `+1` when the response and the advice favour the same label. A response
/// or advice exactly at the midpoint counts as favouring the correct label.
pub fn agreement(r1: f64, advice_prob: f64) -> f64 {
    if sign_nonzero(r1) == sign_nonzero(2.0 * advice_prob - 1.0) {
        1.0
    } else {
        -1.0
    }
}

/// Derivative of the feature vector with respect to the presented advice
/// probability. Only features 2 and 5 depend on it continuously; the
/// agreement bit is piecewise constant.
pub fn advice_feature_jacobian(r1: f64, presented_prob: f64) -> [f64; N_FEATURES] {
    let mut j = [0.0; N_FEATURES];
    let d_bar = if presented_prob > 0.5 {
        1.0
    } else if presented_prob < 0.5 {
        -1.0
    } else {
        0.0
    };
    j[1] = d_bar;
    j[4] = agreement(r1, presented_prob) * d_bar;
    j
}

/// Features for a record, optionally with the advice replaced by a presented
/// probability (this is how a transformed advice enters the models).
pub fn extract_features(
    record: &InteractionRecord,
    presented_override: Option<f64>,
    stats: &FeatureStats,
) -> FeatureVector {
    let q = presented_override.unwrap_or(record.advice.prob());
    FeatureVector::from_parts(record.r1.value(), q, &stats.standardize(&record.demographics))
}

/// Whether the participant changed their response by more than `delta`.
pub fn activation_label(record: &InteractionRecord, delta: f64) -> bool {
    libm::fabs(record.r2.value() - record.r1.value()) > delta
}

/// `sign(r1) * (r2 - r1)`: positive when the participant grew more confident
/// in their initial label.
pub fn integration_target(record: &InteractionRecord) -> f64 {
    sign_nonzero(record.r1.value()) * (record.r2.value() - record.r1.value())
}

/// Advice for one question from the responses of a prior, unadvised group:
/// the mean probability they assigned to the correct label.
pub fn build_advice(prior: &[SignedResponse]) -> Result<Advice> {
    if prior.is_empty() {
        return Err(Error::Empty("prior responses"));
    }
    let mean = prior.iter().map(|r| r.prob()).sum::<f64>() / prior.len() as f64;
    Advice::from_prob(mean)
}

/// Train/validation/test partition keyed by participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<InteractionRecord>,
    pub val: Vec<InteractionRecord>,
    pub test: Vec<InteractionRecord>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.70, val: 0.15 }
    }
}

/// Splits records so that each participant lands in exactly one partition.
/// Participants are shuffled with a seeded generator; every partition gets at
/// least one participant when there are three or more.
pub fn split_by_participant(
    records: &[InteractionRecord],
    fractions: SplitFractions,
    seed: u64,
) -> Result<DatasetSplit> {
    if records.is_empty() {
        return Err(Error::Empty("records to split"));
    }
    let mut ids: Vec<&str> = records
        .iter()
        .map(|r| r.participant_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n = ids.len();
    let mut n_train = libm::round(fractions.train * n as f64) as usize;
    let mut n_val = libm::round(fractions.val * n as f64) as usize;
    if n >= 3 {
        n_train = n_train.clamp(1, n - 2);
        n_val = n_val.clamp(1, n - n_train - 1);
    } else {
        n_train = n_train.clamp(1, n);
        n_val = n_val.min(n - n_train);
    }
    let train_ids: BTreeSet<&str> = ids[..n_train].iter().copied().collect();
    let val_ids: BTreeSet<&str> = ids[n_train..n_train + n_val].iter().copied().collect();
    let mut split = DatasetSplit { train: Vec::new(), val: Vec::new(), test: Vec::new(), seed };
    for r in records {
        let id = r.participant_id.as_str();
        if train_ids.contains(id) {
            split.train.push(r.clone());
        } else if val_ids.contains(id) {
            split.val.push(r.clone());
        } else {
            split.test.push(r.clone());
        }
    }
    Ok(split)
}

/// Fraction of records whose advice favours the correct label.
pub fn advice_accuracy(records: &[InteractionRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.advice.is_correct()).count() as f64 / records.len() as f64
}

/// Tolerance band around the requested advice accuracy.
pub const SHIFT_TOLERANCE: f64 = 0.01;

const SHIFT_ITERATIONS: usize = 200;

/// Moves the advice accuracy of `records` to within one percentage point of
/// `target`.
///
/// To raise accuracy every advice logit is shifted toward the correct label by
/// a common offset; to lower it, seeded zero-mean Gaussian noise of common
/// scale is added. The offset or scale is found by bisection.
pub fn synth_shift_accuracy(
    records: &[InteractionRecord],
    target: f64,
    seed: u64,
) -> Result<Vec<InteractionRecord>> {
    if records.is_empty() {
        return Err(Error::Empty("records to shift"));
    }
    if !(target > 0.5 && target < 1.0) {
        return Err(Error::OutOfRange { what: "target advice accuracy", value: target });
    }
    let current = advice_accuracy(records);
    if libm::fabs(current - target) <= SHIFT_TOLERANCE {
        return Ok(records.to_vec());
    }
    let logits: Vec<f64> = records.iter().map(|r| r.advice.logit().0).collect();
    let accuracy_of = |shifted: &[f64]| {
        shifted.iter().filter(|a| **a > 0.0).count() as f64 / shifted.len() as f64
    };

    let shifted: Vec<f64> = if target > current {
        let shift = |c: f64| logits.iter().map(|a| a + c).collect::<Vec<_>>();
        let (c, _) = bisect_band(|c| accuracy_of(&shift(c)), target);
        shift(c)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..logits.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let perturb = |s: f64| logits.iter().zip(&noise).map(|(a, z)| a + s * z).collect::<Vec<_>>();
        let (s, _) = bisect_band(|s| -accuracy_of(&perturb(s)), -target);
        perturb(s)
    };
    let achieved = accuracy_of(&shifted);
    if libm::fabs(achieved - target) > SHIFT_TOLERANCE {
        return Err(Error::Unreachable { target, achieved });
    }
    records
        .iter()
        .zip(shifted)
        .map(|(r, a)| Ok(InteractionRecord { advice: Advice::from_logit(AdviceLogit(a))?, ..r.clone() }))
        .collect()
}

/// Bisection over a parameter `x >= 0` for a roughly increasing `f`, stopping
/// as soon as `f(x)` is within [`SHIFT_TOLERANCE`] of `target`. Returns the
/// closest parameter seen otherwise.
fn bisect_band(f: impl Fn(f64) -> f64, target: f64) -> (f64, f64) {
    let accept = |v: f64| libm::fabs(v - target) <= SHIFT_TOLERANCE;
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut f_hi = f(hi);
    let mut grow = 0;
    while f_hi < target - SHIFT_TOLERANCE && grow < 60 {
        lo = hi;
        hi *= 2.0;
        f_hi = f(hi);
        grow += 1;
    }
    if accept(f_hi) {
        return (hi, f_hi);
    }
    let mut best = (hi, f_hi);
    for _ in 0..SHIFT_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if accept(v) {
            return (mid, v);
        }
        if libm::fabs(v - target) < libm::fabs(best.1 - target) {
            best = (mid, v);
        }
        if v < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;

    pub(crate) fn demo() -> Demographics {
        Demographics {
            age: 30.0,
            sex: 1,
            programming_experience: 0,
            ses: 5.0,
            ai_presence: 0.5,
            education: 6.0,
            ai_perception: 0.2,
        }
    }

    fn record(pid: &str, r1: f64, r2: f64, advice: f64) -> InteractionRecord {
        InteractionRecord {
            participant_id: pid.to_string(),
            task_id: "art".into(),
            question_id: "q1".into(),
            r1: SignedResponse::new(r1).unwrap(),
            r2: SignedResponse::new(r2).unwrap(),
            advice: Advice::from_prob(advice).unwrap(),
            label: 1,
            demographics: demo(),
        }
    }

    #[test]
    fn feature_examples() {
        let stats = FeatureStats::identity();
        let f = extract_features(&record("p", 0.5, 0.5, 0.8), None, &stats).0;
        assert_eq!(f[0], 0.5);
        assert!((f[1] - 0.8).abs() < 1e-15);
        assert_eq!(f[2], 1.0);
        assert_eq!(f[3], 0.5);
        assert!((f[4] - 0.8).abs() < 1e-15);

        let f = extract_features(&record("p", 0.5, 0.5, 0.2), None, &stats).0;
        assert_eq!(f[2], -1.0);
        assert_eq!(f[3], -0.5);
        assert!((f[1] - 0.8).abs() < 1e-15);
        assert!((f[4] + 0.8).abs() < 1e-15);
    }

    #[test]
    fn feature_override_uses_presented_advice() {
        let stats = FeatureStats::identity();
        let r = record("p", 0.5, 0.5, 0.8);
        let f = extract_features(&r, Some(0.3), &stats).0;
        assert!((f[1] - 0.7).abs() < 1e-15);
        assert_eq!(f[2], -1.0);
    }

    #[test]
    fn zero_response_agrees_with_correct_advice() {
        let stats = FeatureStats::identity();
        let f = extract_features(&record("p", 0.0, 0.0, 0.8), None, &stats).0;
        assert_eq!(f[2], 1.0);
        assert_eq!(integration_target(&record("p", 0.0, 0.3, 0.8)), 0.3);
    }

    #[test]
    fn activation_examples() {
        assert!(!activation_label(&record("p", 0.4, 0.4, 0.8), 0.02));
        assert!(activation_label(&record("p", 0.4, -0.1, 0.8), 0.02));
    }

    #[test]
    fn integration_examples() {
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(integration_target(&record("p", 0.5, 0.9, 0.8)), 0.4));
        assert!(close(integration_target(&record("p", -0.5, -0.9, 0.8)), 0.4));
        assert!(close(integration_target(&record("p", -0.3, 0.6, 0.8)), -0.9));
    }

    #[test]
    fn build_advice_examples() {
        let one = SignedResponse::new(1.0).unwrap();
        let a = build_advice(&[one, one, one]).unwrap();
        assert_eq!(a.prob(), 1.0 - 1e-6);
        assert!(a.logit().0 > 13.0);

        let half = SignedResponse::new(0.5).unwrap();
        let a = build_advice(&[half, half.flipped()]).unwrap();
        assert_eq!(a.prob(), 0.5);
        assert_eq!(a.logit().0, 0.0);

        assert_eq!(build_advice(&[]), Err(Error::Empty("prior responses")));
    }

    #[test]
    fn signed_response_rejects_out_of_range() {
        assert!(SignedResponse::new(1.01).is_err());
        assert!(SignedResponse::new(f64::NAN).is_err());
        assert_eq!(SignedResponse::from_prob(0.8).unwrap().value(), 0.8 * 2.0 - 1.0);
    }

    #[test]
    fn demographics_validation() {
        let mut d = demo();
        assert!(d.validate().is_ok());
        d.age = 17.0;
        assert!(d.validate().is_err());
        let mut d = demo();
        d.education = 9.0;
        assert!(d.validate().is_err());
    }

    #[test]
    fn split_partitions_participants() {
        let records: Vec<_> = (0..20)
            .flat_map(|p| (0..3).map(move |_| record(&format!("p{p}"), 0.2, 0.3, 0.7)))
            .collect();
        let split = split_by_participant(&records, SplitFractions::default(), 7).unwrap();
        assert_eq!(split.train.len() + split.val.len() + split.test.len(), records.len());
        let ids = |v: &[InteractionRecord]| {
            v.iter().map(|r| r.participant_id.clone()).collect::<BTreeSet<_>>()
        };
        let (a, b, c) = (ids(&split.train), ids(&split.val), ids(&split.test));
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        assert_eq!(a.len(), 14);
        assert_eq!(b.len(), 3);
        assert_eq!(c.len(), 3);
        assert_eq!(split, split_by_participant(&records, SplitFractions::default(), 7).unwrap());
    }

    #[test]
    fn feature_stats_from_training_records() {
        let mut a = record("a", 0.1, 0.1, 0.6);
        let mut b = record("b", 0.1, 0.1, 0.6);
        a.demographics.age = 20.0;
        b.demographics.age = 40.0;
        let stats = FeatureStats::fit(&[a.clone(), b]).unwrap();
        assert_eq!(stats.mean[1], 30.0);
        assert_eq!(stats.std[1], 10.0);
        // constant column
        assert_eq!(stats.std[0], 1.0);
        assert_eq!(stats.standardize(&a.demographics)[1], -1.0);
    }
}
