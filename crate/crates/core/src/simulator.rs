//! Expected performance of the human-AI system under a presentation
//! transform, according to a frozen behaviour model.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::behavior::{predict_features, HumanBehavior, PredictedOutcome};
use crate::data::{extract_features, InteractionRecord};
use crate::transform::TransformParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SimulationMode {
    /// Exact two-branch expectation per record.
    Expectation,
    /// `draws` activation coin flips per record.
    Sample { seed: u64, draws: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ArmMetrics {
    pub accuracy: f64,
    pub correct_confidence: f64,
    pub activation_rate: f64,
    pub expected_loss: f64,
}

impl ArmMetrics {
    fn minus(&self, other: &Self) -> Self {
        Self {
            accuracy: self.accuracy - other.accuracy,
            correct_confidence: self.correct_confidence - other.correct_confidence,
            activation_rate: self.activation_rate - other.activation_rate,
            expected_loss: self.expected_loss - other.expected_loss,
        }
    }
}

/// Behaviour-model prediction for one record with its advice shown through
/// `transform`.
pub fn record_outcome<B: HumanBehavior + ?Sized>(
    behavior: &B,
    transform: &TransformParams,
    record: &InteractionRecord,
) -> PredictedOutcome {
    let presented = transform.apply(record.advice.logit());
    let x = extract_features(record, Some(presented), behavior.stats());
    predict_features(behavior, record.r1.value(), &x)
}

fn correct(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn simulate<B: HumanBehavior + ?Sized>(
    behavior: &B,
    transform: &TransformParams,
    records: &[InteractionRecord],
    mode: SimulationMode,
) -> Result<ArmMetrics> {
    if records.is_empty() {
        return Err(Error::Empty("records to simulate"));
    }
    transform.validate()?;
    let outcomes: Vec<(f64, PredictedOutcome)> =
        records.iter().map(|r| (r.r1.value(), record_outcome(behavior, transform, r))).collect();
    let mut sum = ArmMetrics::default();
    match mode {
        SimulationMode::Expectation => {
            for (r1, o) in &outcomes {
                let p = o.p_activate;
                let r2 = o.r2_if_activated.value();
                sum.accuracy += (1.0 - p) * correct(*r1) + p * correct(r2);
                sum.correct_confidence += (1.0 - p) * r1 + p * r2;
                sum.activation_rate += p;
                sum.expected_loss += o.expected_loss;
            }
        }
        SimulationMode::Sample { seed, draws } => {
            if draws == 0 {
                return Err(Error::OutOfRange { what: "sample draws", value: 0.0 });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = draws as f64;
            for (r1, o) in &outcomes {
                let k = Binomial::new(draws, o.p_activate)
                    .map_err(|_| Error::OutOfRange { what: "activation probability", value: o.p_activate })?
                    .sample(&mut rng) as f64;
                let frac = k / n;
                let r2 = o.r2_if_activated.value();
                sum.accuracy += (1.0 - frac) * correct(*r1) + frac * correct(r2);
                sum.correct_confidence += (1.0 - frac) * r1 + frac * r2;
                sum.activation_rate += frac;
                sum.expected_loss += (1.0 - frac) * crate::math::signed_log_loss(*r1)
                    + frac * crate::math::signed_log_loss(r2);
            }
        }
    }
    let n = records.len() as f64;
    Ok(ArmMetrics {
        accuracy: sum.accuracy / n,
        correct_confidence: sum.correct_confidence / n,
        activation_rate: sum.activation_rate / n,
        expected_loss: sum.expected_loss / n,
    })
}

/// Two arms and their differences (`modified - baseline`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub baseline_transform: TransformParams,
    pub modified_transform: TransformParams,
    pub baseline: ArmMetrics,
    pub modified: ArmMetrics,
    pub delta: ArmMetrics,
    pub records: usize,
}

pub fn compare<B: HumanBehavior + ?Sized>(
    behavior: &B,
    baseline: &TransformParams,
    modified: &TransformParams,
    records: &[InteractionRecord],
) -> Result<SimulationReport> {
    let a = simulate(behavior, baseline, records, SimulationMode::Expectation)?;
    let b = simulate(behavior, modified, records, SimulationMode::Expectation)?;
    Ok(SimulationReport {
        baseline_transform: *baseline,
        modified_transform: *modified,
        baseline: a,
        modified: b,
        delta: b.minus(&a),
        records: records.len(),
    })
}

/// Standard errors of the sample-mode means for `draws` flips per record,
/// in the order accuracy, correct confidence, activation rate.
pub fn sample_standard_errors<B: HumanBehavior + ?Sized>(
    behavior: &B,
    transform: &TransformParams,
    records: &[InteractionRecord],
    draws: u64,
) -> [f64; 3] {
    let n = records.len() as f64;
    let mut var = [0.0; 3];
    for r in records {
        let o = record_outcome(behavior, transform, r);
        let p = o.p_activate;
        let bern = p * (1.0 - p) / draws as f64;
        let r1 = r.r1.value();
        let r2 = o.r2_if_activated.value();
        let acc_gap = correct(r2) - correct(r1);
        let conf_gap = r2 - r1;
        var[0] += bern * acc_gap * acc_gap;
        var[1] += bern * conf_gap * conf_gap;
        var[2] += bern;
    }
    var.map(|v| libm::sqrt(v) / n)
}
