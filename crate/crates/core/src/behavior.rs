//! The activation-integration model of how people use advice.
//!
//! With probability `p = f_activation(x)` a person revises their initial
//! response `r1` to `r1 + sign(r1) * f_integration(x)`; otherwise they keep
//! `r1`. Both stages read the same 12 features.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{
    activation_label, extract_features, integration_target, Demographics, DatasetSplit,
    FeatureStats, FeatureVector, InteractionRecord, SignedResponse, DEFAULT_ACTIVATION_DELTA,
    N_FEATURES,
};
use crate::math::{sign_nonzero, signed_log_loss};
use crate::metrics::{r_squared, rmse, roc_auc};
use crate::neural::{train, Example, Head, Loss, Mlp, TrainConfig, TrainHistory};
use crate::{Error, Result};

/// Range of the integration target `sign(r1) * (r2 - r1)`.
pub const INTEGRATION_RANGE: (f64, f64) = (-2.0, 2.0);

/// A model of how a person responds to presented advice.
///
/// The gradient methods return the value together with its derivative with
/// respect to the feature vector. Implementations that are not differentiable
/// may keep the default of a zero gradient.
pub trait HumanBehavior {
    fn stats(&self) -> &FeatureStats;

    /// Probability that the person revises their response.
    fn activation(&self, x: &FeatureVector) -> f64;

    /// Predicted `sign(r1) * (r2 - r1)` for an activated person, within
    /// [`INTEGRATION_RANGE`].
    fn integration(&self, x: &FeatureVector) -> f64;

    fn activation_grad(&self, x: &FeatureVector) -> (f64, [f64; N_FEATURES]) {
        (self.activation(x), [0.0; N_FEATURES])
    }

    fn integration_grad(&self, x: &FeatureVector) -> (f64, [f64; N_FEATURES]) {
        (self.integration(x), [0.0; N_FEATURES])
    }
}

/// Prediction of the composed model for one interaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedOutcome {
    pub p_activate: f64,
    pub r2_if_activated: SignedResponse,
    /// Expected log-loss of the final response.
    pub expected_loss: f64,
}

/// Final response of an activated person.
pub fn revised_response(r1: f64, delta: f64) -> f64 {
    (r1 + sign_nonzero(r1) * delta).clamp(-1.0, 1.0)
}

/// Composes activation and integration for an initial response, a presented
/// advice probability (toward the correct label) and standardised
/// demographics.
pub fn predict_features<B: HumanBehavior + ?Sized>(behavior: &B, r1: f64, x: &FeatureVector) -> PredictedOutcome {
    let p = behavior.activation(x).clamp(0.0, 1.0);
    let r2 = revised_response(r1, behavior.integration(x));
    let expected_loss = (1.0 - p) * signed_log_loss(r1) + p * signed_log_loss(r2);
    PredictedOutcome {
        p_activate: p,
        r2_if_activated: SignedResponse::new(r2).expect("clamped to [-1, 1]"),
        expected_loss,
    }
}

/// [`predict_features`] from raw parts.
pub fn predict<B: HumanBehavior + ?Sized>(
    behavior: &B,
    r1: SignedResponse,
    presented_prob: f64,
    demographics: &Demographics,
) -> PredictedOutcome {
    let x = FeatureVector::from_parts(r1.value(), presented_prob, &behavior.stats().standardize(demographics));
    predict_features(behavior, r1.value(), &x)
}

/// Fitted activation and integration networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorModel {
    pub activation: Mlp,
    pub integration: Mlp,
    pub delta: f64,
    pub stats: FeatureStats,
}

impl BehaviorModel {
    pub fn validate(&self) -> Result<()> {
        self.activation.validate()?;
        self.integration.validate()?;
        if self.activation.head != Head::Sigmoid {
            return Err(Error::LossHead("activation network needs a sigmoid head"));
        }
        if self.integration.head != Head::Linear {
            return Err(Error::LossHead("integration network needs a linear head"));
        }
        if self.activation.input_dim() != N_FEATURES || self.integration.input_dim() != N_FEATURES {
            return Err(Error::Shape("behaviour networks must take 12 features".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::OutOfRange { what: "activation delta", value: self.delta });
        }
        Ok(())
    }
}

impl HumanBehavior for BehaviorModel {
    fn stats(&self) -> &FeatureStats {
        &self.stats
    }

    fn activation(&self, x: &FeatureVector) -> f64 {
        self.activation.forward_unchecked(&x.0)
    }

    fn integration(&self, x: &FeatureVector) -> f64 {
        self.integration.forward_unchecked(&x.0).clamp(INTEGRATION_RANGE.0, INTEGRATION_RANGE.1)
    }

    fn activation_grad(&self, x: &FeatureVector) -> (f64, [f64; N_FEATURES]) {
        let (y, g) = self.activation.output_and_input_grad_unchecked(&x.0);
        (y, to_array(&g))
    }

    fn integration_grad(&self, x: &FeatureVector) -> (f64, [f64; N_FEATURES]) {
        let (y, g) = self.integration.output_and_input_grad_unchecked(&x.0);
        if y < INTEGRATION_RANGE.0 || y > INTEGRATION_RANGE.1 {
            (y.clamp(INTEGRATION_RANGE.0, INTEGRATION_RANGE.1), [0.0; N_FEATURES])
        } else {
            (y, to_array(&g))
        }
    }
}

fn to_array(v: &[f64]) -> [f64; N_FEATURES] {
    let mut out = [0.0; N_FEATURES];
    out.copy_from_slice(v);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BehaviorConfig {
    pub delta: f64,
    pub train: TrainConfig,
    /// Seed for network initialisation; the integration network uses `seed + 1`.
    pub init_seed: u64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self { delta: DEFAULT_ACTIVATION_DELTA, train: TrainConfig::default(), init_seed: 0 }
    }
}

/// Held-out evaluation of a fitted behaviour model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub train_records: usize,
    pub val_records: usize,
    pub test_records: usize,
    pub activated_train_records: usize,
    pub activation_auc: Option<f64>,
    pub integration_rmse: Option<f64>,
    pub integration_r2: Option<f64>,
    pub activation_history: TrainHistory,
    pub integration_history: TrainHistory,
}

fn activation_examples(records: &[InteractionRecord], stats: &FeatureStats, delta: f64) -> Vec<Example> {
    records
        .iter()
        .map(|r| Example {
            input: extract_features(r, None, stats).0.to_vec(),
            target: f64::from(u8::from(activation_label(r, delta))),
        })
        .collect()
}

fn integration_examples(records: &[InteractionRecord], stats: &FeatureStats, delta: f64) -> Vec<Example> {
    records
        .iter()
        .filter(|r| activation_label(r, delta))
        .map(|r| Example { input: extract_features(r, None, stats).0.to_vec(), target: integration_target(r) })
        .collect()
}

/// Fits both stages on the training split, early-stops on the validation
/// split and reports activation ROC-AUC and integration RMSE / R^2 on the
/// held-out test participants. The integration network only sees activated
/// interactions.
pub fn fit_behavior(split: &DatasetSplit, config: &BehaviorConfig) -> Result<(BehaviorModel, FitReport)> {
    if split.train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if !(config.delta > 0.0) {
        return Err(Error::OutOfRange { what: "activation delta", value: config.delta });
    }
    let stats = FeatureStats::fit(&split.train)?;
    let delta = config.delta;

    let act_train = activation_examples(&split.train, &stats, delta);
    let act_val = if split.val.is_empty() { act_train.clone() } else { activation_examples(&split.val, &stats, delta) };
    let (activation, activation_history) =
        train(Mlp::standard(Head::Sigmoid, config.init_seed), &act_train, &act_val, Loss::Bce, &config.train)?;

    let int_train = integration_examples(&split.train, &stats, delta);
    if int_train.is_empty() {
        return Err(Error::NoActivated);
    }
    let mut int_val = integration_examples(&split.val, &stats, delta);
    if int_val.is_empty() {
        int_val = int_train.clone();
    }
    let (integration, integration_history) = train(
        Mlp::standard(Head::Linear, config.init_seed.wrapping_add(1)),
        &int_train,
        &int_val,
        Loss::Mse,
        &config.train,
    )?;

    let model = BehaviorModel { activation, integration, delta, stats };

    let act_test = activation_examples(&split.test, &model.stats, delta);
    let activation_auc = if act_test.is_empty() {
        None
    } else {
        let scores: Vec<f64> = act_test.iter().map(|e| model.activation.forward_unchecked(&e.input)).collect();
        let labels: Vec<bool> = act_test.iter().map(|e| e.target == 1.0).collect();
        roc_auc(&scores, &labels).ok()
    };
    let int_test = integration_examples(&split.test, &model.stats, delta);
    let (integration_rmse, integration_r2) = if int_test.is_empty() {
        (None, None)
    } else {
        let pred: Vec<f64> = int_test
            .iter()
            .map(|e| model.integration.forward_unchecked(&e.input).clamp(INTEGRATION_RANGE.0, INTEGRATION_RANGE.1))
            .collect();
        let truth: Vec<f64> = int_test.iter().map(|e| e.target).collect();
        (rmse(&pred, &truth).ok(), r_squared(&pred, &truth).ok())
    };

    let report = FitReport {
        train_records: split.train.len(),
        val_records: split.val.len(),
        test_records: split.test.len(),
        activated_train_records: int_train.len(),
        activation_auc,
        integration_rmse,
        integration_r2,
        activation_history,
        integration_history,
    };
    Ok((model, report))
}

/// Activation averaged over `records` with the advice overridden by each
/// signed value in `grid`.
pub fn partial_dependence<B: HumanBehavior + ?Sized>(
    behavior: &B,
    records: &[InteractionRecord],
    grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation records"));
    }
    let base: Vec<(f64, FeatureVector)> =
        records.iter().map(|r| (r.r1.value(), extract_features(r, None, behavior.stats()))).collect();
    grid.iter()
        .map(|&s| {
            if !(-1.0..=1.0).contains(&s) {
                return Err(Error::OutOfRange { what: "advice grid value", value: s });
            }
            let q = 0.5 * (1.0 + s);
            let mean = base.iter().map(|(r1, x)| behavior.activation(&x.with_advice(*r1, q))).sum::<f64>()
                / base.len() as f64;
            Ok((s, mean))
        })
        .collect()
}

/// Average integration output over `records` on an initial-response x advice
/// grid (both signed, `[-1, 1]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub x_label: String,
    pub y_label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `values[row][col]` with rows along `y` and columns along `x`.
    pub values: Vec<Vec<f64>>,
}

pub fn integration_heatmap<B: HumanBehavior + ?Sized>(
    behavior: &B,
    records: &[InteractionRecord],
    r1_grid: &[f64],
    advice_grid: &[f64],
) -> Result<Heatmap> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation records"));
    }
    for &v in r1_grid.iter().chain(advice_grid) {
        if !(-1.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange { what: "heatmap grid value", value: v });
        }
    }
    let base: Vec<FeatureVector> = records.iter().map(|r| extract_features(r, None, behavior.stats())).collect();
    let values = advice_grid
        .iter()
        .map(|&s| {
            let q = 0.5 * (1.0 + s);
            r1_grid
                .iter()
                .map(|&r1| {
                    base.iter().map(|x| behavior.integration(&x.with_response_and_advice(r1, q))).sum::<f64>()
                        / base.len() as f64
                })
                .collect()
        })
        .collect();
    Ok(Heatmap {
        x_label: String::from("initial_response"),
        y_label: String::from("advice"),
        x: r1_grid.to_vec(),
        y: advice_grid.to_vec(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureStats;

    /// Constant activation and integration, for branch checks.
    pub(crate) struct Fixed {
        pub p: f64,
        pub delta: f64,
        pub stats: FeatureStats,
    }

    impl HumanBehavior for Fixed {
        fn stats(&self) -> &FeatureStats {
            &self.stats
        }
        fn activation(&self, _: &FeatureVector) -> f64 {
            self.p
        }
        fn integration(&self, _: &FeatureVector) -> f64 {
            self.delta
        }
    }

    fn demo() -> Demographics {
        Demographics {
            age: 25.0,
            sex: 0,
            programming_experience: 1,
            ses: 6.0,
            ai_presence: 0.8,
            education: 6.0,
            ai_perception: -0.3,
        }
    }

    #[test]
    fn branch_collapse() {
        let r1 = SignedResponse::new(0.4).unwrap();
        let never = Fixed { p: 0.0, delta: 0.3, stats: FeatureStats::identity() };
        assert_eq!(predict(&never, r1, 0.8, &demo()).expected_loss, signed_log_loss(0.4));
        let always = Fixed { p: 1.0, delta: 0.3, stats: FeatureStats::identity() };
        let out = predict(&always, r1, 0.8, &demo());
        assert_eq!(out.r2_if_activated.value(), 0.4 + 0.3);
        assert_eq!(out.expected_loss, signed_log_loss(0.4 + 0.3));
    }

    #[test]
    fn convex_combination() {
        let half = Fixed { p: 0.5, delta: -0.2, stats: FeatureStats::identity() };
        let out = predict(&half, SignedResponse::new(-0.5).unwrap(), 0.3, &demo());
        // r1 negative: revision moves by sign(r1) * delta = +0.2
        assert!((out.r2_if_activated.value() - (-0.3)).abs() < 1e-15);
        let expected = 0.5 * signed_log_loss(-0.5) + 0.5 * signed_log_loss(-0.3);
        assert_eq!(out.expected_loss, expected);
    }

    #[test]
    fn revision_is_clamped() {
        assert_eq!(revised_response(0.9, 2.0), 1.0);
        assert_eq!(revised_response(-0.9, 2.0), -1.0);
        assert_eq!(revised_response(0.5, -2.0), -1.0);
        assert_eq!(revised_response(0.0, 0.25), 0.25);
    }

    #[test]
    fn constant_model_has_flat_pdp_and_zero_heatmap() {
        let records = alloc::vec![crate::test_util::record(0.3, 0.5, 0.7)];
        let flat = Fixed { p: 0.42, delta: 0.0, stats: FeatureStats::identity() };
        let grid = crate::math::symmetric_unit_grid(11);
        let pdp = partial_dependence(&flat, &records, &grid).unwrap();
        assert!(pdp.iter().all(|(_, v)| *v == 0.42));
        let hm = integration_heatmap(&flat, &records, &grid, &grid).unwrap();
        assert!(hm.values.iter().flatten().all(|v| *v == 0.0));
        assert!(partial_dependence(&flat, &[], &grid).is_err());
    }
}
