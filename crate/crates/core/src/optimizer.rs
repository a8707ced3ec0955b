//! Fits `(alpha, beta)` of the sigmoid-like transform by gradient descent
//! through a frozen behaviour model, minimising the expected log-loss of the
//! final response.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{HumanBehavior, INTEGRATION_RANGE};
use crate::data::{
    advice_feature_jacobian, advice_accuracy, extract_features, synth_shift_accuracy,
    InteractionRecord,
};
use crate::math::{logit, sign_nonzero, signed_log_loss, signed_log_loss_grad};
use crate::simulator::{compare, record_outcome, SimulationReport};
use crate::transform::TransformParams;
use crate::{Error, Result};

/// Mean expected loss of the final response under `params`.
pub fn objective<B: HumanBehavior + ?Sized>(
    behavior: &B,
    params: &TransformParams,
    records: &[InteractionRecord],
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("records for the objective"));
    }
    params.validate()?;
    Ok(records.iter().map(|r| record_outcome(behavior, params, r).expected_loss).sum::<f64>()
        / records.len() as f64)
}

/// Expected loss of one record and its gradient in `(alpha, beta)`.
///
/// The presented probability `q = g(A)` enters the features through the
/// advice confidence and its signed copy; the agreement bit does not change
/// because `g` preserves the recommended label.
fn record_loss_and_grad<B: HumanBehavior + ?Sized>(
    behavior: &B,
    alpha: f64,
    beta: f64,
    record: &InteractionRecord,
) -> (f64, [f64; 2]) {
    let params = TransformParams::SigmoidLike { alpha, beta };
    let a = record.advice.logit();
    let q = params.apply(a);
    let (dq_da, dq_db) = params.grad(a);
    let r1 = record.r1.value();
    let x = extract_features(record, Some(q), behavior.stats());
    let jac = advice_feature_jacobian(r1, q);

    let (p, gp) = behavior.activation_grad(&x);
    let (d, gd) = behavior.integration_grad(&x);
    let d = d.clamp(INTEGRATION_RANGE.0, INTEGRATION_RANGE.1);
    let unclamped = r1 + sign_nonzero(r1) * d;
    let r2 = unclamped.clamp(-1.0, 1.0);
    let dr2_dd = if unclamped > -1.0 && unclamped < 1.0 { sign_nonzero(r1) } else { 0.0 };

    let l1 = signed_log_loss(r1);
    let l2 = signed_log_loss(r2);
    let loss = (1.0 - p) * l1 + p * l2;

    let dp_dq: f64 = gp.iter().zip(&jac).map(|(g, j)| g * j).sum();
    let dd_dq: f64 = gd.iter().zip(&jac).map(|(g, j)| g * j).sum();
    let dloss_dq = (l2 - l1) * dp_dq + p * signed_log_loss_grad(r2) * dr2_dd * dd_dq;
    (loss, [dloss_dq * dq_da, dloss_dq * dq_db])
}

/// Mean objective and its analytic gradient in `(alpha, beta)` over `records`.
pub fn objective_and_grad<B: HumanBehavior + ?Sized>(
    behavior: &B,
    alpha: f64,
    beta: f64,
    records: &[InteractionRecord],
) -> Result<(f64, [f64; 2])> {
    if records.is_empty() {
        return Err(Error::Empty("records for the objective"));
    }
    let mut loss = 0.0;
    let mut grad = [0.0; 2];
    for r in records {
        let (l, g) = record_loss_and_grad(behavior, alpha, beta, r);
        loss += l;
        grad[0] += g[0];
        grad[1] += g[1];
    }
    let n = records.len() as f64;
    Ok((loss / n, [grad[0] / n, grad[1] / n]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Full batch when `None`.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub init_alpha: f64,
    pub init_beta: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { learning_rate: 0.05, epochs: 500, batch_size: None, seed: 0, init_alpha: 1.0, init_beta: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub epoch: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Full-dataset objective at this point.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRun {
    pub config: OptimizerConfig,
    pub trajectory: Vec<TrajectoryPoint>,
    pub best: TrajectoryPoint,
}

impl OptimizerRun {
    pub fn best_params(&self) -> TransformParams {
        TransformParams::SigmoidLike { alpha: self.best.alpha, beta: self.best.beta }
    }
}

/// Projected gradient descent on `(alpha, beta)`, clipping both at zero after
/// every step. The point with the lowest full-dataset objective along the
/// trajectory (which includes the initial point) is returned.
pub fn optimize<B: HumanBehavior + ?Sized>(
    behavior: &B,
    records: &[InteractionRecord],
    config: &OptimizerConfig,
) -> Result<OptimizerRun> {
    if records.is_empty() {
        return Err(Error::Empty("records to optimise over"));
    }
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::OutOfRange { what: "optimizer learning rate", value: config.learning_rate });
    }
    TransformParams::sigmoid_like(config.init_alpha, config.init_beta)?;
    let (mut alpha, mut beta) = (config.init_alpha, config.init_beta);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut trajectory = Vec::with_capacity(config.epochs + 1);
    let diverged = |step: usize, trajectory: &[TrajectoryPoint]| Error::OptimizerDiverged {
        step,
        trajectory: trajectory.iter().map(|p| (p.alpha, p.beta, p.objective)).collect(),
    };

    for epoch in 0..=config.epochs {
        let (obj, full_grad) = objective_and_grad(behavior, alpha, beta, records)?;
        if !obj.is_finite() {
            return Err(diverged(epoch, &trajectory));
        }
        trajectory.push(TrajectoryPoint { epoch, alpha, beta, objective: obj });
        if epoch == config.epochs {
            break;
        }
        match config.batch_size {
            None => {
                alpha = (alpha - config.learning_rate * full_grad[0]).max(0.0);
                beta = (beta - config.learning_rate * full_grad[1]).max(0.0);
            }
            Some(size) => {
                order.shuffle(&mut rng);
                for batch in order.chunks(size.max(1)) {
                    let subset: Vec<InteractionRecord> = batch.iter().map(|&i| records[i].clone()).collect();
                    let (_, g) = objective_and_grad(behavior, alpha, beta, &subset)?;
                    alpha = (alpha - config.learning_rate * g[0]).max(0.0);
                    beta = (beta - config.learning_rate * g[1]).max(0.0);
                }
            }
        }
        if !(alpha.is_finite() && beta.is_finite()) {
            return Err(diverged(epoch, &trajectory));
        }
    }
    let best = *trajectory
        .iter()
        .min_by(|a, b| a.objective.total_cmp(&b.objective))
        .expect("trajectory holds the initial point");
    Ok(OptimizerRun { config: config.clone(), trajectory, best })
}

/// Presented probability on a grid of raw advice probabilities.
pub fn transform_curve(params: &TransformParams, grid: &[f64]) -> Vec<(f64, f64)> {
    grid.iter()
        .map(|&u| (u, params.apply(crate::data::AdviceLogit(logit(crate::math::clamp_prob(u))))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub target_accuracy: Option<f64>,
    pub achieved_accuracy: f64,
    pub run: OptimizerRun,
    pub report: SimulationReport,
}

/// Refits the transform on copies of `records` whose advice accuracy was
/// shifted to each target, keeping the behaviour model fixed. The first entry
/// is the unshifted dataset.
pub fn fit_sensitivity<B: HumanBehavior + ?Sized>(
    behavior: &B,
    records: &[InteractionRecord],
    targets: &[f64],
    config: &OptimizerConfig,
    shift_seed: u64,
) -> Result<Vec<SensitivityResult>> {
    let mut datasets: Vec<(Option<f64>, Vec<InteractionRecord>)> = alloc::vec![(None, records.to_vec())];
    for &t in targets {
        datasets.push((Some(t), synth_shift_accuracy(records, t, shift_seed)?));
    }
    datasets
        .into_iter()
        .map(|(target, data)| {
            let run = optimize(behavior, &data, config)?;
            let report = compare(behavior, &TransformParams::BASELINE, &run.best_params(), &data)?;
            Ok(SensitivityResult { target_accuracy: target, achieved_accuracy: advice_accuracy(&data), run, report })
        })
        .collect()
}
