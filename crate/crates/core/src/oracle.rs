//! Optimal presented advice for analytically specified humans.
//!
//! All quantities here are probabilities of label 1 on `[0, 1]`. The human
//! either keeps their initial response or adopts the presented advice
//! exactly, and the advice itself is calibrated (`p_a = a`).

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::behavior::Heatmap;
use crate::math::{bar, clamp_prob, cross_entropy};
use crate::{Error, Result};

pub const LINE_SEARCH_STEP: f64 = 5e-3;

/// Pointwise map `[0, 1] -> [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMap {
    Identity,
    Square,
}

impl CalibrationMap {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Identity => x,
            Self::Square => x * x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationRule {
    /// Activated iff `bar(r1) + epsilon < bar(a)`.
    Threshold { epsilon: f64 },
    AlwaysOn,
}

impl ActivationRule {
    pub fn activated(self, presented: f64, r1: f64) -> bool {
        match self {
            Self::Threshold { epsilon } => bar(r1) + epsilon < bar(presented),
            Self::AlwaysOn => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSetting {
    /// `P(label 1)` given the initial response `r1`.
    pub human_calibration: CalibrationMap,
    pub activation: ActivationRule,
    /// Applied to raw advice before the search.
    #[serde(default = "identity")]
    pub advice_calibration: CalibrationMap,
    #[serde(default = "default_step")]
    pub step: f64,
}

fn identity() -> CalibrationMap {
    CalibrationMap::Identity
}

fn default_step() -> f64 {
    LINE_SEARCH_STEP
}

impl OracleSetting {
    pub fn new(human_calibration: CalibrationMap, activation: ActivationRule) -> Self {
        Self { human_calibration, activation, advice_calibration: CalibrationMap::Identity, step: LINE_SEARCH_STEP }
    }

    /// Calibrated human, threshold rule with `epsilon`.
    pub fn biased(epsilon: f64) -> Self {
        Self::new(CalibrationMap::Identity, ActivationRule::Threshold { epsilon })
    }

    /// `f(r1) = r1^2` with `epsilon = 0`.
    pub fn miscalibrated() -> Self {
        Self::new(CalibrationMap::Square, ActivationRule::Threshold { epsilon: 0.0 })
    }

    /// `f(r1) = r1^2` with `epsilon = 0.1`.
    pub fn combined() -> Self {
        Self::new(CalibrationMap::Square, ActivationRule::Threshold { epsilon: 0.1 })
    }

    pub fn validate(&self) -> Result<()> {
        if let ActivationRule::Threshold { epsilon } = self.activation {
            if !(-0.5..=0.5).contains(&epsilon) {
                return Err(Error::OutOfRange { what: "activation epsilon", value: epsilon });
            }
        }
        if !(self.step > 0.0 && self.step < 0.5) {
            return Err(Error::OutOfRange { what: "line search step", value: self.step });
        }
        Ok(())
    }
}

/// Expected log-loss of the final response when `presented` is shown, the
/// advice is correct with probability `a_true` and the initial response is
/// `r1`.
pub fn expected_loss(presented: f64, a_true: f64, r1: f64, setting: &OracleSetting) -> f64 {
    let presented = clamp_prob(presented);
    let a_true = clamp_prob(a_true);
    let r1 = clamp_prob(r1);
    let l_r1 = cross_entropy(setting.human_calibration.apply(r1), r1);
    if setting.activation.activated(presented, r1) {
        cross_entropy(a_true, presented)
    } else {
        l_r1
    }
}

fn side(x: f64) -> i8 {
    if x > 0.5 {
        1
    } else if x < 0.5 {
        -1
    } else {
        0
    }
}

/// First point from `a` in direction `dir` whose activation state differs from
/// that of `a`, staying on the label side `label`.
fn first_flip(a: f64, r1: f64, dir: f64, label: i8, setting: &OracleSetting) -> Option<f64> {
    let start = setting.activation.activated(a, r1);
    let mut k = 1u32;
    loop {
        let x = a + dir * setting.step * k as f64;
        if !(x > 0.0 && x < 1.0) || (label != 0 && side(x) != label) || (label == 0 && side(x) == 0) {
            return None;
        }
        if setting.activation.activated(x, r1) != start {
            return Some(x);
        }
        k += 1;
    }
}

/// Presented advice minimising [`expected_loss`] for raw advice `a` and
/// initial response `r1`. The candidates are `a` and the nearest grid point
/// in each direction where activation switches; `a` wins ties.
pub fn optimal_advice(a: f64, r1: f64, setting: &OracleSetting) -> f64 {
    let a = clamp_prob(setting.advice_calibration.apply(a));
    let label = side(a);
    let mut best = a;
    let mut best_loss = expected_loss(a, a, r1, setting);
    for dir in [1.0, -1.0] {
        if let Some(x) = first_flip(a, r1, dir, label, setting) {
            let l = expected_loss(x, a, r1, setting);
            if l < best_loss {
                best = x;
                best_loss = l;
            }
        }
    }
    best
}

/// Points `k / (n + 1)` for `k = 1..=n`.
pub fn open_unit_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|k| k as f64 / (n + 1) as f64).collect()
}

/// `optimal_advice(a, r1) - a` with rows along `r1` and columns along `a`.
pub fn delta_heatmap(setting: &OracleSetting, a_grid: &[f64], r1_grid: &[f64]) -> Result<Heatmap> {
    setting.validate()?;
    for &v in a_grid.iter().chain(r1_grid) {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::OutOfRange { what: "oracle grid point", value: v });
        }
    }
    let values = r1_grid
        .iter()
        .map(|&r1| a_grid.iter().map(|&a| optimal_advice(a, r1, setting) - setting.advice_calibration.apply(a)).collect())
        .collect();
    Ok(Heatmap {
        x_label: String::from("advice"),
        y_label: String::from("r1"),
        x: a_grid.to_vec(),
        y: r1_grid.to_vec(),
        values,
    })
}
