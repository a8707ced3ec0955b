//! Advice-presentation transforms.
//!
//! A transform maps the advice logit `A` to the probability shown to the
//! person. The sigmoid-like family is `sigma(sign(A) * (alpha |A| + beta))`
//! with `alpha, beta >= 0`; `(1, 0)` is the plain sigmoid. Step transforms
//! show a fixed confidence `lambda` for the recommended label.

use serde::{Deserialize, Serialize};

use crate::data::AdviceLogit;
use crate::math::{sigmoid, sign};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformParams {
    SigmoidLike { alpha: f64, beta: f64 },
    Step { lambda: f64 },
}

impl Default for TransformParams {
    fn default() -> Self {
        Self::BASELINE
    }
}

impl TransformParams {
    /// The unmodified advice, `g_{1,0} = sigma`.
    pub const BASELINE: Self = Self::SigmoidLike { alpha: 1.0, beta: 0.0 };

    pub fn sigmoid_like(alpha: f64, beta: f64) -> Result<Self> {
        let t = Self::SigmoidLike { alpha, beta };
        t.validate()?;
        Ok(t)
    }

    pub fn step(lambda: f64) -> Result<Self> {
        let t = Self::Step { lambda };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::SigmoidLike { alpha, beta } => {
                if !(alpha.is_finite() && alpha >= 0.0) {
                    return Err(Error::OutOfRange { what: "alpha", value: alpha });
                }
                if !(beta.is_finite() && beta >= 0.0) {
                    return Err(Error::OutOfRange { what: "beta", value: beta });
                }
            }
            Self::Step { lambda } => {
                if !(lambda > 0.0 && lambda <= 1.0) {
                    return Err(Error::OutOfRange { what: "lambda", value: lambda });
                }
            }
        }
        Ok(())
    }

    /// Presented probability toward the correct label.
    pub fn apply(&self, a: AdviceLogit) -> f64 {
        let a = a.0;
        match *self {
            Self::SigmoidLike { alpha, beta } => sigmoid(sign(a) * (alpha * libm::fabs(a) + beta)),
            // The step transform recommends the correct label on ties.
            Self::Step { lambda } => {
                if a >= 0.0 {
                    0.5 * (1.0 + lambda)
                } else {
                    0.5 * (1.0 - lambda)
                }
            }
        }
    }

    /// Presented value on the signed `[-1, 1]` scale.
    pub fn apply_signed(&self, a: AdviceLogit) -> f64 {
        match *self {
            Self::Step { lambda } => {
                if a.0 >= 0.0 {
                    lambda
                } else {
                    -lambda
                }
            }
            Self::SigmoidLike { .. } => 2.0 * self.apply(a) - 1.0,
        }
    }

    /// `(d/d alpha, d/d beta)` of [`apply`](Self::apply). Step transforms have
    /// no continuous parameters and return zeros, as does `A = 0`.
    pub fn grad(&self, a: AdviceLogit) -> (f64, f64) {
        let a = a.0;
        match *self {
            Self::SigmoidLike { alpha, beta } if a != 0.0 => {
                let s = sign(a);
                let z = s * (alpha * libm::fabs(a) + beta);
                let p = sigmoid(z);
                let slope = p * (1.0 - p);
                (slope * s * libm::fabs(a), slope * s)
            }
            _ => (0.0, 0.0),
        }
    }

    pub fn is_baseline(&self) -> bool {
        *self == Self::BASELINE
    }
}

impl core::fmt::Display for TransformParams {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::SigmoidLike { alpha, beta } => write!(f, "sigmoid_like(alpha={alpha}, beta={beta})"),
            Self::Step { lambda } => write!(f, "step(lambda={lambda})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_is_sigmoid_bitwise() {
        for &a in &[-7.3, -0.001, 0.0, 0.5, 2.0, 31.0] {
            assert_eq!(TransformParams::BASELINE.apply(AdviceLogit(a)), sigmoid(a));
        }
    }

    #[test]
    fn zero_logit_maps_to_half() {
        let t = TransformParams::sigmoid_like(3.0, 2.0).unwrap();
        assert_eq!(t.apply(AdviceLogit(0.0)), 0.5);
    }

    #[test]
    fn unit_beta_floor() {
        let t = TransformParams::sigmoid_like(0.4, 1.0).unwrap();
        let floor = core::f64::consts::E / (1.0 + core::f64::consts::E);
        assert!(t.apply(AdviceLogit(1e-9)) > floor - 1e-9);
        assert!(t.apply(AdviceLogit(1e-3)) > floor);
        assert!(1.0 - t.apply(AdviceLogit(-1e-3)) > floor);
        assert!(floor > 0.73);
    }

    #[test]
    fn step_examples() {
        let t = TransformParams::step(0.95).unwrap();
        assert_eq!(t.apply_signed(AdviceLogit(0.0)), 0.95);
        assert_eq!(t.apply(AdviceLogit(0.0)), 0.975);
        assert_eq!(t.apply(AdviceLogit(-3.0)), 0.5 * (1.0 - 0.95));
        assert_eq!(t.apply(AdviceLogit(0.1)), t.apply(AdviceLogit(9.0)));
    }

    #[test]
    fn gradient_closed_form() {
        let t = TransformParams::BASELINE;
        assert_eq!(t.grad(AdviceLogit(0.0)), (0.0, 0.0));
        let t = TransformParams::sigmoid_like(1.3, 0.4).unwrap();
        let a = 0.8;
        let (_, db) = t.grad(AdviceLogit(a));
        let z = 1.3 * a + 0.4;
        assert_eq!(db, sigmoid(z) * (1.0 - sigmoid(z)));
        assert!(db > 0.0);
    }

    #[test]
    fn validation() {
        assert!(TransformParams::sigmoid_like(-0.1, 0.0).is_err());
        assert!(TransformParams::sigmoid_like(1.0, f64::NAN).is_err());
        assert!(TransformParams::step(0.0).is_err());
        assert!(TransformParams::step(1.2).is_err());
        assert!(TransformParams::step(1.0).is_ok());
    }
}
