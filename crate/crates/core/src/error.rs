use alloc::string::String;

/// Errors produced by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("value out of range: {what} = {value}")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss/head mismatch: {0}")]
    LossHead(&'static str),
    #[error("training diverged at epoch {epoch}: loss is NaN")]
    Diverged { epoch: usize },
    /// Carries the `(alpha, beta, objective)` trajectory up to the failure.
    #[error("optimisation diverged at step {step}")]
    OptimizerDiverged { step: usize, trajectory: alloc::vec::Vec<(f64, f64, f64)> },
    #[error("target advice accuracy {target} unreachable, achieved {achieved}")]
    Unreachable { target: f64, achieved: f64 },
    #[error("no activated records to fit the integration model")]
    NoActivated,
    #[error("protocol violation: {0}")]
    Protocol(String),
}

pub type Result<T> = core::result::Result<T, Error>;
