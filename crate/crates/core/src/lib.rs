//! Core algorithms for calibrating AI advice for human use.
//!
//! The crate models a two-stage human-AI interaction: a person answers a
//! binary question on a continuous `[-1, 1]` scale, sees AI advice, and may
//! revise. From logged interactions we fit an activation model (does the
//! person revise at all?) and an integration model (by how much?), then
//! search for a monotone, label-preserving transform of the AI confidence
//! that minimises the expected loss of the person's final answer.
//!
//! Everything here is `no_std` + `alloc`. File formats, the HTTP service and
//! the command line live in the `humancal` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod behavior;
pub mod data;
pub mod math;
pub mod metrics;
pub mod neural;
pub mod optimizer;
pub mod oracle;
pub mod protocol;
pub mod simulator;
pub mod synth;
pub mod transform;

mod error;

#[cfg(test)]
pub(crate) mod test_util;

pub use error::{Error, Result};
