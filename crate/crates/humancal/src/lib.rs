//! File formats, the pipeline driver, the experiment service and the command
//! line around `humancal-core`.

pub mod artifact;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod model_io;
pub mod pipeline;
pub mod service;
