//! Argument parsing and dispatch for the `humancal` binary.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::pipeline::{self, Stage};
use crate::service;

#[derive(Debug, Parser)]
#[command(name = "humancal", version, about = "Fit human advice-use models and calibrate AI advice for them")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Replaces every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config and HUMANCAL_OUT.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Read the configured dataset and write the canonical table.
    Ingest,
    /// Fit the activation and integration networks.
    FitBehavior,
    /// Fit the advice transform through the behaviour model.
    Optimize,
    /// Compare the fitted and step transforms against the baseline.
    Simulate,
    /// Refit the transform at shifted advice accuracies.
    Sensitivity,
    /// Optimal-advice heatmaps for analytic humans.
    Oracle,
    /// Calibration and performance metrics of the dataset.
    Metrics,
    /// Run the experiment service.
    Serve,
    /// Write plot-data tables.
    ExportFigures,
}

impl Command {
    fn stage(self) -> Option<Stage> {
        Some(match self {
            Self::Ingest => Stage::Ingest,
            Self::FitBehavior => Stage::FitBehavior,
            Self::Optimize => Stage::Optimize,
            Self::Simulate => Stage::Simulate,
            Self::Sensitivity => Stage::Sensitivity,
            Self::Oracle => Stage::Oracle,
            Self::Metrics => Stage::Metrics,
            Self::ExportFigures => Stage::ExportFigures,
            Self::Serve => return None,
        })
    }
}

/// Loads the config and applies environment and flag overrides, in that
/// order.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env();
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    match cli.command.stage() {
        Some(stage) => {
            let manifest = pipeline::run(stage, &cfg).with_context(|| format!("`{}` failed", stage.name()))?;
            for a in &manifest.outputs {
                println!("{}  {}", a.sha256, a.path);
            }
            Ok(())
        }
        None => {
            let mut svc = cfg.service.clone();
            service::apply_env(&mut svc)?;
            let extra = if svc.fitted_arm {
                vec![pipeline::fitted_transform(&cfg.out_dir, None, None)?.0]
            } else {
                Vec::new()
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve(&svc, &extra))
        }
    }
}
