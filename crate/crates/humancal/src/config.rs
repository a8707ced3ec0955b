//! The run configuration file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use humancal_core::behavior::BehaviorConfig;
use humancal_core::data::SplitFractions;
use humancal_core::optimizer::OptimizerConfig;
use humancal_core::oracle::OracleSetting;
use humancal_core::protocol::BonusConfig;
use humancal_core::synth::SynthConfig;
use humancal_core::transform::TransformParams;
use serde::{Deserialize, Serialize};

use crate::dataset::Schema;

pub const ENV_OUT: &str = "HUMANCAL_OUT";
pub const ENV_PORT: &str = "HUMANCAL_PORT";
pub const ENV_DATA_DIR: &str = "HUMANCAL_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, replaces every module seed.
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    pub behavior: BehaviorConfig,
    pub optimizer: OptimizerConfig,
    pub simulate: SimulateConfig,
    pub sensitivity: SensitivityConfig,
    pub oracle: OracleConfig,
    pub metrics: MetricsConfig,
    pub figures: FiguresConfig,
    pub service: ServiceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out_dir: PathBuf::from("out"),
            dataset: DatasetConfig::default(),
            split: SplitConfig::default(),
            behavior: BehaviorConfig::default(),
            optimizer: OptimizerConfig::default(),
            simulate: SimulateConfig::default(),
            sensitivity: SensitivityConfig::default(),
            oracle: OracleConfig::default(),
            metrics: MetricsConfig::default(),
            figures: FiguresConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

/// Exactly one of `path` and `synthetic` must be given.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    pub schema: Schema,
    /// Keep only records of this task.
    pub task: Option<String>,
    pub synthetic: Option<SynthConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let f = SplitFractions::default();
        Self { train: f.train, val: f.val, seed: 0 }
    }
}

impl SplitConfig {
    pub fn fractions(&self) -> SplitFractions {
        SplitFractions { train: self.train, val: self.val }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Step transforms reported next to the fitted one.
    pub step_lambdas: Vec<f64>,
    /// Also run sample mode with this many draws per record.
    pub sample_draws: Option<u64>,
    pub sample_seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { step_lambdas: vec![0.5, 0.95], sample_draws: None, sample_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityConfig {
    pub targets: Vec<f64>,
    pub shift_seed: u64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self { targets: vec![0.75, 0.79, 0.85], shift_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Points per axis of the open unit grid.
    pub grid: usize,
    pub settings: BTreeMap<String, OracleSetting>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            grid: 101,
            settings: BTreeMap::from([
                ("biased".to_string(), OracleSetting::biased(0.1)),
                ("miscalibrated".to_string(), OracleSetting::miscalibrated()),
                ("combined".to_string(), OracleSetting::combined()),
            ]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub ece_bins: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { ece_bins: humancal_core::metrics::DEFAULT_ECE_BINS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiguresConfig {
    /// Points per axis for the dependence plot and heatmap.
    pub grid_points: usize,
    /// Points on the transform curves.
    pub curve_points: usize,
    pub density_bins: usize,
}

impl Default for FiguresConfig {
    fn default() -> Self {
        Self { grid_points: 41, curve_points: 201, density_bins: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub id: String,
    /// Question table with `question`, `advice_prob`, `label`, `content`.
    pub questions: PathBuf,
    pub manipulation_answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    pub static_dir: PathBuf,
    pub assignment_seed: u64,
    pub arms: Vec<TransformParams>,
    /// Append the best transform of the last `optimize` run to `arms`.
    pub fitted_arm: bool,
    pub bonus: BonusConfig,
    pub tasks: Vec<TaskConfig>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            static_dir: PathBuf::from("static"),
            assignment_seed: 0,
            arms: vec![TransformParams::BASELINE],
            fitted_arm: false,
            bonus: BonusConfig::default(),
            tasks: Vec::new(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text)?;
        if let Some(s) = cfg.seed {
            cfg.apply_seed(s);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in config {}", path.display()))?;
        let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.out_dir);
        if let Some(p) = self.dataset.path.as_mut() {
            resolve(base, p);
        }
        resolve(base, &mut self.service.data_dir);
        resolve(base, &mut self.service.static_dir);
        for t in &mut self.service.tasks {
            resolve(base, &mut t.questions);
        }
    }

    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.split.seed = seed;
        self.behavior.init_seed = seed;
        self.behavior.train.seed = seed;
        self.optimizer.seed = seed;
        self.simulate.sample_seed = seed;
        self.sensitivity.shift_seed = seed;
        self.service.assignment_seed = seed;
        if let Some(s) = self.dataset.synthetic.as_mut() {
            s.seed = seed;
        }
    }

    /// Applies the output-directory environment override.
    pub fn apply_env(&mut self) {
        if let Some(out) = std::env::var_os(ENV_OUT) {
            self.out_dir = PathBuf::from(out);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.path.is_some() && self.dataset.synthetic.is_some() {
            bail!("dataset: give either `path` or `[dataset.synthetic]`, not both");
        }
        if !(self.split.train > 0.0 && self.split.val >= 0.0 && self.split.train + self.split.val < 1.0) {
            bail!("split: need train > 0, val >= 0 and train + val < 1");
        }
        self.behavior.train.validate()?;
        for (name, s) in &self.oracle.settings {
            s.validate().with_context(|| format!("oracle setting {name}"))?;
        }
        if self.oracle.grid == 0 || self.figures.grid_points < 2 || self.figures.curve_points < 2 {
            bail!("grid sizes must be positive");
        }
        for &l in &self.simulate.step_lambdas {
            TransformParams::step(l)?;
        }
        for a in &self.service.arms {
            a.validate()?;
        }
        Ok(())
    }
}
