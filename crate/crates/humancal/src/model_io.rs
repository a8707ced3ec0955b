//! Versioned JSON files for networks and behaviour bundles.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use humancal_core::behavior::{BehaviorModel, FitReport};
use humancal_core::data::{FeatureStats, SplitFractions};
use humancal_core::neural::{Dense, Head, Mlp, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::artifact::{sha256_file, write_json};

pub const MODEL_FORMAT: &str = "humancal-mlp";
pub const BUNDLE_FORMAT: &str = "humancal-behavior-bundle";
pub const FORMAT_VERSION: u32 = 1;

pub const ACTIVATION_FILE: &str = "activation.json";
pub const INTEGRATION_FILE: &str = "integration.json";
pub const BUNDLE_MANIFEST: &str = "manifest.json";

/// One network on disk. Weights are row-major `inputs x outputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub head: Head,
    pub layers: Vec<Dense>,
    pub stats: FeatureStats,
    pub seed: u64,
    pub train_config: TrainConfig,
}

impl ModelFile {
    pub fn new(net: &Mlp, stats: &FeatureStats, seed: u64, train_config: &TrainConfig) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: FORMAT_VERSION,
            head: net.head,
            layers: net.layers.clone(),
            stats: stats.clone(),
            seed,
            train_config: train_config.clone(),
        }
    }

    pub fn into_mlp(self) -> Result<Mlp> {
        if self.format != MODEL_FORMAT {
            bail!("not a model file (format {:?})", self.format);
        }
        if self.version != FORMAT_VERSION {
            bail!("unsupported model file version {}", self.version);
        }
        let net = Mlp { layers: self.layers, head: self.head };
        net.validate()?;
        Ok(net)
    }
}

pub fn save_model(path: &Path, file: &ModelFile) -> Result<()> {
    write_json(path, file)
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitMetrics {
    pub train_records: usize,
    pub val_records: usize,
    pub test_records: usize,
    pub activated_train_records: usize,
    pub activation_auc: Option<f64>,
    pub integration_rmse: Option<f64>,
    pub integration_r2: Option<f64>,
    pub activation_best_epoch: usize,
    pub integration_best_epoch: usize,
}

impl From<&FitReport> for FitMetrics {
    fn from(r: &FitReport) -> Self {
        Self {
            train_records: r.train_records,
            val_records: r.val_records,
            test_records: r.test_records,
            activated_train_records: r.activated_train_records,
            activation_auc: r.activation_auc,
            integration_rmse: r.integration_rmse,
            integration_r2: r.integration_r2,
            activation_best_epoch: r.activation_history.best_epoch,
            integration_best_epoch: r.integration_history.best_epoch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub format: String,
    pub version: u32,
    pub delta: f64,
    pub split_seed: u64,
    pub split_fractions: SplitFractions,
    pub dataset_sha256: String,
    pub activation_sha256: String,
    pub integration_sha256: String,
    pub metrics: FitMetrics,
}

impl BundleManifest {
    /// Identifier of the model pair, independent of where it is stored.
    pub fn bundle_id(&self) -> String {
        crate::artifact::sha256_bytes(format!("{}:{}", self.activation_sha256, self.integration_sha256).as_bytes())
    }
}

/// Inputs and fit results written alongside a bundle.
pub struct BundleInfo<'a> {
    pub split_seed: u64,
    pub split_fractions: SplitFractions,
    pub dataset_sha256: String,
    pub init_seed: u64,
    pub train: &'a TrainConfig,
    pub report: &'a FitReport,
}

pub fn save_bundle(dir: &Path, model: &BehaviorModel, info: &BundleInfo<'_>) -> Result<BundleManifest> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let act = dir.join(ACTIVATION_FILE);
    let int = dir.join(INTEGRATION_FILE);
    save_model(&act, &ModelFile::new(&model.activation, &model.stats, info.init_seed, info.train))?;
    save_model(&int, &ModelFile::new(&model.integration, &model.stats, info.init_seed.wrapping_add(1), info.train))?;
    let manifest = BundleManifest {
        format: BUNDLE_FORMAT.into(),
        version: FORMAT_VERSION,
        delta: model.delta,
        split_seed: info.split_seed,
        split_fractions: info.split_fractions,
        dataset_sha256: info.dataset_sha256.clone(),
        activation_sha256: sha256_file(&act)?,
        integration_sha256: sha256_file(&int)?,
        metrics: FitMetrics::from(info.report),
    };
    write_json(&dir.join(BUNDLE_MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Loads a bundle, checking both model files against the manifest hashes.
pub fn load_bundle(dir: &Path) -> Result<(BehaviorModel, BundleManifest)> {
    let mpath = dir.join(BUNDLE_MANIFEST);
    if !mpath.exists() {
        bail!("no behaviour bundle at {}; run `humancal fit-behavior` first", dir.display());
    }
    let manifest: BundleManifest = serde_json::from_str(&fs::read_to_string(&mpath)?)
        .with_context(|| format!("parsing {}", mpath.display()))?;
    if manifest.format != BUNDLE_FORMAT || manifest.version != FORMAT_VERSION {
        bail!("unsupported bundle {} v{}", manifest.format, manifest.version);
    }
    let act = dir.join(ACTIVATION_FILE);
    let int = dir.join(INTEGRATION_FILE);
    for (path, want) in [(&act, &manifest.activation_sha256), (&int, &manifest.integration_sha256)] {
        let got = sha256_file(path)?;
        if &got != want {
            bail!("{} does not match its manifest hash (stale or edited bundle)", path.display());
        }
    }
    let a = load_model(&act)?;
    let stats = a.stats.clone();
    let i = load_model(&int)?;
    if i.stats != stats {
        bail!("bundle networks disagree on feature statistics");
    }
    let model = BehaviorModel { activation: a.into_mlp()?, integration: i.into_mlp()?, delta: manifest.delta, stats };
    model.validate()?;
    Ok((model, manifest))
}
