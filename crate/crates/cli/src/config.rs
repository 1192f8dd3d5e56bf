//! The JSON run document behind `ddsl train`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ddsl::data::io::read_dataset;
use ddsl::data::{split_stratified, AugmentSpec, Sample};
use ddsl::engine::TrainConfig;
use ddsl::network::{ModelRegistry, MrnConfig};
use ddsl::objectives::DualLossSpec;
use ddsl::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory as written by `ddsl synth`.
    pub dir: PathBuf,
    /// Share of samples in the training split; the rest is the test split.
    pub train_frac: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: PathBuf::from("data"),
            train_frac: 0.7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Registered model names to train, each into `out_dir/<name>`.
    pub models: Vec<String>,
    pub network: MrnConfig,
    pub loss: DualLossSpec,
    pub augment: AugmentSpec,
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Root of every random stream in the run.
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            models: vec!["ddsl".into()],
            network: MrnConfig::default(),
            loss: DualLossSpec::default(),
            augment: AugmentSpec::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).context("invalid run config")?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self, registry: &ModelRegistry<f32>) -> Result<()> {
        if self.models.is_empty() {
            bail!("models must name at least one model");
        }
        for m in &self.models {
            registry.get(m)?;
        }
        self.network.validate()?;
        self.network.check_side(self.network.side)?;
        self.loss.validate()?;
        self.train.validate()?;
        if !(self.data.train_frac > 0.0 && self.data.train_frac <= 1.0) {
            bail!("data.train_frac must be in (0, 1], got {}", self.data.train_frac);
        }
        Ok(())
    }

    /// Load the dataset at the network side and split it into `(train, test)`.
    pub fn load_split(&self, dir: &Path) -> Result<(Vec<Sample>, Vec<Sample>)> {
        let samples = read_dataset(dir, self.network.side).with_context(|| format!("loading {}", dir.display()))?;
        split(&samples, self.data.train_frac, self.seed)
    }
}

/// Stratified `(train, test)` split used by both training and evaluation.
pub fn split(samples: &[Sample], train_frac: f64, root_seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    Ok(split_stratified(
        samples,
        |s| s.meta,
        train_frac,
        seed::derive(root_seed, "split", &[]),
    )?)
}
