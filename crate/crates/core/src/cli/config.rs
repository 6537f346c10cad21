//! Run configuration file and the manifest written at the start of every run.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ColumnMap, PatchConfig, Preprocess, SyntheticFleetConfig, DEFAULT_TEST_CELLS};
use crate::error::{Error, Result};
use crate::eval::{AblationCase, EvalConfig};
use crate::finetune::FinetuneConfig;
use crate::nn::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Cells with the last ids (sorted) are held out.
    pub n_test_cells: usize,
    /// Default Isomap neighbourhood size.
    pub k_neighbors: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { n_test_cells: DEFAULT_TEST_CELLS, k_neighbors: 7 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Empty means the four single-switch variants.
    pub grid: Vec<AblationCase>,
}

/// Every section is optional; missing fields take their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub fleet: SyntheticFleetConfig,
    pub columns: ColumnMap,
    pub model: ModelConfig,
    pub patch: PatchConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub finetune: FinetuneConfig,
    pub split: SplitConfig,
    pub ablation: AblationConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub window: Option<usize>,
    pub draws: Option<usize>,
    pub modes: Option<usize>,
    pub gamma: Option<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => Self::from_toml(&fs::read_to_string(p)?),
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.fleet.seed = seed;
            self.train.seed = seed;
            self.eval.seed = seed;
            self.finetune.seed = seed;
        }
        if let Some(w) = o.window {
            self.model.window_len = w;
            self.patch.window_len = w;
        }
        if let Some(d) = o.draws {
            self.eval.n_draws = d;
            self.finetune.n_draws = d;
        }
        if o.modes.is_some() || o.gamma.is_some() {
            let (n0, g0) = match self.patch.preprocess {
                Preprocess::Detrend { n_modes, gamma } => (n_modes, gamma),
                Preprocess::None => (crate::ewt::DEFAULT_DETREND_MODES, crate::ewt::DEFAULT_GAMMA),
            };
            self.patch.preprocess =
                Preprocess::Detrend { n_modes: o.modes.unwrap_or(n0), gamma: o.gamma.unwrap_or(g0) };
        }
    }

    /// Checks the sections used by the model pipelines.
    pub fn validate_pipeline(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.finetune.validate()?;
        if self.model.window_len != self.patch.window_len {
            return Err(Error::Config(format!(
                "model.window_len {} differs from patch.window_len {}",
                self.model.window_len, self.patch.window_len
            )));
        }
        if self.eval.n_draws == 0 || self.eval.stride == 0 {
            return Err(Error::Config("eval.n_draws and eval.stride must be at least 1".into()));
        }
        if let Preprocess::Detrend { n_modes, gamma } = self.patch.preprocess {
            if n_modes == 0 || !(gamma > 0.0 && gamma < 1.0) {
                return Err(Error::Config(format!("invalid detrend settings: n_modes {n_modes}, gamma {gamma}")));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Record of one invocation, written before any long computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub output_dir: String,
    pub config: RunConfig,
}

pub const MANIFEST_FILE: &str = "manifest.toml";

impl RunManifest {
    pub fn new(subcommand: &str, seed: u64, inputs: &[&Path], out: &Path, config: &RunConfig) -> Self {
        Self {
            subcommand: subcommand.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            output_dir: out.display().to_string(),
            config: config.clone(),
        }
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(out.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}
