//! TOML run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::KCoreMode;
use crate::error::{Error, Result};
use crate::llm::LlmSettings;
use crate::synthesis::OverlapMetric;
use crate::train_eval::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DataConfig {
    /// Raw interaction file (line-delimited JSON or CSV with a header).
    pub input: String,
    pub k_core: usize,
    pub k_core_mode: KCoreMode,
    /// Sequences are truncated to their most recent `max_len` items.
    pub max_len: usize,
    pub train_ratio: f64,
    pub valid_ratio: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            input: "events.jsonl".into(),
            k_core: 5,
            k_core_mode: KCoreMode::Alternating,
            max_len: 20,
            train_ratio: 0.6,
            valid_ratio: 0.2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SynthesisConfig {
    /// Users per clique, anchor included.
    pub clique_size: usize,
    /// Synthesized users to select; 0 means 5% of the user count.
    pub budget: usize,
    pub overlap: OverlapMetric,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            clique_size: 5,
            budget: 0,
            overlap: OverlapMetric::Intersection,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(default)]
pub struct PipelineConfig {
    /// All stage outputs land here.
    pub out_dir: String,
    /// Master seed; also overrides `train.seed`.
    pub seed: Option<u64>,
    pub data: DataConfig,
    pub llm: LlmSettings,
    pub synthesis: SynthesisConfig,
    pub train: TrainConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(seed) = cfg.seed {
            cfg.train.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| {
            Error::MissingInput(format!("config file {}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if self.out_dir.is_empty() {
            return bad("out_dir must be set");
        }
        if self.data.k_core == 0 {
            return bad("data.k_core must be >= 1");
        }
        if self.data.max_len == 0 {
            return bad("data.max_len must be >= 1");
        }
        let (tr, va) = (self.data.train_ratio, self.data.valid_ratio);
        if !(tr > 0.0 && va >= 0.0 && tr + va < 1.0) {
            return bad("split ratios must satisfy 0 < train, 0 <= valid, train + valid < 1");
        }
        if self.synthesis.clique_size == 0 {
            return bad("synthesis.clique_size must be >= 1");
        }
        let t = &self.train;
        if t.dim == 0 || t.interests == 0 || t.routing_iters == 0 {
            return bad("train.dim, train.interests and train.routing_iters must be >= 1");
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return bad("train.lr must be positive");
        }
        if !(t.tau > 0.0 && t.tau.is_finite()) {
            return bad("train.tau must be positive");
        }
        if !(t.lambda >= 0.0 && t.lambda <= 1.0) {
            return bad("train.lambda must lie in [0, 1]");
        }
        if t.batch_size == 0 || t.epochs == 0 {
            return bad("train.batch_size and train.epochs must be >= 1");
        }
        if t.no_sem && t.no_col {
            return bad("train.no_sem and train.no_col are mutually exclusive");
        }
        Ok(())
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        Path::new(&self.out_dir).join(name)
    }
}
