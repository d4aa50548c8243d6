//! Run configuration read from a TOML file.
//!
//! Every key is optional; unknown keys are rejected.
//!
//! ```toml
//! [dataset]
//! n = 576
//! steps = 6
//! classes = 5
//! samples_per_class = 50
//! noise_sigma = 1.0
//! seed = 0
//!
//! [model]
//! in_shape = [8, 8, 3, 3]
//! out_shape = [4, 4, 2, 2]
//! leaf_rank = 3
//! internal_rank = 3
//! split = "floor"          # or "ceil"
//! layout = "separate"      # or "concatenated"
//! forget_bias = 1.0
//! seed = 0
//!
//! [train]
//! learning_rate = 0.001
//! l2_coefficient = 0.001
//! dropout_rate = 0.25
//! batch_size = 16
//! epochs = 200
//! seed = 0
//!
//! [output]
//! model = "model.htlstm"
//! log = "train_log.jsonl"
//! ```

use std::path::{Path, PathBuf};

use htlstm_core::train::{SynthSpec, TrainConfig};
use htlstm_core::{GateLayout, InteriorSplit, LstmConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub leaf_rank: usize,
    pub internal_rank: usize,
    pub split: InteriorSplit,
    pub layout: GateLayout,
    pub forget_bias: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = LstmConfig::default();
        Self {
            in_shape: d.in_shape,
            out_shape: d.out_shape,
            leaf_rank: d.leaf_rank,
            internal_rank: d.internal_rank,
            split: d.split,
            layout: d.layout,
            forget_bias: d.forget_bias,
            seed: d.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub model: PathBuf,
    pub log: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            model: PathBuf::from("model.htlstm"),
            log: PathBuf::from("train_log.jsonl"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: SynthSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n: usize = self.model.in_shape.iter().product();
        if n != self.dataset.n {
            return Err(ConfigError::Invalid(format!(
                "model.in_shape {:?} has {n} entries but dataset.n = {}",
                self.model.in_shape, self.dataset.n
            )));
        }
        self.train
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn lstm_config(&self) -> LstmConfig {
        LstmConfig {
            in_shape: self.model.in_shape.clone(),
            out_shape: self.model.out_shape.clone(),
            leaf_rank: self.model.leaf_rank,
            internal_rank: self.model.internal_rank,
            split: self.model.split,
            classes: self.dataset.classes,
            layout: self.model.layout,
            forget_bias: self.model.forget_bias,
            seed: self.model.seed,
        }
    }

    /// Applies one seed to dataset, model and training.
    pub fn set_seed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.train.dropout_rate, 0.25);
        assert_eq!(cfg.train.l2_coefficient, 0.001);
        assert_eq!(cfg.dataset.n, 576);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("[train]\nlearning_rte = 0.1\n").is_err());
        assert!(RunConfig::from_toml("[extra]\n").is_err());
    }

    #[test]
    fn partial_override() {
        let cfg = RunConfig::from_toml("[train]\nepochs = 3\n[model]\nsplit = \"ceil\"\nlayout = \"concatenated\"\n").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.model.split, InteriorSplit::CeilLeft);
        assert_eq!(cfg.model.layout, GateLayout::Concatenated);
        assert_eq!(cfg.train.learning_rate, 1e-3);
    }

    #[test]
    fn inconsistent_shapes_rejected() {
        assert!(RunConfig::from_toml("[dataset]\nn = 10\n").is_err());
        assert!(RunConfig::from_toml("[train]\ndropout_rate = 1.5\n").is_err());
    }
}
