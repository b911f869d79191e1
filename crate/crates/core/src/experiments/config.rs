//! Experiment-level settings: everything a run needs besides the data.

use serde::{Deserialize, Serialize};

use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub split: SplitSpec,
    /// Seeds of repeated runs (resampling, initialisation and shuffling).
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    /// The full-size hyperparameters: `d = 64`, histories of 20, batches of
    /// 2000, Adam at `1e-4`, unit loss weights.
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            weights: LossWeights::default(),
            split: SplitSpec::default(),
            seeds: (0..5).collect(),
        }
    }
}

impl ExperimentConfig {
    /// Settings sized for the bundled synthetic fixture, where a run takes
    /// seconds. The domain terms are down-weighted to `0.1`: at unit weight
    /// the reversed gradients overpower the click loss on this data and the
    /// predictor collapses to chance.
    pub fn desk_scale() -> Self {
        Self {
            model: ModelConfig {
                embed_dim: 8,
                seqlen: 5,
                dnn_hidden: vec![32, 16],
                predictor_hidden: 16,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                batch_size: 256,
                epochs: 10,
                learning_rate: 1e-3,
                ..TrainConfig::default()
            },
            weights: LossWeights {
                lambda2: 0.1,
                lambda3: 0.1,
                ..LossWeights::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.weights.validate()?;
        self.split.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment settings serialise to TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::desk_scale();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = ExperimentConfig::from_toml("[weights]\nlambda2 = 0.5\n").unwrap();
        assert_eq!(cfg.weights.lambda2, 0.5);
        assert_eq!(cfg.weights.alpha, 0.5);
        assert_eq!(cfg.model.embed_dim, 64);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentConfig::from_toml("[weights]\nalpha = 2.0\n").is_err());
        assert!(ExperimentConfig::from_toml("seeds = []\n").is_err());
        assert!(ExperimentConfig::from_toml("[model]\nembed_dim = \"x\"\n").is_err());
    }
}
