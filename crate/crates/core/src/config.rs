//! TOML run configuration.
//!
//! ```toml
//! [synth]            # synthetic dataset generation
//! n_states = 6
//! n_objects = 5
//! seen_fraction = 0.5
//!
//! [train]            # trainer hyperparameters
//! learning_rate = 0.05
//! epochs = 30
//! schedule = { sequence = ["o", "a", "ao"], round_range = 3 }
//! weight = { alpha = 2.0, direction = "suppress", mode = "equation" }
//!
//! [model]
//! init = "gaussian"  # or { embedding_file = "path" }
//!
//! [gradcheck]
//! h = 1e-5
//! threshold = 1e-5
//! ```
//!
//! Every table and key is optional; missing values take their defaults.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::model::InitSource;
use crate::training::{TrainStatus, TrainerConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub train: TrainerConfig,
    pub model: ModelConfig,
    pub gradcheck: GradcheckConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub init: InitSource,
    /// Backbone used when the data directory has no `backbone.json`.
    pub latent_dim: usize,
    pub backbone_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            init: InitSource::Gaussian,
            latent_dim: 8,
            backbone_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub h: f64,
    pub threshold: f64,
    /// Samples drawn from the training split for the check.
    pub batch_size: usize,
    /// Statuses to check; defaults to all three.
    pub statuses: Vec<TrainStatus>,
    /// Scale applied to the initial tables so the check runs away from the
    /// near-zero initialisation.
    pub table_scale: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            h: 1e-5,
            threshold: 1e-5,
            batch_size: 8,
            statuses: TrainStatus::ALL.to_vec(),
            table_scale: 25.0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entanglement::WeightDirection;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_tables_fill_from_defaults() {
        let cfg = RunConfig::from_toml(
            r#"
            [train]
            learning_rate = 0.01
            schedule = { sequence = ["a", "o", "ao"], round_range = 5 }
            weight = { alpha = 0.5, direction = "enhance" }

            [model]
            init = { embedding_file = "emb.txt" }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.train.learning_rate, 0.01);
        assert_eq!(cfg.train.batch_size, 128);
        assert_eq!(cfg.train.schedule.round_range(), 5);
        assert_eq!(cfg.train.weight.direction, WeightDirection::Enhance);
        assert_eq!(cfg.model.init, InitSource::EmbeddingFile("emb.txt".into()));
    }

    #[test]
    fn unknown_keys_and_bad_schedules_fail() {
        assert!(RunConfig::from_toml("[train]\nlearning_rat = 1.0\n").is_err());
        assert!(RunConfig::from_toml("[train]\nschedule = { sequence = [\"o\", \"o\", \"a\"], round_range = 3 }\n").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
