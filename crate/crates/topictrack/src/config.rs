//! JSON configuration files.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use topictrack_core::encoder::EncoderConfig;
use topictrack_core::optim::TrainConfig;

use crate::Error;

/// Configuration for `pretrain` and `train`. Field names mirror the core
/// config structs; every field is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    /// Minimum token count for a vocabulary entry when building a fresh model.
    pub vocab_min_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            vocab_min_count: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), Error> {
        self.train.validate()?;
        if self.vocab_min_count == 0 {
            return Err(topictrack_core::Error::Invalid {
                field: "vocab_min_count",
                reason: "must be at least 1".into(),
            }
            .into());
        }
        Ok(())
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Reads `path` when given, otherwise returns the default.
pub fn read_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Error> {
    path.map_or_else(|| Ok(T::default()), read_json)
}
