//! JSON checkpoint container.
//!
//! Layout (top-level object):
//! `format` = `"icattn-checkpoint"`, `version` = 1, `model` (registered model
//! name), optional `model_config`, `num_observations`, `traces_seen`,
//! `steps`, `network` (architecture config, observation normalizer,
//! parameter tensors by name and shape, and the registry as a list of
//! `{key: {address, instance}, family, ...}`), and an optional `optimizer`
//! holding Adam moments.

use super::{InferenceNetwork, NetError};
use crate::models::ModelConfig;
use crate::nn::Adam;
use crate::trace::Model;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_FORMAT: &str = "icattn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("not a checkpoint (format `{0}`)")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint was trained on model `{trained}`, not `{requested}`")]
    ModelName { trained: String, requested: String },
    #[error(transparent)]
    Network(#[from] NetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: String,
    /// Settings the network was trained against, when known.
    #[serde(default)]
    pub model_config: Option<ModelConfig>,
    pub num_observations: usize,
    pub traces_seen: u64,
    pub steps: u64,
    pub network: InferenceNetwork,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn new(
        model: &str,
        network: InferenceNetwork,
        optimizer: Option<Adam>,
        traces_seen: u64,
        steps: u64,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: model.to_string(),
            model_config: None,
            num_observations: network.num_observations,
            traces_seen,
            steps,
            network,
            optimizer,
        }
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(CheckpointError::Format(ck.format));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(ck.version));
        }
        if ck.network.num_observations != ck.num_observations {
            return Err(CheckpointError::Network(NetError::ObservationWidth {
                expected: ck.num_observations,
                got: ck.network.num_observations,
            }));
        }
        Ok(ck)
    }

    /// Writes atomically via a sibling temporary file.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json()?).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Checks the checkpoint against `model`, naming offending sites on mismatch.
    pub fn check_model(&self, model: &dyn Model) -> Result<(), CheckpointError> {
        if self.model != model.name() {
            return Err(CheckpointError::ModelName {
                trained: self.model.clone(),
                requested: model.name().to_string(),
            });
        }
        self.network.check_compatible(model, 32)?;
        Ok(())
    }
}
