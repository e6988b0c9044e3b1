//! Bundled generative models and their configuration.

mod circuit;
mod conjugate;
mod magnitude;
mod resistor;

pub use circuit::{CircuitConfig, CircuitModel};
pub use conjugate::{ConjugateConfig, ConjugateModel};
pub use magnitude::{MagnitudeConfig, MagnitudeModel};
pub use resistor::{ResistorConfig, ResistorModel};

use crate::acsim::AcError;
use crate::trace::{Model, TraceError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("unknown model `{0}` (expected one of: magnitude, resistor, circuit, conjugate)")]
    Unknown(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("trace has no latent `{0}`")]
    MissingLatent(String),
    #[error(transparent)]
    Circuit(#[from] AcError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

pub(crate) fn positive(name: &str, v: f64) -> Result<(), ModelError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ModelError::Config(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

pub(crate) fn probability(name: &str, v: f64) -> Result<(), ModelError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ModelError::Config(format!(
            "{name} must lie in [0, 1], got {v}"
        )))
    }
}

pub const MODEL_NAMES: [&str; 4] = ["magnitude", "resistor", "circuit", "conjugate"];

/// Model selection plus its settings, as read from a config file:
///
/// ```toml
/// model = "magnitude"
/// sigma_p = 10.0
/// sigma_l = 0.5
/// nuisance = 20
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelConfig {
    Magnitude(MagnitudeConfig),
    Resistor(ResistorConfig),
    Circuit(CircuitConfig),
    Conjugate(ConjugateConfig),
}

impl ModelConfig {
    pub fn default_for(name: &str) -> Result<Self, ModelError> {
        Ok(match name {
            "magnitude" => ModelConfig::Magnitude(MagnitudeConfig::default()),
            "resistor" => ModelConfig::Resistor(ResistorConfig::default()),
            "circuit" => ModelConfig::Circuit(CircuitConfig::default()),
            "conjugate" => ModelConfig::Conjugate(ConjugateConfig::default()),
            other => return Err(ModelError::Unknown(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Magnitude(_) => "magnitude",
            ModelConfig::Resistor(_) => "resistor",
            ModelConfig::Circuit(_) => "circuit",
            ModelConfig::Conjugate(_) => "conjugate",
        }
    }

    pub fn build(&self) -> Result<Box<dyn Model>, ModelError> {
        Ok(match self {
            ModelConfig::Magnitude(c) => Box::new(MagnitudeModel::new(*c)?),
            ModelConfig::Resistor(c) => Box::new(ResistorModel::new(*c)?),
            ModelConfig::Circuit(c) => Box::new(CircuitModel::new(*c)?),
            ModelConfig::Conjugate(c) => Box::new(ConjugateModel::new(*c)?),
        })
    }
}
