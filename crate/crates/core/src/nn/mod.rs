//! Minimal differentiable tensor stack: tape graph, dense/LSTM layers,
//! scaled dot-product attention and Adam.

mod adam;
mod graph;
mod layers;
mod params;

pub use adam::{Adam, AdamConfig, NonFiniteGradient};
pub use graph::{Graph, Var, VarGrads};
pub use layers::{Activation, Dense, Lstm, LstmState, Mlp};
pub use params::{Param, ParamGrads, ParamId, ParamStore};

use serde::{Deserialize, Serialize};

/// Shape of a dot-product attention module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub num_queries: usize,
    pub key_dim: usize,
    pub value_dim: usize,
}

impl AttentionSpec {
    pub fn new(num_queries: usize, key_dim: usize, value_dim: usize) -> Self {
        assert!(num_queries >= 1 && key_dim >= 1 && value_dim >= 1);
        Self {
            num_queries,
            key_dim,
            value_dim,
        }
    }

    pub fn scale(&self) -> f64 {
        1.0 / (self.key_dim as f64).sqrt()
    }

    pub fn output_dim(&self) -> usize {
        self.num_queries * self.value_dim
    }
}

impl Default for AttentionSpec {
    fn default() -> Self {
        Self::new(4, 16, 8)
    }
}
