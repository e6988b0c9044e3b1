use super::params::{ParamGrads, ParamStore};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

/// Adam with bias correction. Each parameter keeps its own step count, so
/// parameters created mid-training (new registry sites) start corrected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    moments: Vec<Moments>,
    steps: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("non-finite gradient for parameter `{param}`")]
pub struct NonFiniteGradient {
    pub param: String,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            moments: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every parameter with a gradient. Parameters
    /// without a gradient this step are left untouched. Fails without
    /// modifying anything if any gradient is non-finite.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &ParamGrads,
        lr: f64,
    ) -> Result<(), NonFiniteGradient> {
        for (id, g) in grads.touched() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(NonFiniteGradient {
                    param: params.get(id).name.clone(),
                });
            }
        }
        if self.moments.len() < params.len() {
            self.moments.resize_with(params.len(), Moments::default);
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        for (id, g) in grads.touched() {
            let mom = &mut self.moments[id.index()];
            if mom.m.is_empty() {
                mom.m = vec![0.0; g.len()];
                mom.v = vec![0.0; g.len()];
            }
            mom.steps += 1;
            let bc1 = 1.0 - beta1.powi(mom.steps as i32);
            let bc2 = 1.0 - beta2.powi(mom.steps as i32);
            let data = params.data_mut(id);
            for i in 0..g.len() {
                mom.m[i] = beta1 * mom.m[i] + (1.0 - beta1) * g[i];
                mom.v[i] = beta2 * mom.v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = mom.m[i] / bc1;
                let v_hat = mom.v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        self.steps += 1;
        Ok(())
    }
}
