use super::{positive, ModelError};
use crate::dist::Distribution;
use crate::trace::{Address, Context, Model, TraceError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConjugateConfig {
    pub prior_mean: f64,
    pub prior_std: f64,
    pub noise_std: f64,
}

impl Default for ConjugateConfig {
    fn default() -> Self {
        Self {
            prior_mean: 0.0,
            prior_std: 1.0,
            noise_std: 1.0,
        }
    }
}

/// `μ ~ N(m, s)`, `y ~ N(μ, σ)`: one latent, one observation, closed-form
/// posterior.
#[derive(Debug, Clone)]
pub struct ConjugateModel {
    pub config: ConjugateConfig,
    mu: Address,
    y: Address,
}

impl ConjugateModel {
    pub fn new(config: ConjugateConfig) -> Result<Self, ModelError> {
        positive("prior_std", config.prior_std)?;
        positive("noise_std", config.noise_std)?;
        Ok(Self {
            config,
            mu: Address::new("mu").expect("static address"),
            y: Address::new("y").expect("static address"),
        })
    }

    /// Posterior mean and standard deviation of `μ` given `y`.
    pub fn posterior(&self, y: f64) -> (f64, f64) {
        let c = &self.config;
        let prec = 1.0 / c.prior_std.powi(2) + 1.0 / c.noise_std.powi(2);
        let mean = (c.prior_mean / c.prior_std.powi(2) + y / c.noise_std.powi(2)) / prec;
        (mean, prec.recip().sqrt())
    }
}

impl Model for ConjugateModel {
    fn name(&self) -> &str {
        "conjugate"
    }

    fn num_observations(&self) -> usize {
        1
    }

    fn run(&self, ctx: &mut Context<'_>) -> Result<(), TraceError> {
        let c = &self.config;
        let mu = ctx.sample(&self.mu, Distribution::normal(c.prior_mean, c.prior_std)?)?;
        ctx.observe(&self.y, Distribution::normal(mu, c.noise_std)?)?;
        Ok(())
    }
}
