use super::{positive, ModelError};
use crate::dist::Distribution;
use crate::trace::{Address, Context, Model, TraceError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MagnitudeConfig {
    /// Prior standard deviation of every latent.
    pub sigma_p: f64,
    /// Likelihood standard deviation of the squared-radius observation.
    pub sigma_l: f64,
    /// Number of nuisance latents sampled between `x` and `y`.
    pub nuisance: usize,
}

impl Default for MagnitudeConfig {
    fn default() -> Self {
        Self {
            sigma_p: 10.0,
            sigma_l: 0.5,
            nuisance: 20,
        }
    }
}

impl MagnitudeConfig {
    /// Likelihood std as written in the program listing rather than the prose.
    pub fn listing_preset(nuisance: usize) -> Self {
        Self {
            sigma_l: 0.1,
            nuisance,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        positive("sigma_p", self.sigma_p)?;
        positive("sigma_l", self.sigma_l)
    }
}

/// `x ~ N(0, σp)`, `M` nuisance draws, `y ~ N(0, σp)`, then
/// `r̂² ~ N(x² + y², σl)`.
#[derive(Debug, Clone)]
pub struct MagnitudeModel {
    pub config: MagnitudeConfig,
    x: Address,
    nuisance: Vec<Address>,
    y: Address,
    r2: Address,
}

impl MagnitudeModel {
    pub fn new(config: MagnitudeConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let addr = |s: &str| Address::new(s).expect("static address");
        Ok(Self {
            config,
            x: addr("x"),
            nuisance: (1..=config.nuisance)
                .map(|i| addr(&format!("nuisance_{i}")))
                .collect(),
            y: addr("y"),
            r2: addr("r2"),
        })
    }

    pub fn trace_length(&self) -> usize {
        self.config.nuisance + 2
    }
}

impl Model for MagnitudeModel {
    fn name(&self) -> &str {
        "magnitude"
    }

    fn num_observations(&self) -> usize {
        1
    }

    fn observation_names(&self) -> Vec<String> {
        vec!["r2".into()]
    }

    fn run(&self, ctx: &mut Context<'_>) -> Result<(), TraceError> {
        let prior = Distribution::normal(0.0, self.config.sigma_p)?;
        let x = ctx.sample(&self.x, prior.clone())?;
        for a in &self.nuisance {
            ctx.sample(a, prior.clone())?;
        }
        let y = ctx.sample(&self.y, prior)?;
        ctx.observe(
            &self.r2,
            Distribution::normal(x * x + y * y, self.config.sigma_l)?,
        )?;
        Ok(())
    }
}
