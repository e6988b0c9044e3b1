use super::{positive, probability, ModelError};
use crate::dist::Distribution;
use crate::trace::{Address, Context, Model, TraceError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResistorConfig {
    pub voltage_mean: f64,
    pub voltage_std: f64,
    pub p_faulty: f64,
    pub r_nominal: f64,
    pub r_nominal_std: f64,
    pub r_faulty_low: f64,
    pub r_faulty_high: f64,
    pub current_noise: f64,
}

impl Default for ResistorConfig {
    fn default() -> Self {
        Self {
            voltage_mean: 5.0,
            voltage_std: 0.1,
            p_faulty: 0.1,
            r_nominal: 100.0,
            r_nominal_std: 1.0,
            r_faulty_low: 1.0,
            r_faulty_high: 1000.0,
            current_noise: 0.001,
        }
    }
}

impl ResistorConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        positive("voltage_std", self.voltage_std)?;
        probability("p_faulty", self.p_faulty)?;
        positive("r_nominal_std", self.r_nominal_std)?;
        positive("r_faulty_low", self.r_faulty_low)?;
        positive("current_noise", self.current_noise)?;
        if self.r_faulty_high <= self.r_faulty_low {
            return Err(ModelError::Config(
                "r_faulty_high must exceed r_faulty_low".into(),
            ));
        }
        Ok(())
    }
}

/// Source voltage, a possibly faulty resistor, and a noisy current reading.
/// The resistance is drawn at `r_faulty` or `r_ok` depending on the fault
/// flag, so traces take one of two address paths.
#[derive(Debug, Clone)]
pub struct ResistorModel {
    pub config: ResistorConfig,
    voltage: Address,
    faulty: Address,
    r_faulty: Address,
    r_ok: Address,
    current: Address,
}

impl ResistorModel {
    pub fn new(config: ResistorConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let addr = |s: &str| Address::new(s).expect("static address");
        Ok(Self {
            config,
            voltage: addr("voltage"),
            faulty: addr("faulty"),
            r_faulty: addr("r_faulty"),
            r_ok: addr("r_ok"),
            current: addr("current"),
        })
    }
}

impl Model for ResistorModel {
    fn name(&self) -> &str {
        "resistor"
    }

    fn num_observations(&self) -> usize {
        1
    }

    fn observation_names(&self) -> Vec<String> {
        vec!["current".into()]
    }

    fn run(&self, ctx: &mut Context<'_>) -> Result<(), TraceError> {
        let c = &self.config;
        let v = ctx.sample(
            &self.voltage,
            Distribution::normal(c.voltage_mean, c.voltage_std)?,
        )?;
        let f = ctx.sample(&self.faulty, Distribution::bernoulli(c.p_faulty)?)?;
        let r = if f == 1.0 {
            ctx.sample(
                &self.r_faulty,
                Distribution::uniform(c.r_faulty_low, c.r_faulty_high)?,
            )?
        } else {
            ctx.sample(
                &self.r_ok,
                Distribution::normal(c.r_nominal, c.r_nominal_std)?,
            )?
        };
        ctx.observe(&self.current, Distribution::normal(v / r, c.current_noise)?)?;
        Ok(())
    }
}
