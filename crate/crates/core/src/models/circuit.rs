use super::{positive, probability, ModelError};
use crate::acsim::{
    butterworth_bandpass, frequency_sweep, log_space, AcError, ButterworthSpec, ComponentKind,
    FrequencyResponse, Netlist,
};
use crate::dist::Distribution;
use crate::trace::{Address, Context, Model, Trace, TraceError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircuitConfig {
    pub filter: ButterworthSpec,
    pub p_connected: f64,
    pub p_short: f64,
    /// Probability a value comes from the tight Gaussian around nominal.
    pub weight_normal: f64,
    /// Tight Gaussian std as a fraction of nominal.
    pub tight_std_fraction: f64,
    /// Broad uniform bounds as fractions of nominal.
    pub uniform_low: f64,
    pub uniform_high: f64,
    /// Std of the Normal noise on each real and imaginary output part (V).
    pub noise_std: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub num_freqs: usize,
    /// Relative deviation from nominal beyond which a value counts as faulty.
    pub fault_tolerance: f64,
}

impl Default for CircuitConfig {
    fn default() -> Self {
        Self {
            filter: ButterworthSpec::default(),
            p_connected: 0.99,
            p_short: 0.01,
            weight_normal: 0.98,
            tight_std_fraction: 0.0005,
            uniform_low: 0.1,
            uniform_high: 1.9,
            noise_std: 0.005,
            f_min: 5_000.0,
            f_max: 20_000.0,
            num_freqs: 40,
            fault_tolerance: 0.003,
        }
    }
}

impl CircuitConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        probability("p_connected", self.p_connected)?;
        probability("p_short", self.p_short)?;
        probability("weight_normal", self.weight_normal)?;
        positive("tight_std_fraction", self.tight_std_fraction)?;
        positive("noise_std", self.noise_std)?;
        positive("f_min", self.f_min)?;
        positive("fault_tolerance", self.fault_tolerance)?;
        if !(self.uniform_low < 1.0 && 1.0 < self.uniform_high && self.uniform_low > 0.0) {
            return Err(ModelError::Config(
                "uniform bounds must bracket nominal (0 < low < 1 < high)".into(),
            ));
        }
        if self.f_max <= self.f_min || self.num_freqs == 0 {
            return Err(ModelError::Config(
                "need f_max > f_min and num_freqs ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Part {
    index: usize,
    name: String,
    nominal: f64,
    connected: Address,
    value: Address,
}

#[derive(Debug, Clone)]
struct ShortSite {
    index: usize,
    name: String,
    address: Address,
}

/// Fault model over a netlist: for each passive component, whether it is
/// connected and its value; then whether each short location is active; then
/// the noisy complex output at every sweep frequency.
#[derive(Debug, Clone)]
pub struct CircuitModel {
    pub config: CircuitConfig,
    template: Netlist,
    out_node: usize,
    freqs: Vec<f64>,
    parts: Vec<Part>,
    shorts: Vec<ShortSite>,
    obs: Vec<Address>,
}

impl CircuitModel {
    pub fn new(config: CircuitConfig) -> Result<Self, ModelError> {
        let net = butterworth_bandpass(&config.filter);
        Self::with_netlist(config, net, "out")
    }

    /// Model over an arbitrary template; every R, L and C becomes a
    /// component site and every short element a short location.
    pub fn with_netlist(
        config: CircuitConfig,
        template: Netlist,
        out_node: &str,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        template.validate()?;
        let out_node = template.node_id(out_node)?;
        let addr = |s: String| Address::new(s).map_err(ModelError::from);
        let mut parts = Vec::new();
        let mut shorts = Vec::new();
        for (index, c) in template.components.iter().enumerate() {
            match c.kind {
                ComponentKind::Resistor | ComponentKind::Capacitor | ComponentKind::Inductor => {
                    parts.push(Part {
                        index,
                        name: c.name.clone(),
                        nominal: c.value,
                        connected: addr(format!("{}_connected", c.name))?,
                        value: addr(format!("{}_value", c.name))?,
                    })
                }
                ComponentKind::Short => shorts.push(ShortSite {
                    index,
                    name: c.name.clone(),
                    address: addr(format!("{}_short", c.name))?,
                }),
                ComponentKind::VacSource => {}
            }
        }
        let freqs = log_space(config.f_min, config.f_max, config.num_freqs);
        let obs = (0..config.num_freqs)
            .flat_map(|i| [format!("re{i}"), format!("im{i}")])
            .map(addr)
            .collect::<Result<_, _>>()?;
        Ok(Self {
            config,
            template,
            out_node,
            freqs,
            parts,
            shorts,
            obs,
        })
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn template(&self) -> &Netlist {
        &self.template
    }

    pub fn component_names(&self) -> Vec<String> {
        self.parts.iter().map(|p| p.name.clone()).collect()
    }

    pub fn short_names(&self) -> Vec<String> {
        self.shorts.iter().map(|s| s.name.clone()).collect()
    }

    pub fn num_components(&self) -> usize {
        self.parts.len()
    }

    fn value_prior(&self, nominal: f64) -> Result<Distribution, TraceError> {
        let c = &self.config;
        Ok(Distribution::mixture_normal_uniform(
            c.weight_normal,
            nominal,
            c.tight_std_fraction * nominal,
            c.uniform_low * nominal,
            c.uniform_high * nominal,
        )?)
    }

    /// Response with every component nominal and connected, no shorts.
    pub fn nominal_response(&self) -> Result<FrequencyResponse, AcError> {
        frequency_sweep(&self.template, &self.freqs, self.out_node)
    }

    /// Netlist realized by a trace's latent values.
    pub fn netlist_for(&self, trace: &Trace) -> Result<Netlist, ModelError> {
        let mut net = self.template.clone();
        let get = |a: &Address| {
            trace
                .value(a.as_str(), 1)
                .ok_or_else(|| ModelError::MissingLatent(a.to_string()))
        };
        for p in &self.parts {
            let comp = &mut net.components[p.index];
            comp.connected = get(&p.connected)? == 1.0;
            comp.value = get(&p.value)?;
        }
        for s in &self.shorts {
            net.components[s.index].connected = get(&s.address)? == 1.0;
        }
        Ok(net)
    }

    /// Noise-free response realized by a trace's latent values.
    pub fn response_for(&self, trace: &Trace) -> Result<FrequencyResponse, ModelError> {
        Ok(frequency_sweep(
            &self.netlist_for(trace)?,
            &self.freqs,
            self.out_node,
        )?)
    }

    /// Labels of [`CircuitModel::fault_indicators`], in order:
    /// `<part>:faulty` and `<part>:disconnected` per part, then `<short>:short`.
    pub fn fault_labels(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .parts
            .iter()
            .flat_map(|p| {
                [
                    format!("{}:faulty", p.name),
                    format!("{}:disconnected", p.name),
                ]
            })
            .collect();
        v.extend(self.shorts.iter().map(|s| format!("{}:short", s.name)));
        v
    }

    /// 0/1 fault indicators for a trace: value outside tolerance of nominal,
    /// disconnected, and active shorts.
    pub fn fault_indicators(&self, trace: &Trace) -> Result<Vec<f64>, ModelError> {
        let get = |a: &Address| {
            trace
                .value(a.as_str(), 1)
                .ok_or_else(|| ModelError::MissingLatent(a.to_string()))
        };
        let mut out = Vec::with_capacity(2 * self.parts.len() + self.shorts.len());
        for p in &self.parts {
            let v = get(&p.value)?;
            let faulty = ((v - p.nominal) / p.nominal).abs() > self.config.fault_tolerance;
            out.push(f64::from(u8::from(faulty)));
            out.push(f64::from(u8::from(get(&p.connected)? == 0.0)));
        }
        for s in &self.shorts {
            out.push(get(&s.address)?);
        }
        Ok(out)
    }
}

impl Model for CircuitModel {
    fn name(&self) -> &str {
        "circuit"
    }

    fn num_observations(&self) -> usize {
        2 * self.freqs.len()
    }

    fn observation_names(&self) -> Vec<String> {
        self.obs.iter().map(|a| a.to_string()).collect()
    }

    fn run(&self, ctx: &mut Context<'_>) -> Result<(), TraceError> {
        let c = &self.config;
        let mut net = self.template.clone();
        let connect = Distribution::bernoulli(c.p_connected)?;
        for p in &self.parts {
            let on = ctx.sample(&p.connected, connect.clone())?;
            let v = ctx.sample(&p.value, self.value_prior(p.nominal)?)?;
            let comp = &mut net.components[p.index];
            comp.connected = on == 1.0;
            comp.value = v;
        }
        let short = Distribution::bernoulli(c.p_short)?;
        for s in &self.shorts {
            net.components[s.index].connected = ctx.sample(&s.address, short.clone())? == 1.0;
        }
        // proposals can reach non-positive values, which no circuit realizes
        let physical = self.parts.iter().all(|p| {
            net.components[p.index].value > 0.0 && net.components[p.index].value.is_finite()
        });
        if !physical {
            let nominal = self
                .nominal_response()
                .map_err(|e| TraceError::Model(format!("simulation failed: {e}")))?;
            for (i, v) in nominal.vout.iter().enumerate() {
                ctx.observe_infeasible(&self.obs[2 * i], Distribution::normal(v.re, c.noise_std)?)?;
                ctx.observe_infeasible(
                    &self.obs[2 * i + 1],
                    Distribution::normal(v.im, c.noise_std)?,
                )?;
            }
            return Ok(());
        }
        let resp = frequency_sweep(&net, &self.freqs, self.out_node)
            .map_err(|e| TraceError::Model(format!("simulation failed: {e}")))?;
        for (i, v) in resp.vout.iter().enumerate() {
            ctx.observe(&self.obs[2 * i], Distribution::normal(v.re, c.noise_std)?)?;
            ctx.observe(
                &self.obs[2 * i + 1],
                Distribution::normal(v.im, c.noise_std)?,
            )?;
        }
        Ok(())
    }
}
