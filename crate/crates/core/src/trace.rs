//! Execution traces and the sampling context models run against.
//!
//! A model is ordinary Rust code that calls [`Context::sample`] and
//! [`Context::observe`]. The [`Controller`] decides where latent values come
//! from: the prior, a proposal (guided), or a fixed assignment (replay).
//! Every execution produces a [`Trace`] whose `log_joint` is the sum of all
//! latent and observation log-densities.

use crate::dist::{DistError, Distribution, Family};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TraceError {
    #[error("model `{model}` issued {got} observations, expected {expected}")]
    ObservationCount {
        model: String,
        expected: usize,
        got: usize,
    },
    #[error("address `{address}` used with {first} and then {second} in one trace")]
    FamilyMismatch {
        address: Address,
        first: Family,
        second: Family,
    },
    #[error("invalid address label {0:?}")]
    InvalidAddress(String),
    #[error("replay has no value for {address}#{instance}")]
    ReplayMissing { address: Address, instance: u32 },
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("proposal failed at {address}#{instance}: {reason}")]
    Proposal {
        address: Address,
        instance: u32,
        reason: String,
    },
    #[error("model failure: {0}")]
    Model(String),
    #[error("trace format error on line {line}: {reason}")]
    Format { line: usize, reason: String },
}

/// Label of a syntactic sample or observe statement.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Address(Arc<str>);

impl Address {
    pub fn new(label: impl AsRef<str>) -> Result<Self, TraceError> {
        let label = label.as_ref();
        if label.is_empty()
            || label
                .chars()
                .any(|c| c.is_whitespace() || c == ',' || c == '#')
        {
            return Err(TraceError::InvalidAddress(label.to_string()));
        }
        Ok(Address(Arc::from(label)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Address {
    type Error = TraceError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Address::new(s)
    }
}

impl From<Address> for String {
    fn from(a: Address) -> String {
        a.0.to_string()
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A sample statement occurrence: address, instance and the prior's family.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Site {
    pub address: Address,
    pub instance: u32,
    pub family: Family,
}

impl Site {
    pub fn key(&self) -> SiteKey {
        SiteKey {
            address: self.address.clone(),
            instance: self.instance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SiteKey {
    pub address: Address,
    pub instance: u32,
}

impl fmt::Display for SiteKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.address, self.instance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub address: Address,
    pub instance: u32,
    pub dist: Distribution,
    pub value: f64,
    pub log_prob: f64,
}

impl TraceEntry {
    pub fn site(&self) -> Site {
        Site {
            address: self.address.clone(),
            instance: self.instance,
            family: self.dist.family(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub index: usize,
    pub address: Address,
    pub dist: Distribution,
    pub value: f64,
    pub log_prob: f64,
    /// Number of latent entries recorded before this observe statement.
    pub latent_cursor: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
    pub observations: Vec<Observation>,
    pub log_joint: f64,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn observed_values(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.value).collect()
    }

    pub fn log_prior(&self) -> f64 {
        self.entries.iter().map(|e| e.log_prob).sum()
    }

    pub fn log_likelihood(&self) -> f64 {
        self.observations.iter().map(|o| o.log_prob).sum()
    }

    /// Value recorded at `(address, instance)`, if present.
    pub fn value(&self, address: &str, instance: u32) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.address.as_str() == address && e.instance == instance)
            .map(|e| e.value)
    }

    /// Line-oriented text form. One `S` line per latent entry, one `O` line
    /// per observation; fields are tab separated:
    ///
    /// ```text
    /// S <address> <instance> <tag> <p1,p2,...> <value>
    /// O <address> <index> <tag> <p1,p2,...> <value> <latent_cursor>
    /// ```
    ///
    /// Floats use the shortest round-trip representation.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let params = |d: &Distribution| {
            d.params()
                .iter()
                .map(|p| format!("{p:?}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        for e in &self.entries {
            let _ = writeln!(
                out,
                "S\t{}\t{}\t{}\t{}\t{:?}",
                e.address,
                e.instance,
                e.dist.family().tag(),
                params(&e.dist),
                e.value
            );
        }
        for o in &self.observations {
            let _ = writeln!(
                out,
                "O\t{}\t{}\t{}\t{}\t{:?}\t{}",
                o.address,
                o.index,
                o.dist.family().tag(),
                params(&o.dist),
                o.value,
                o.latent_cursor
            );
        }
        out
    }

    /// Parses [`Trace::to_text`] output, recomputing log-densities.
    pub fn from_text(text: &str) -> Result<Trace, TraceError> {
        let mut trace = Trace::default();
        for (ln, line) in text.lines().enumerate() {
            let line_no = ln + 1;
            if line.trim().is_empty() {
                continue;
            }
            let err = |reason: &str| TraceError::Format {
                line: line_no,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let parse_f = |s: &str| s.parse::<f64>().map_err(|_| err("bad float"));
            let dist_of = |tag: &str, ps: &str| -> Result<Distribution, TraceError> {
                let family = Family::from_tag(tag)?;
                let params = ps
                    .split(',')
                    .map(|p| p.parse::<f64>().map_err(|_| err("bad parameter")))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Distribution::from_params(family, &params)?)
            };
            match fields.first().copied() {
                Some("S") if fields.len() == 6 => {
                    let dist = dist_of(fields[3], fields[4])?;
                    let value = parse_f(fields[5])?;
                    let log_prob = dist.log_pdf(value);
                    trace.entries.push(TraceEntry {
                        address: Address::new(fields[1])?,
                        instance: fields[2].parse().map_err(|_| err("bad instance"))?,
                        dist,
                        value,
                        log_prob,
                    });
                }
                Some("O") if fields.len() == 7 => {
                    let dist = dist_of(fields[3], fields[4])?;
                    let value = parse_f(fields[5])?;
                    let log_prob = dist.log_pdf(value);
                    trace.observations.push(Observation {
                        index: fields[2].parse().map_err(|_| err("bad index"))?,
                        address: Address::new(fields[1])?,
                        dist,
                        value,
                        log_prob,
                        latent_cursor: fields[6].parse().map_err(|_| err("bad cursor"))?,
                    });
                }
                _ => return Err(err("unrecognized record")),
            }
        }
        trace.log_joint = trace.log_prior() + trace.log_likelihood();
        Ok(trace)
    }
}

/// Source of proposal distributions during guided execution.
pub trait Proposer {
    /// Proposal for the next site, or `None` to sample from the prior.
    fn propose(
        &mut self,
        site: &Site,
        prior: &Distribution,
    ) -> Result<Option<Distribution>, TraceError>;

    /// Called with the value drawn at `site`, whichever distribution produced it.
    fn record(&mut self, site: &Site, prior: &Distribution, value: f64) -> Result<(), TraceError>;
}

/// Fixed latent assignment keyed by `(address, instance)`.
#[derive(Debug, Clone, Default)]
pub struct ReplayValues {
    values: HashMap<SiteKey, f64>,
}

impl ReplayValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, address: &str, instance: u32, value: f64) -> Result<(), TraceError> {
        self.values.insert(
            SiteKey {
                address: Address::new(address)?,
                instance,
            },
            value,
        );
        Ok(())
    }

    pub fn from_trace(trace: &Trace) -> Self {
        let values = trace
            .entries
            .iter()
            .map(|e| {
                (
                    SiteKey {
                        address: e.address.clone(),
                        instance: e.instance,
                    },
                    e.value,
                )
            })
            .collect();
        Self { values }
    }

    fn get(&self, key: &SiteKey) -> Option<f64> {
        self.values.get(key).copied()
    }
}

pub enum Controller<'a> {
    /// Latents from their priors, observations simulated from the likelihood.
    PriorSample,
    /// Latents from the proposer (or prior on fallback), observations bound.
    Guided {
        proposer: &'a mut dyn Proposer,
        observed: &'a [f64],
    },
    /// Latents fixed, observations bound.
    Replay {
        values: &'a ReplayValues,
        observed: &'a [f64],
    },
}

/// Sampling context handed to a model for one execution.
pub struct Context<'a> {
    controller: Controller<'a>,
    rng: &'a mut dyn RngCore,
    trace: Trace,
    counts: HashMap<Address, (u32, Family)>,
    log_proposal: f64,
    log_ratio: f64,
}

impl<'a> Context<'a> {
    fn new(controller: Controller<'a>, rng: &'a mut dyn RngCore) -> Self {
        Self {
            controller,
            rng,
            trace: Trace::default(),
            counts: HashMap::new(),
            log_proposal: 0.0,
            log_ratio: 0.0,
        }
    }

    /// Instance number the next sample at `address` would receive.
    pub fn instance_of(&self, address: &Address) -> u32 {
        self.counts.get(address).map_or(1, |(n, _)| n + 1)
    }

    /// Number of latents recorded so far.
    pub fn position(&self) -> usize {
        self.trace.entries.len()
    }

    pub fn sample(&mut self, address: &Address, dist: Distribution) -> Result<f64, TraceError> {
        dist.validate()?;
        let family = dist.family();
        let instance = match self.counts.get_mut(address) {
            Some((n, fam)) => {
                if *fam != family {
                    return Err(TraceError::FamilyMismatch {
                        address: address.clone(),
                        first: *fam,
                        second: family,
                    });
                }
                *n += 1;
                *n
            }
            None => {
                self.counts.insert(address.clone(), (1, family));
                1
            }
        };
        let site = Site {
            address: address.clone(),
            instance,
            family,
        };
        let value = match &mut self.controller {
            Controller::PriorSample => dist.sample(&mut *self.rng),
            Controller::Replay { values, .. } => {
                values
                    .get(&site.key())
                    .ok_or_else(|| TraceError::ReplayMissing {
                        address: address.clone(),
                        instance,
                    })?
            }
            Controller::Guided { proposer, .. } => {
                let proposal = proposer.propose(&site, &dist)?;
                let value;
                match proposal {
                    Some(q) => {
                        value = q.sample(&mut *self.rng);
                        let lq = q.log_pdf(value);
                        self.log_proposal += lq;
                        self.log_ratio += dist.log_pdf(value) - lq;
                    }
                    None => {
                        value = dist.sample(&mut *self.rng);
                        self.log_proposal += dist.log_pdf(value);
                    }
                }
                proposer.record(&site, &dist, value)?;
                value
            }
        };
        let log_prob = dist.log_pdf(value);
        self.trace.log_joint += log_prob;
        self.trace.entries.push(TraceEntry {
            address: address.clone(),
            instance,
            dist,
            value,
            log_prob,
        });
        Ok(value)
    }

    /// Observe statement: returns the simulated (prior mode) or bound value.
    pub fn observe(&mut self, address: &Address, dist: Distribution) -> Result<f64, TraceError> {
        self.observe_inner(address, dist, true)
    }

    /// Observe statement for an execution whose latents admit no valid
    /// likelihood (for example a non-physical parameter): the value is bound
    /// as usual but scores log-probability −∞.
    pub fn observe_infeasible(
        &mut self,
        address: &Address,
        dist: Distribution,
    ) -> Result<f64, TraceError> {
        self.observe_inner(address, dist, false)
    }

    fn observe_inner(
        &mut self,
        address: &Address,
        dist: Distribution,
        feasible: bool,
    ) -> Result<f64, TraceError> {
        dist.validate()?;
        let index = self.trace.observations.len();
        let value = match &self.controller {
            Controller::PriorSample => dist.sample(&mut *self.rng),
            Controller::Guided { observed, .. } | Controller::Replay { observed, .. } => {
                *observed.get(index).ok_or(TraceError::ObservationCount {
                    model: String::new(),
                    expected: observed.len(),
                    got: index + 1,
                })?
            }
        };
        let log_prob = if feasible {
            dist.log_pdf(value)
        } else {
            f64::NEG_INFINITY
        };
        self.trace.log_joint += log_prob;
        self.trace.observations.push(Observation {
            index,
            address: address.clone(),
            dist,
            value,
            log_prob,
            latent_cursor: self.trace.entries.len(),
        });
        Ok(value)
    }
}

/// A generative model written against [`Context`].
pub trait Model: Send + Sync {
    fn name(&self) -> &str;

    /// Fixed observation count N shared by every execution.
    fn num_observations(&self) -> usize;

    /// Observation labels, used for CLI input and CSV headers.
    fn observation_names(&self) -> Vec<String> {
        (0..self.num_observations())
            .map(|i| format!("y{i}"))
            .collect()
    }

    fn run(&self, ctx: &mut Context<'_>) -> Result<(), TraceError>;
}

/// Result of a single model execution.
#[derive(Debug, Clone)]
pub struct Execution {
    pub trace: Trace,
    /// Sum of log q over latents (prior log-density at fallback sites).
    pub log_proposal: f64,
    /// Σ_t [log f − log q] over proposed sites; zero for prior-sampled sites.
    pub log_prior_ratio: f64,
}

impl Execution {
    /// Importance log-weight: likelihood plus prior/proposal ratio.
    pub fn log_weight(&self) -> f64 {
        self.trace.log_likelihood() + self.log_prior_ratio
    }
}

pub fn run_model<'a>(
    model: &dyn Model,
    controller: Controller<'a>,
    rng: &'a mut dyn RngCore,
) -> Result<Execution, TraceError> {
    let expected = model.num_observations();
    if let Controller::Guided { observed, .. } | Controller::Replay { observed, .. } = &controller {
        if observed.len() != expected {
            return Err(TraceError::ObservationCount {
                model: model.name().to_string(),
                expected,
                got: observed.len(),
            });
        }
    }
    let mut ctx = Context::new(controller, rng);
    model.run(&mut ctx).map_err(|e| match e {
        TraceError::ObservationCount { got, .. } => TraceError::ObservationCount {
            model: model.name().to_string(),
            expected,
            got,
        },
        other => other,
    })?;
    let got = ctx.trace.observations.len();
    if got != expected {
        return Err(TraceError::ObservationCount {
            model: model.name().to_string(),
            expected,
            got,
        });
    }
    Ok(Execution {
        trace: ctx.trace,
        log_proposal: ctx.log_proposal,
        log_prior_ratio: ctx.log_ratio,
    })
}

/// Convenience: one prior execution.
pub fn sample_prior(model: &dyn Model, rng: &mut dyn RngCore) -> Result<Trace, TraceError> {
    run_model(model, Controller::PriorSample, rng).map(|e| e.trace)
}

/// Density evaluation of a fixed assignment of latents and observations.
pub fn replay(
    model: &dyn Model,
    values: &ReplayValues,
    observed: &[f64],
) -> Result<Trace, TraceError> {
    // replay never draws; any stream will do
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    run_model(model, Controller::Replay { values, observed }, &mut rng).map(|e| e.trace)
}
