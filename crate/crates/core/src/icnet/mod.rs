//! Inference networks: feedforward or LSTM cores, each with or without
//! dot-product attention over previously sampled values.
//!
//! Per-site modules (proposal layer, sample/key/value/query embedders and the
//! site embedding) live in an [`EmbedderRegistry`] keyed by
//! `(address, instance)`. Entries are created lazily during training and
//! never resized afterwards. At inference time an unseen site falls back to
//! the prior and contributes no key/value pair.

mod checkpoint;
mod proposal;
mod session;

pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use proposal::{
    inverse_softplus, proposal_kind_for, softplus, ProposalHead, ProposalKind, ProposalParams,
    STD_FLOOR,
};
pub use session::{trace_log_q, AttentionRecord, Session};

use crate::dist::{Distribution, Family};
use crate::nn::{Activation, AttentionSpec, Dense, Lstm, Mlp, ParamId, ParamStore};
use crate::trace::{Model, SiteKey, Trace, TraceError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("expected {expected} observations, got {got}")]
    ObservationWidth { expected: usize, got: usize },
    #[error("model must have at least one observation")]
    NoObservations,
    #[error("site {key} registered as {registered} but now has a {found} prior")]
    FamilyMismatch {
        key: SiteKey,
        registered: Family,
        found: Family,
    },
    #[error("site {0} has no registry entry")]
    UnseenSite(SiteKey),
    #[error("non-finite log q at {0}")]
    NonFinite(SiteKey),
    #[error("unknown architecture `{0}` (expected ff, ff-att, lstm or lstm-att)")]
    UnknownArchitecture(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("network is incompatible with model: {0}")]
    Incompatible(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Core {
    Feedforward,
    Lstm,
}

/// One of the four compared architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    FfNoAtt,
    FfAtt,
    LstmNoAtt,
    LstmAtt,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::FfNoAtt,
        Architecture::FfAtt,
        Architecture::LstmNoAtt,
        Architecture::LstmAtt,
    ];

    pub fn core(self) -> Core {
        match self {
            Architecture::FfNoAtt | Architecture::FfAtt => Core::Feedforward,
            Architecture::LstmNoAtt | Architecture::LstmAtt => Core::Lstm,
        }
    }

    pub fn attention(self) -> bool {
        matches!(self, Architecture::FfAtt | Architecture::LstmAtt)
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::FfNoAtt => "ff",
            Architecture::FfAtt => "ff-att",
            Architecture::LstmNoAtt => "lstm",
            Architecture::LstmAtt => "lstm-att",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Architecture::FfNoAtt => "FF w/o ATT",
            Architecture::FfAtt => "FF w/ ATT",
            Architecture::LstmNoAtt => "LSTM w/o ATT",
            Architecture::LstmAtt => "LSTM w/ ATT",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = NetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| NetError::UnknownArchitecture(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchitectureConfig {
    pub architecture: Architecture,
    pub obs_embed_dim: usize,
    pub obs_hidden: Vec<usize>,
    pub sample_embed_dim: usize,
    pub lstm_hidden_dim: usize,
    pub query_hidden: usize,
    pub proposal_hidden: usize,
    pub site_embed_dim: usize,
    pub attention: AttentionSpec,
    /// Mixture components for Normal-prior sites; 1 gives a plain Normal proposal.
    pub normal_components: usize,
    /// Mixture components for Uniform and mixture-prior sites.
    pub mixture_components: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::LstmAtt,
            obs_embed_dim: 64,
            obs_hidden: vec![64, 64],
            sample_embed_dim: 16,
            lstm_hidden_dim: 128,
            query_hidden: 64,
            proposal_hidden: 64,
            site_embed_dim: 8,
            attention: AttentionSpec::default(),
            normal_components: 2,
            mixture_components: 2,
            activation: Activation::Tanh,
            seed: 0,
        }
    }
}

impl ArchitectureConfig {
    pub fn new(architecture: Architecture) -> Self {
        Self {
            architecture,
            ..Self::default()
        }
    }

    fn lstm_input_dim(&self) -> usize {
        let mut d = self.obs_embed_dim + self.sample_embed_dim + 4 * self.site_embed_dim;
        if self.architecture.attention() {
            d += self.attention.output_dim();
        }
        d
    }

    fn proposal_input_dim(&self) -> usize {
        match self.architecture {
            Architecture::FfNoAtt => self.obs_embed_dim,
            Architecture::FfAtt => self.obs_embed_dim + self.attention.output_dim(),
            Architecture::LstmNoAtt | Architecture::LstmAtt => self.lstm_hidden_dim,
        }
    }
}

/// Number of features fed to a site's sample-value embedder.
const SAMPLE_FEATURES: usize = 2;

/// Per-(address, instance) modules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteModules {
    pub key: SiteKey,
    pub family: Family,
    pub kind: ProposalKind,
    pub proposal: Mlp,
    pub sample_embed: Option<Mlp>,
    pub key_embed: Option<Dense>,
    pub value_embed: Option<Dense>,
    pub query_embed: Option<Mlp>,
    pub site_embed: Option<ParamId>,
}

/// The `(address, instance) → embedders` map.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<SiteModules>", into = "Vec<SiteModules>")]
pub struct EmbedderRegistry {
    entries: Vec<SiteModules>,
    index: HashMap<SiteKey, usize>,
}

impl From<Vec<SiteModules>> for EmbedderRegistry {
    fn from(entries: Vec<SiteModules>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.key.clone(), i))
            .collect();
        Self { entries, index }
    }
}

impl From<EmbedderRegistry> for Vec<SiteModules> {
    fn from(r: EmbedderRegistry) -> Self {
        r.entries
    }
}

impl EmbedderRegistry {
    pub fn get(&self, key: &SiteKey) -> Option<&SiteModules> {
        self.index.get(key).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, key: &SiteKey) -> bool {
        self.index.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keys in creation order.
    pub fn keys(&self) -> impl Iterator<Item = &SiteKey> {
        self.entries.iter().map(|e| &e.key)
    }

    pub fn entries(&self) -> &[SiteModules] {
        &self.entries
    }

    fn insert(&mut self, m: SiteModules) {
        self.index.insert(m.key.clone(), self.entries.len());
        self.entries.push(m);
    }
}

/// Fixed per-dimension standardization of observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ObsNormalizer {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    /// Moments of observations across a set of prior traces.
    pub fn from_traces(traces: &[Trace]) -> Self {
        let n = traces.first().map_or(0, |t| t.observations.len());
        let count = traces.len().max(1) as f64;
        let mut mean = vec![0.0; n];
        for t in traces {
            for (m, o) in mean.iter_mut().zip(&t.observations) {
                *m += o.value / count;
            }
        }
        let mut var = vec![0.0; n];
        for t in traces {
            for ((v, o), m) in var.iter_mut().zip(&t.observations).zip(&mean) {
                *v += (o.value - m).powi(2) / count;
            }
        }
        let std = var
            .into_iter()
            .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceNetwork {
    pub config: ArchitectureConfig,
    pub num_observations: usize,
    pub params: ParamStore,
    pub obs_norm: ObsNormalizer,
    pub obs_embed: Mlp,
    pub lstm: Option<Lstm>,
    /// One embedding per distribution family (LSTM cores only).
    pub family_embed: Vec<ParamId>,
    pub registry: EmbedderRegistry,
}

/// FNV-1a, used to derive stable per-site initialization seeds.
fn stable_hash(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl InferenceNetwork {
    pub fn new(
        config: ArchitectureConfig,
        num_observations: usize,
        obs_norm: ObsNormalizer,
    ) -> Result<Self, NetError> {
        if num_observations == 0 {
            return Err(NetError::NoObservations);
        }
        if obs_norm.mean.len() != num_observations {
            return Err(NetError::ObservationWidth {
                expected: num_observations,
                got: obs_norm.mean.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(b"trunk", config.seed));
        let mut params = ParamStore::new();
        let mut widths = vec![num_observations];
        widths.extend(&config.obs_hidden);
        widths.push(config.obs_embed_dim);
        let obs_embed = Mlp::new(
            &mut params,
            "obs",
            &widths,
            config.activation,
            true,
            &mut rng,
        );
        let (lstm, family_embed) = match config.architecture.core() {
            Core::Lstm => {
                let lstm = Lstm::new(
                    &mut params,
                    "lstm",
                    config.lstm_input_dim(),
                    config.lstm_hidden_dim,
                    &mut rng,
                );
                let fams = Family::ALL
                    .iter()
                    .map(|f| {
                        let data = (0..config.site_embed_dim)
                            .map(|_| rand::Rng::random_range(&mut rng, -0.5..0.5))
                            .collect();
                        params.add(
                            format!("family.{}", f.tag()),
                            vec![config.site_embed_dim],
                            data,
                        )
                    })
                    .collect();
                (Some(lstm), fams)
            }
            Core::Feedforward => (None, Vec::new()),
        };
        Ok(Self {
            config,
            num_observations,
            params,
            obs_norm,
            obs_embed,
            lstm,
            family_embed,
            registry: EmbedderRegistry::default(),
        })
    }

    /// Builds a network for `model`, estimating observation standardization
    /// from `pilot` prior traces drawn with a seed derived from the config.
    pub fn for_model(
        config: ArchitectureConfig,
        model: &dyn Model,
        pilot: usize,
    ) -> Result<Self, NetError> {
        let mut traces = Vec::with_capacity(pilot);
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(b"pilot", config.seed));
        for _ in 0..pilot {
            traces.push(crate::trace::sample_prior(model, &mut rng)?);
        }
        let norm = if traces.is_empty() {
            ObsNormalizer::identity(model.num_observations())
        } else {
            ObsNormalizer::from_traces(&traces)
        };
        Self::new(config, model.num_observations(), norm)
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn proposal_kind(&self, family: Family) -> ProposalKind {
        proposal_kind_for(
            family,
            self.config.normal_components,
            self.config.mixture_components,
        )
    }

    /// Creates registry entries for every site of `trace` not yet seen.
    /// Returns how many were created.
    pub fn ensure_sites(&mut self, trace: &Trace) -> Result<usize, NetError> {
        let mut created = 0;
        for e in &trace.entries {
            let key = SiteKey {
                address: e.address.clone(),
                instance: e.instance,
            };
            let family = e.dist.family();
            if let Some(m) = self.registry.get(&key) {
                if m.family != family {
                    return Err(NetError::FamilyMismatch {
                        key,
                        registered: m.family,
                        found: family,
                    });
                }
                continue;
            }
            self.create_site(key, &e.dist);
            created += 1;
        }
        Ok(created)
    }

    fn create_site(&mut self, key: SiteKey, prior: &Distribution) {
        let cfg = &self.config;
        let arch = cfg.architecture;
        let mut seed_bytes = key.address.as_str().as_bytes().to_vec();
        seed_bytes.extend_from_slice(&key.instance.to_le_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&seed_bytes, cfg.seed));
        let name = key.to_string();
        let p = &mut self.params;
        let kind = proposal_kind_for(
            prior.family(),
            cfg.normal_components,
            cfg.mixture_components,
        );

        let proposal = Mlp::new(
            p,
            &format!("{name}.proposal"),
            &[
                cfg.proposal_input_dim(),
                cfg.proposal_hidden,
                kind.num_raw(),
            ],
            cfg.activation,
            false,
            &mut rng,
        );
        // start near the prior: small output weights, prior-matching bias
        let last = *proposal.layers.last().expect("proposal has layers");
        p.data_mut(last.w).iter_mut().for_each(|w| *w *= 0.1);
        let head = ProposalHead::for_prior(prior, kind);
        p.data_mut(last.b)
            .copy_from_slice(&head.prior_matching_raw(prior));

        let needs_sample_embed = arch.attention() || arch.core() == Core::Lstm;
        let sample_embed = needs_sample_embed.then(|| {
            Mlp::new(
                p,
                &format!("{name}.sample"),
                &[SAMPLE_FEATURES, cfg.sample_embed_dim, cfg.sample_embed_dim],
                cfg.activation,
                true,
                &mut rng,
            )
        });
        let (key_embed, value_embed, query_embed) = if arch.attention() {
            let a = cfg.attention;
            (
                Some(Dense::new(
                    p,
                    &format!("{name}.key"),
                    cfg.sample_embed_dim,
                    a.key_dim,
                    &mut rng,
                )),
                Some(Dense::new(
                    p,
                    &format!("{name}.value"),
                    cfg.sample_embed_dim,
                    a.value_dim,
                    &mut rng,
                )),
                Some(Mlp::new(
                    p,
                    &format!("{name}.query"),
                    &[
                        cfg.obs_embed_dim,
                        cfg.query_hidden,
                        a.num_queries * a.key_dim,
                    ],
                    cfg.activation,
                    false,
                    &mut rng,
                )),
            )
        } else {
            (None, None, None)
        };
        let site_embed = (arch.core() == Core::Lstm).then(|| {
            let data = (0..cfg.site_embed_dim)
                .map(|_| rand::Rng::random_range(&mut rng, -0.5..0.5))
                .collect();
            p.add(format!("{name}.site"), vec![cfg.site_embed_dim], data)
        });
        self.registry.insert(SiteModules {
            key,
            family: prior.family(),
            kind,
            proposal,
            sample_embed,
            key_embed,
            value_embed,
            query_embed,
            site_embed,
        });
    }

    /// Checks this network against a model: observation width, and that the
    /// sites the model produces agree in family with registered entries.
    pub fn check_compatible(&self, model: &dyn Model, probe_traces: usize) -> Result<(), NetError> {
        if model.num_observations() != self.num_observations {
            return Err(NetError::Incompatible(format!(
                "model `{}` has {} observations, network expects {}",
                model.name(),
                model.num_observations(),
                self.num_observations
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(b"probe", self.config.seed));
        let mut bad = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..probe_traces {
            let t = crate::trace::sample_prior(model, &mut rng)?;
            for e in &t.entries {
                let key = SiteKey {
                    address: e.address.clone(),
                    instance: e.instance,
                };
                if let Some(m) = self.registry.get(&key) {
                    if m.family != e.dist.family() && !bad.contains(&key) {
                        bad.push(key.clone());
                    }
                }
                seen.insert(key);
            }
        }
        if !self.registry.is_empty() && seen.iter().all(|k| !self.registry.contains(k)) {
            let mut names: Vec<String> = seen.iter().map(|k| k.to_string()).collect();
            names.sort();
            names.truncate(8);
            return Err(NetError::Incompatible(format!(
                "none of the model's sites are registered (e.g. {})",
                names.join(", ")
            )));
        }
        if !bad.is_empty() {
            let names: Vec<String> = bad.iter().map(|k| k.to_string()).collect();
            return Err(NetError::Incompatible(format!(
                "family mismatch at {}",
                names.join(", ")
            )));
        }
        Ok(())
    }
}

/// Input features for a site's sample-value embedder: the value normalized
/// by the prior's coarse scale, and a clipped fine-scale deviation.
pub(crate) fn sample_features(prior: &Distribution, x: f64) -> Vec<f64> {
    let (loc, coarse) = prior.loc_scale();
    let fine = prior.fine_scale().min(coarse);
    vec![
        (x - loc) / coarse,
        ((x - loc) / fine).clamp(-10.0, 10.0) / 10.0,
    ]
}
