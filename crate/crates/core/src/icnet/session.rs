use super::{sample_features, Core, InferenceNetwork, NetError, ProposalHead, SiteModules};
use crate::dist::Distribution;
use crate::nn::{Graph, LstmState, ParamId, Var};
use crate::trace::{Proposer, Site, SiteKey, Trace, TraceError};

/// Attention weights used when proposing at one site.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub site: SiteKey,
    /// Previously sampled sites, in order; one column of `weights` each.
    pub attended: Vec<SiteKey>,
    pub num_queries: usize,
    /// Row-major `num_queries × attended.len()`.
    pub weights: Vec<f64>,
}

impl AttentionRecord {
    /// Weight on each attended site averaged over queries.
    pub fn mean_weights(&self) -> Vec<f64> {
        let n = self.attended.len();
        let mut out = vec![0.0; n];
        for q in 0..self.num_queries {
            for (o, w) in out.iter_mut().zip(&self.weights[q * n..(q + 1) * n]) {
                *o += w / self.num_queries as f64;
            }
        }
        out
    }
}

struct Previous {
    sample_embed: Var,
    site_embed: Option<ParamId>,
    family: usize,
}

/// One forward pass of an inference network over a single trace.
///
/// A session is driven site by site: [`Session::proposal_raw`] computes the
/// raw proposal outputs for the next site, then [`Session::observe_value`]
/// feeds the value actually drawn there back into the network state. The
/// session implements [`Proposer`], so it can guide a model execution.
pub struct Session<'n> {
    net: &'n InferenceNetwork,
    graph: Graph<'n>,
    obs: Var,
    lstm_state: Option<LstmState>,
    previous: Option<Previous>,
    keys: Vec<Var>,
    values: Vec<Var>,
    key_sites: Vec<SiteKey>,
    /// Raw outputs for the site most recently proposed.
    pending: Option<(SiteKey, Var)>,
    attention_log: Option<Vec<AttentionRecord>>,
}

impl<'n> Session<'n> {
    pub fn new(net: &'n InferenceNetwork, observed: &[f64]) -> Result<Self, NetError> {
        if observed.len() != net.num_observations {
            return Err(NetError::ObservationWidth {
                expected: net.num_observations,
                got: observed.len(),
            });
        }
        let mut graph = Graph::new(&net.params);
        let y = graph.input(net.obs_norm.apply(observed));
        let obs = net.obs_embed.forward(&mut graph, y);
        let lstm_state = net
            .lstm
            .as_ref()
            .map(|l| LstmState::zeros(&mut graph, l.hidden_dim));
        Ok(Self {
            net,
            graph,
            obs,
            lstm_state,
            previous: None,
            keys: Vec::new(),
            values: Vec::new(),
            key_sites: Vec::new(),
            pending: None,
            attention_log: None,
        })
    }

    /// Keeps attention weights for every proposed site.
    pub fn with_attention_log(mut self) -> Self {
        self.attention_log = Some(Vec::new());
        self
    }

    pub fn attention_log(&self) -> &[AttentionRecord] {
        self.attention_log.as_deref().unwrap_or(&[])
    }

    pub fn take_attention_log(&mut self) -> Vec<AttentionRecord> {
        self.attention_log.take().unwrap_or_default()
    }

    pub fn graph(&self) -> &Graph<'n> {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut Graph<'n> {
        &mut self.graph
    }

    fn modules(&self, key: &SiteKey, prior: &Distribution) -> Option<&'n SiteModules> {
        self.net
            .registry
            .get(key)
            .filter(|m| m.family == prior.family())
    }

    fn attend(&mut self, m: &SiteModules) -> Var {
        let spec = self.net.config.attention;
        if self.keys.is_empty() {
            return self.graph.zeros(spec.output_dim());
        }
        let query_net = m
            .query_embed
            .as_ref()
            .expect("attention site has a query net");
        let q = query_net.forward(&mut self.graph, self.obs);
        let out = self
            .graph
            .attention(q, &self.keys, &self.values, spec.num_queries, spec.scale());
        if let Some(log) = self.attention_log.as_mut() {
            let (nq, w) = self.graph.attention_weights(out).expect("attention node");
            log.push(AttentionRecord {
                site: m.key.clone(),
                attended: self.key_sites.clone(),
                num_queries: nq,
                weights: w.to_vec(),
            });
        }
        out
    }

    /// Raw proposal outputs for the next site, or `None` if the site has no
    /// registry entry (or one of a different family). An unseen site leaves
    /// the network state untouched.
    pub fn proposal_raw(&mut self, key: &SiteKey, prior: &Distribution) -> Option<Var> {
        let m = self.modules(key, prior)?;
        let net = self.net;
        let cfg = &net.config;
        let attention = cfg.architecture.attention();
        let features = match cfg.architecture.core() {
            Core::Feedforward => {
                if attention {
                    let a = self.attend(m);
                    self.graph.concat(&[self.obs, a])
                } else {
                    self.obs
                }
            }
            Core::Lstm => {
                let g = &mut self.graph;
                let d = cfg.site_embed_dim;
                let family = prior.family().index();
                let (prev_sample, prev_site, prev_family) = match &self.previous {
                    Some(p) => {
                        let s = p.sample_embed;
                        let site = match p.site_embed {
                            Some(id) => g.param(id),
                            None => g.zeros(d),
                        };
                        let fam = g.param(net.family_embed[p.family]);
                        (s, site, fam)
                    }
                    None => (g.zeros(cfg.sample_embed_dim), g.zeros(d), g.zeros(d)),
                };
                let cur_site = match m.site_embed {
                    Some(id) => g.param(id),
                    None => g.zeros(d),
                };
                let cur_family = g.param(net.family_embed[family]);
                let mut parts = vec![
                    self.obs,
                    prev_sample,
                    cur_site,
                    prev_site,
                    cur_family,
                    prev_family,
                ];
                if attention {
                    parts.push(self.attend(m));
                }
                let input = self.graph.concat(&parts);
                let lstm = net.lstm.as_ref().expect("lstm core");
                let state = self.lstm_state.expect("lstm state");
                let (h, next) = lstm.step(&mut self.graph, input, state);
                self.lstm_state = Some(next);
                h
            }
        };
        let raw = m.proposal.forward(&mut self.graph, features);
        self.pending = Some((key.clone(), raw));
        Some(raw)
    }

    /// Proposal distribution decoded from `raw`.
    pub fn decode(&self, raw: Var, key: &SiteKey, prior: &Distribution) -> Option<Distribution> {
        let m = self.modules(key, prior)?;
        Some(ProposalHead::for_prior(prior, m.kind).decode(self.graph.value(raw)))
    }

    /// Differentiable `log q(value)` for the most recent proposal.
    pub fn log_q(
        &mut self,
        raw: Var,
        key: &SiteKey,
        prior: &Distribution,
        value: f64,
    ) -> Option<Var> {
        let m = self.modules(key, prior)?;
        let head = ProposalHead::for_prior(prior, m.kind);
        let (lp, grad) = head.log_prob_with_grad(self.graph.value(raw), value);
        Some(self.graph.scalar_fn(raw, lp, grad))
    }

    /// Feeds the value drawn at a site into the network state.
    pub fn observe_value(&mut self, key: &SiteKey, prior: &Distribution, value: f64) {
        self.pending = None;
        let Some(m) = self.modules(key, prior) else {
            return;
        };
        let Some(embed) = m.sample_embed.as_ref() else {
            return;
        };
        let x = self.graph.input(sample_features(prior, value));
        let e = embed.forward(&mut self.graph, x);
        if let (Some(k), Some(v)) = (m.key_embed.as_ref(), m.value_embed.as_ref()) {
            let kv = k.forward(&mut self.graph, e);
            let vv = v.forward(&mut self.graph, e);
            self.keys.push(kv);
            self.values.push(vv);
            self.key_sites.push(key.clone());
        }
        if self.lstm_state.is_some() {
            self.previous = Some(Previous {
                sample_embed: e,
                site_embed: m.site_embed,
                family: prior.family().index(),
            });
        }
    }

    /// Sums `log q` over every latent of `trace`, returning the scalar node.
    /// Every site must already be registered.
    pub fn score_trace(&mut self, trace: &Trace) -> Result<Var, NetError> {
        let mut terms = Vec::with_capacity(trace.entries.len());
        for e in &trace.entries {
            let key = SiteKey {
                address: e.address.clone(),
                instance: e.instance,
            };
            let raw = self
                .proposal_raw(&key, &e.dist)
                .ok_or_else(|| NetError::UnseenSite(key.clone()))?;
            let lq = self
                .log_q(raw, &key, &e.dist, e.value)
                .expect("site registered");
            if !self.graph.scalar(lq).is_finite() {
                return Err(NetError::NonFinite(key));
            }
            terms.push(lq);
            self.observe_value(&key, &e.dist, e.value);
        }
        Ok(if terms.is_empty() {
            self.graph.zeros(1)
        } else {
            self.graph.sum_scalars(&terms)
        })
    }
}

impl Proposer for Session<'_> {
    fn propose(
        &mut self,
        site: &Site,
        prior: &Distribution,
    ) -> Result<Option<Distribution>, TraceError> {
        let key = site.key();
        let Some(raw) = self.proposal_raw(&key, prior) else {
            return Ok(None);
        };
        let q = self.decode(raw, &key, prior).expect("site registered");
        q.validate().map_err(|e| TraceError::Proposal {
            address: site.address.clone(),
            instance: site.instance,
            reason: e.to_string(),
        })?;
        Ok(Some(q))
    }

    fn record(&mut self, site: &Site, prior: &Distribution, value: f64) -> Result<(), TraceError> {
        self.observe_value(&site.key(), prior, value);
        Ok(())
    }
}

/// `Σ log q(x_t | ...)` for a trace under the network, without gradients.
pub fn trace_log_q(net: &InferenceNetwork, trace: &Trace) -> Result<f64, NetError> {
    let mut s = Session::new(net, &trace.observed_values())?;
    let v = s.score_trace(trace)?;
    Ok(s.graph.scalar(v))
}
