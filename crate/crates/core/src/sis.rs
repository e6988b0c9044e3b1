//! Sequential importance sampling with a compiled (or prior) proposal.

use crate::dist::log_sum_exp;
use crate::icnet::{AttentionRecord, InferenceNetwork, NetError, Session};
use crate::par::map_indexed;
use crate::trace::{run_model, Controller, Model, Proposer, Site, Trace, TraceError};
use crate::trainer::trace_rng;
use std::collections::BTreeSet;
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum SisError {
    #[error("need at least one sample (K = {0})")]
    NoSamples(usize),
    #[error("every sample has zero weight; ESS is undefined")]
    Degenerate,
    #[error("non-finite log weight {0}")]
    NonFinite(f64),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Network(#[from] NetError),
}

/// Proposes nothing: every site falls back to its prior.
struct PriorProposer;

impl Proposer for PriorProposer {
    fn propose(
        &mut self,
        _: &Site,
        _: &crate::dist::Distribution,
    ) -> Result<Option<crate::dist::Distribution>, TraceError> {
        Ok(None)
    }

    fn record(
        &mut self,
        _: &Site,
        _: &crate::dist::Distribution,
        _: f64,
    ) -> Result<(), TraceError> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct WeightedSample {
    pub trace: Trace,
    pub log_weight: f64,
    /// `Σ log q` over latents (prior density at fallback sites).
    pub log_q: f64,
}

#[derive(Debug, Clone)]
pub struct WeightedSampleSet {
    pub samples: Vec<WeightedSample>,
    pub observed: Vec<f64>,
}

/// ESS `(Σw)² / Σw²` from log-weights, shifting by the maximum first.
pub fn ess(log_weights: &[f64]) -> Result<f64, SisError> {
    if log_weights.is_empty() {
        return Err(SisError::NoSamples(0));
    }
    if let Some(bad) = log_weights
        .iter()
        .find(|w| w.is_nan() || **w == f64::INFINITY)
    {
        return Err(SisError::NonFinite(*bad));
    }
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(SisError::Degenerate);
    }
    let (mut s1, mut s2) = (0.0, 0.0);
    for w in log_weights {
        let e = (w - max).exp();
        s1 += e;
        s2 += e * e;
    }
    Ok((s1 * s1 / s2).clamp(1.0, log_weights.len() as f64))
}

/// Self-normalized weights from log-weights.
pub fn normalize(log_weights: &[f64]) -> Result<Vec<f64>, SisError> {
    let z = log_sum_exp(log_weights);
    if !z.is_finite() {
        return Err(if z == f64::NEG_INFINITY {
            SisError::Degenerate
        } else {
            SisError::NonFinite(z)
        });
    }
    Ok(log_weights.iter().map(|w| (w - z).exp()).collect())
}

impl WeightedSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.log_weight).collect()
    }

    pub fn normalized_weights(&self) -> Result<Vec<f64>, SisError> {
        normalize(&self.log_weights())
    }

    pub fn ess(&self) -> Result<f64, SisError> {
        ess(&self.log_weights())
    }

    /// Self-normalized estimate of `E[g(x)]`.
    pub fn expectation<F>(&self, g: F) -> Result<Vec<f64>, SisError>
    where
        F: Fn(&Trace) -> Vec<f64>,
    {
        posterior_expectation(self, g)
    }

    /// Values of latent `address#instance` with their normalized weights;
    /// traces lacking the site are skipped.
    pub fn marginal(&self, address: &str, instance: u32) -> Result<(Vec<f64>, Vec<f64>), SisError> {
        let w = self.normalized_weights()?;
        let mut xs = Vec::new();
        let mut ws = Vec::new();
        for (s, wi) in self.samples.iter().zip(w) {
            if let Some(v) = s.trace.value(address, instance) {
                xs.push(v);
                ws.push(wi);
            }
        }
        Ok((xs, ws))
    }

    /// One row per sample: `log_weight` then one column per latent site
    /// (`address#instance`, sorted); empty where a trace lacks the site.
    pub fn to_csv(&self) -> String {
        let cols: BTreeSet<String> = self
            .samples
            .iter()
            .flat_map(|s| {
                s.trace
                    .entries
                    .iter()
                    .map(|e| format!("{}#{}", e.address, e.instance))
            })
            .collect();
        let mut out = String::from("log_weight");
        for c in &cols {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for s in &self.samples {
            let _ = write!(out, "{:?}", s.log_weight);
            for c in &cols {
                out.push(',');
                let (a, i) = c.rsplit_once('#').expect("column has #");
                if let Some(v) = s.trace.value(a, i.parse().expect("instance")) {
                    let _ = write!(out, "{v:?}");
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn posterior_expectation<F>(set: &WeightedSampleSet, g: F) -> Result<Vec<f64>, SisError>
where
    F: Fn(&Trace) -> Vec<f64>,
{
    let w = set.normalized_weights()?;
    let mut acc: Vec<f64> = Vec::new();
    for (s, wi) in set.samples.iter().zip(w) {
        let v = g(&s.trace);
        if acc.is_empty() {
            acc = vec![0.0; v.len()];
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += wi * x;
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SisOptions {
    pub k: usize,
    pub seed: u64,
    pub threads: usize,
}

impl SisOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            threads: 1,
        }
    }
}

/// One guided execution; `net = None` proposes from the prior everywhere.
pub fn guided_sample(
    model: &dyn Model,
    net: Option<&InferenceNetwork>,
    observed: &[f64],
    rng: &mut dyn rand::RngCore,
) -> Result<WeightedSample, SisError> {
    let exec = match net {
        Some(net) => {
            let mut session = Session::new(net, observed)?;
            run_model(
                model,
                Controller::Guided {
                    proposer: &mut session,
                    observed,
                },
                rng,
            )?
        }
        None => run_model(
            model,
            Controller::Guided {
                proposer: &mut PriorProposer,
                observed,
            },
            rng,
        )?,
    };
    let log_weight = exec.log_weight();
    if log_weight.is_nan() || log_weight == f64::INFINITY {
        return Err(SisError::NonFinite(log_weight));
    }
    Ok(WeightedSample {
        log_weight,
        log_q: exec.log_proposal,
        trace: exec.trace,
    })
}

/// `K` guided executions. Particle `k` uses stream `k` of the seed, so the
/// result does not depend on the thread count.
pub fn run_guided(
    model: &dyn Model,
    net: Option<&InferenceNetwork>,
    observed: &[f64],
    opts: &SisOptions,
) -> Result<WeightedSampleSet, SisError> {
    if opts.k < 1 {
        return Err(SisError::NoSamples(opts.k));
    }
    let samples = map_indexed(opts.k, opts.threads, |k| {
        guided_sample(model, net, observed, &mut trace_rng(opts.seed, k as u64))
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(WeightedSampleSet {
        samples,
        observed: observed.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EssRow {
    pub observation: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EssReport {
    pub rows: Vec<EssRow>,
    pub repeats: usize,
    pub k: usize,
}

impl EssReport {
    /// Mean over observations of the per-observation mean ESS.
    pub fn overall_mean(&self) -> f64 {
        self.rows.iter().map(|r| r.mean).sum::<f64>() / self.rows.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("observation,mean_ess,std_ess\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.10},{:.10}", r.observation, r.mean, r.std);
        }
        s
    }
}

/// Repeats SIS `repeats` times with `K` particles for each observation and
/// summarizes the ESS. Repeat `r` of observation `i` uses seed stream
/// `seed + i·repeats + r`.
pub fn ess_report(
    model: &dyn Model,
    net: Option<&InferenceNetwork>,
    observations: &[Vec<f64>],
    repeats: usize,
    opts: &SisOptions,
) -> Result<EssReport, SisError> {
    if repeats == 0 {
        return Err(SisError::NoSamples(0));
    }
    let mut rows = Vec::with_capacity(observations.len());
    for (i, y) in observations.iter().enumerate() {
        let mut vals = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let o = SisOptions {
                seed: opts.seed.wrapping_add((i * repeats + r) as u64),
                ..*opts
            };
            vals.push(run_guided(model, net, y, &o)?.ess()?);
        }
        let mean = vals.iter().sum::<f64>() / repeats as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / repeats as f64;
        rows.push(EssRow {
            observation: i,
            mean,
            std: var.sqrt(),
        });
    }
    Ok(EssReport {
        rows,
        repeats,
        k: opts.k,
    })
}

/// Guided traces with the attention weights used at each site.
pub fn collect_attention(
    model: &dyn Model,
    net: &InferenceNetwork,
    observed: &[f64],
    runs: usize,
    seed: u64,
) -> Result<Vec<Vec<AttentionRecord>>, SisError> {
    let mut out = Vec::with_capacity(runs);
    for r in 0..runs {
        let mut session = Session::new(net, observed)?.with_attention_log();
        let mut rng = trace_rng(seed, r as u64);
        run_model(
            model,
            Controller::Guided {
                proposer: &mut session,
                observed,
            },
            &mut rng,
        )?;
        out.push(session.take_attention_log());
    }
    Ok(out)
}

/// Weighted histogram over `[lo, hi)` with `bins` equal bins; values outside
/// are dropped. Returns per-bin weight totals.
pub fn weighted_histogram(
    values: &[f64],
    weights: &[f64],
    lo: f64,
    hi: f64,
    bins: usize,
) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let width = (hi - lo) / bins as f64;
    for (v, w) in values.iter().zip(weights) {
        if *v >= lo && *v < hi {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            h[b] += w;
        }
    }
    h
}
