//! Training loop: minibatches of prior traces, mean `−log q` loss, Adam.

use crate::icnet::{Checkpoint, CheckpointError, InferenceNetwork, NetError, Session};
use crate::models::ModelConfig;
use crate::nn::{Adam, AdamConfig, ParamGrads};
use crate::par::map_indexed as run_chunks;
use crate::trace::{sample_prior, Model, Trace, TraceError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

/// Traces per gradient chunk. Chunk sums are reduced in order, so results
/// do not depend on the number of worker threads.
const CHUNK: usize = 8;
const MAX_CONSECUTIVE_SKIPS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Network(#[from] NetError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("aborted after {skips} consecutive non-finite batches (last: {last})")]
    Diverged { skips: usize, last: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_traces: u64,
    pub batch_size: usize,
    /// `(trace-count threshold, lr)` pairs; the last threshold not above the
    /// current trace count is in effect. The first threshold must be 0.
    pub lr_schedule: Vec<(u64, f64)>,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Save a checkpoint every this many traces (and at the end).
    pub checkpoint_every: Option<u64>,
    pub checkpoint_path: Option<PathBuf>,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_traces: 600_000,
            batch_size: 128,
            lr_schedule: vec![(0, 1e-3), (200_000, 1e-4), (400_000, 1e-5)],
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_every: None,
            checkpoint_path: None,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.lr_schedule.first().map(|s| s.0) != Some(0) {
            return bad("lr_schedule must start at threshold 0");
        }
        if self.lr_schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return bad("lr_schedule thresholds must be strictly increasing");
        }
        if self
            .lr_schedule
            .iter()
            .any(|s| !(s.1 > 0.0 && s.1.is_finite()))
        {
            return bad("learning rates must be positive and finite");
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be positive");
        }
        Ok(())
    }

    pub fn lr_at(&self, traces_seen: u64) -> f64 {
        self.lr_schedule
            .iter()
            .take_while(|(t, _)| *t <= traces_seen)
            .last()
            .map_or(self.lr_schedule[0].1, |s| s.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub traces_seen: u64,
    pub loss: f64,
    pub lr: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
    /// Batches skipped because of a non-finite loss or gradient.
    pub skipped: Vec<(u64, String)>,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "step,traces_seen,loss,lr";

    /// `step,traces_seen,loss,lr`; wall time is excluded so reruns match.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(s, "{},{},{:.10e},{:e}", r.step, r.traces_seen, r.loss, r.lr);
        }
        s
    }

    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let r = &self.records[range];
        r.iter().map(|x| x.loss).sum::<f64>() / r.len() as f64
    }
}

/// RNG for the prior trace with global index `index`.
pub fn trace_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Mean `−log q` over `traces`. Every site must be registered.
pub fn loss_estimate(net: &InferenceNetwork, traces: &[Trace]) -> Result<f64, NetError> {
    let mut total = 0.0;
    for t in traces {
        total -= crate::icnet::trace_log_q(net, t)?;
    }
    Ok(total / traces.len() as f64)
}

fn chunk_grads(
    net: &InferenceNetwork,
    traces: &[Trace],
    seed: f64,
) -> Result<(ParamGrads, f64), NetError> {
    let mut grads = ParamGrads::new();
    let mut loss = 0.0;
    for t in traces {
        let mut s = Session::new(net, &t.observed_values())?;
        let lq = s.score_trace(t)?;
        loss -= s.graph().scalar(lq);
        s.graph().backward_into(lq, seed, &mut grads);
    }
    Ok((grads, loss))
}

pub struct Trainer<'m> {
    pub net: InferenceNetwork,
    pub adam: Adam,
    pub config: TrainConfig,
    pub traces_seen: u64,
    pub steps: u64,
    pub report: TrainReport,
    /// Recorded in checkpoints so inference can rebuild the same model.
    pub model_config: Option<ModelConfig>,
    model: &'m dyn Model,
    consecutive_skips: usize,
    started: Instant,
}

impl<'m> Trainer<'m> {
    pub fn new(
        model: &'m dyn Model,
        net: InferenceNetwork,
        config: TrainConfig,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if net.num_observations != model.num_observations() {
            return Err(NetError::ObservationWidth {
                expected: net.num_observations,
                got: model.num_observations(),
            }
            .into());
        }
        let adam = Adam::new(config.adam);
        Ok(Self {
            net,
            adam,
            config,
            traces_seen: 0,
            steps: 0,
            report: TrainReport::default(),
            model_config: None,
            model,
            consecutive_skips: 0,
            started: Instant::now(),
        })
    }

    /// Continues a run from a checkpoint (optimizer state included if saved).
    pub fn resume(
        model: &'m dyn Model,
        checkpoint: Checkpoint,
        config: TrainConfig,
    ) -> Result<Self, TrainError> {
        checkpoint.check_model(model)?;
        let mut t = Self::new(model, checkpoint.network, config)?;
        if let Some(adam) = checkpoint.optimizer {
            t.adam = adam;
        }
        t.model_config = checkpoint.model_config;
        t.traces_seen = checkpoint.traces_seen;
        t.steps = checkpoint.steps;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(
            self.model.name(),
            self.net.clone(),
            Some(self.adam.clone()),
            self.traces_seen,
            self.steps,
        );
        ck.model_config = self.model_config.clone();
        ck
    }

    fn draw_batch(&self, size: usize) -> Result<Vec<Trace>, TraceError> {
        let base = self.traces_seen;
        let seed = self.config.seed;
        let model = self.model;
        let n_chunks = size.div_ceil(CHUNK);
        let chunks = run_chunks(n_chunks, self.config.threads, |c| {
            (c * CHUNK..((c + 1) * CHUNK).min(size))
                .map(|i| sample_prior(model, &mut trace_rng(seed, base + i as u64)))
                .collect::<Result<Vec<_>, _>>()
        });
        let mut out = Vec::with_capacity(size);
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// One minibatch step. Returns `None` if the batch was skipped.
    pub fn step(&mut self) -> Result<Option<StepRecord>, TrainError> {
        let remaining = self.config.total_traces.saturating_sub(self.traces_seen);
        let size = (self.config.batch_size as u64).min(remaining.max(1)) as usize;
        let batch = self.draw_batch(size)?;
        for t in &batch {
            self.net.ensure_sites(t)?;
        }
        let lr = self.config.lr_at(self.traces_seen);
        let seed = -1.0 / size as f64;
        let net = &self.net;
        let n_chunks = size.div_ceil(CHUNK);
        let results = run_chunks(n_chunks, self.config.threads, |c| {
            chunk_grads(net, &batch[c * CHUNK..((c + 1) * CHUNK).min(size)], seed)
        });
        self.traces_seen += size as u64;
        let mut grads = ParamGrads::new();
        let mut loss = 0.0;
        let mut failure = None;
        for r in results {
            match r {
                Ok((g, l)) => {
                    grads.add_assign(&g);
                    loss += l;
                }
                Err(NetError::NonFinite(key)) => {
                    failure.get_or_insert(format!("non-finite log q at {key}"));
                }
                Err(e) => return Err(e.into()),
            }
        }
        loss /= size as f64;
        if failure.is_none() && !loss.is_finite() {
            failure = Some("non-finite loss".into());
        }
        if failure.is_none() {
            if let Err(e) = self.adam.step(&mut self.net.params, &grads, lr) {
                failure = Some(e.to_string());
            }
        }
        if let Some(reason) = failure {
            self.consecutive_skips += 1;
            self.report.skipped.push((self.traces_seen, reason.clone()));
            if self.consecutive_skips > MAX_CONSECUTIVE_SKIPS {
                return Err(TrainError::Diverged {
                    skips: self.consecutive_skips,
                    last: reason,
                });
            }
            return Ok(None);
        }
        self.consecutive_skips = 0;
        self.steps += 1;
        let rec = StepRecord {
            step: self.steps,
            traces_seen: self.traces_seen,
            loss,
            lr,
            wall_secs: self.started.elapsed().as_secs_f64(),
        };
        self.report.records.push(rec.clone());
        Ok(Some(rec))
    }

    /// Runs until `total_traces`, calling `on_step` after each applied step.
    pub fn train(&mut self, mut on_step: impl FnMut(&StepRecord)) -> Result<(), TrainError> {
        let mut next_ckpt = self
            .config
            .checkpoint_every
            .map(|n| (self.traces_seen / n + 1) * n);
        while self.traces_seen < self.config.total_traces {
            if let Some(rec) = self.step()? {
                on_step(&rec);
            }
            if let (Some(at), Some(every)) = (next_ckpt, self.config.checkpoint_every) {
                if self.traces_seen >= at {
                    self.save_checkpoint()?;
                    next_ckpt = Some((self.traces_seen / every + 1) * every);
                }
            }
        }
        self.save_checkpoint()?;
        Ok(())
    }

    fn save_checkpoint(&self) -> Result<(), TrainError> {
        if let Some(path) = &self.config.checkpoint_path {
            self.checkpoint().save(path)?;
        }
        Ok(())
    }

    pub fn into_network(self) -> InferenceNetwork {
        self.net
    }
}
