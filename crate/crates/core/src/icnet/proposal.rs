//! Proposal heads: decoding raw network outputs into proposal distributions
//! and scoring values under them, with analytic gradients.

use crate::dist::{Distribution, Family};
use serde::{Deserialize, Serialize};

/// Floor added to decoded standard deviations (in units of the component scale).
pub const STD_FLOOR: f64 = 1e-6;
const BERNOULLI_CLAMP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProposalKind {
    Normal,
    Bernoulli,
    Mixture(usize),
}

impl ProposalKind {
    pub fn num_raw(self) -> usize {
        match self {
            ProposalKind::Normal => 2,
            ProposalKind::Bernoulli => 1,
            ProposalKind::Mixture(k) => 3 * k,
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Proposal parameters in network-output units.
#[derive(Debug, Clone, PartialEq)]
pub enum ProposalParams {
    Normal {
        mean: f64,
        raw_std: f64,
    },
    Bernoulli {
        logit: f64,
    },
    Mixture {
        logits: Vec<f64>,
        means: Vec<f64>,
        raw_stds: Vec<f64>,
    },
}

/// Decoding context for one site: the proposal family plus the location and
/// per-component length scales taken from the site's current prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalHead {
    pub kind: ProposalKind,
    pub loc: f64,
    pub scales: Vec<f64>,
}

impl ProposalHead {
    /// Head for a site whose prior is `prior`. Mixture components get length
    /// scales spaced geometrically from the prior's finest to coarsest scale.
    pub fn for_prior(prior: &Distribution, kind: ProposalKind) -> Self {
        let (loc, coarse) = prior.loc_scale();
        let fine = prior.fine_scale().min(coarse);
        let scales = match kind {
            ProposalKind::Normal | ProposalKind::Bernoulli => vec![coarse],
            ProposalKind::Mixture(1) => vec![coarse],
            ProposalKind::Mixture(k) => (0..k)
                .map(|j| {
                    let t = j as f64 / (k - 1) as f64;
                    fine.powf(1.0 - t) * coarse.powf(t)
                })
                .collect(),
        };
        Self { kind, loc, scales }
    }

    pub fn split(&self, raw: &[f64]) -> ProposalParams {
        assert_eq!(raw.len(), self.kind.num_raw(), "raw width mismatch");
        match self.kind {
            ProposalKind::Normal => ProposalParams::Normal {
                mean: raw[0],
                raw_std: raw[1],
            },
            ProposalKind::Bernoulli => ProposalParams::Bernoulli { logit: raw[0] },
            ProposalKind::Mixture(k) => ProposalParams::Mixture {
                logits: raw[..k].to_vec(),
                means: raw[k..2 * k].to_vec(),
                raw_stds: raw[2 * k..].to_vec(),
            },
        }
    }

    pub fn decode(&self, raw: &[f64]) -> Distribution {
        match self.split(raw) {
            ProposalParams::Normal { mean, raw_std } => {
                let s = self.scales[0];
                Distribution::Normal {
                    mean: self.loc + s * mean,
                    std: s * (softplus(raw_std) + STD_FLOOR),
                }
            }
            ProposalParams::Bernoulli { logit } => Distribution::Bernoulli {
                p: sigmoid(logit).clamp(BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP),
            },
            ProposalParams::Mixture {
                logits,
                means,
                raw_stds,
            } => {
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                Distribution::MixtureOfNormals {
                    weights: exps.iter().map(|e| e / z).collect(),
                    means: means
                        .iter()
                        .zip(&self.scales)
                        .map(|(m, s)| self.loc + s * m)
                        .collect(),
                    stds: raw_stds
                        .iter()
                        .zip(&self.scales)
                        .map(|(r, s)| s * (softplus(*r) + STD_FLOOR))
                        .collect(),
                }
            }
        }
    }

    /// `log q(x)` and its gradient w.r.t. the raw outputs. The value is
    /// exactly `self.decode(raw).log_pdf(x)`.
    pub fn log_prob_with_grad(&self, raw: &[f64], x: f64) -> (f64, Vec<f64>) {
        let dist = self.decode(raw);
        let lp = dist.log_pdf(x);
        let mut grad = vec![0.0; raw.len()];
        match (&dist, self.kind) {
            (Distribution::Normal { mean, std }, ProposalKind::Normal) => {
                let s = self.scales[0];
                let z = (x - mean) / std;
                grad[0] = z / std * s;
                grad[1] = (z * z - 1.0) / std * s * sigmoid(raw[1]);
            }
            (Distribution::Bernoulli { p }, ProposalKind::Bernoulli) => {
                let unclamped = sigmoid(raw[0]);
                if unclamped == *p {
                    grad[0] = if x == 1.0 { 1.0 - p } else { -p };
                }
            }
            (
                Distribution::MixtureOfNormals {
                    weights,
                    means,
                    stds,
                },
                ProposalKind::Mixture(k),
            ) => {
                for j in 0..k {
                    let s = self.scales[j];
                    let z = (x - means[j]) / stds[j];
                    let comp = weights[j].ln() + crate::dist::normal_log_pdf(x, means[j], stds[j]);
                    let gamma = if lp.is_finite() {
                        (comp - lp).exp()
                    } else {
                        0.0
                    };
                    grad[j] = gamma - weights[j];
                    grad[k + j] = gamma * z / stds[j] * s;
                    grad[2 * k + j] = gamma * (z * z - 1.0) / stds[j] * s * sigmoid(raw[2 * k + j]);
                }
            }
            _ => unreachable!("decode returns the head's family"),
        }
        (lp, grad)
    }

    /// Raw outputs whose decoded proposal approximates `prior`; used to
    /// initialize the output bias of a new proposal layer.
    pub fn prior_matching_raw(&self, prior: &Distribution) -> Vec<f64> {
        let inv = |std: f64, s: f64| inverse_softplus((std / s - STD_FLOOR).max(1e-12));
        match self.kind {
            ProposalKind::Normal => {
                let (m, sd) = (prior.mean(), prior.variance().sqrt());
                vec![(m - self.loc) / self.scales[0], inv(sd, self.scales[0])]
            }
            ProposalKind::Bernoulli => {
                let p = prior.mean().clamp(1e-6, 1.0 - 1e-6);
                vec![(p / (1.0 - p)).ln()]
            }
            ProposalKind::Mixture(k) => {
                let mut raw = vec![0.0; 3 * k];
                match *prior {
                    Distribution::MixtureNormalUniform {
                        weight_normal,
                        mean,
                        std,
                        low,
                        high,
                    } if k >= 2 => {
                        let wn = weight_normal.clamp(1e-6, 1.0 - 1e-6);
                        raw[0] = wn.ln();
                        raw[1..k].fill(((1.0 - wn) / (k - 1) as f64).ln());
                        raw[k] = (mean - self.loc) / self.scales[0];
                        raw[2 * k] = inv(std, self.scales[0]);
                        let um = 0.5 * (low + high);
                        let usd = (high - low) / 12f64.sqrt();
                        for j in 1..k {
                            raw[k + j] = (um - self.loc) / self.scales[j];
                            raw[2 * k + j] = inv(usd, self.scales[j]);
                        }
                    }
                    _ => {
                        let sd = prior.variance().sqrt();
                        let m = prior.mean();
                        // spread component means symmetrically to break ties
                        for j in 0..k {
                            let offset = if k == 1 {
                                0.0
                            } else {
                                (j as f64 / (k - 1) as f64 - 0.5) * sd
                            };
                            raw[k + j] = (m + offset - self.loc) / self.scales[j];
                            raw[2 * k + j] = inv(sd * 0.9, self.scales[j]);
                        }
                    }
                }
                raw
            }
        }
    }
}

/// Proposal kind paired with each prior family.
pub fn proposal_kind_for(
    family: Family,
    normal_components: usize,
    mixture_components: usize,
) -> ProposalKind {
    match family {
        Family::Bernoulli => ProposalKind::Bernoulli,
        Family::Normal if normal_components <= 1 => ProposalKind::Normal,
        Family::Normal => ProposalKind::Mixture(normal_components),
        Family::Uniform | Family::MixtureNormalUniform | Family::MixtureOfNormals => {
            ProposalKind::Mixture(mixture_components.max(1))
        }
    }
}
