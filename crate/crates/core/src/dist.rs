//! Scalar probability distributions for sample/observe sites and proposals.

use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;

/// `0.5 * ln(2π)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DistError {
    #[error("invalid {family} parameters: {reason}")]
    InvalidParameters { family: Family, reason: String },
    #[error("unknown distribution tag `{0}`")]
    UnknownTag(String),
    #[error("wrong parameter count for {family}: got {got}")]
    ParamCount { family: Family, got: usize },
}

/// Distribution family tag, used for site typing and embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    Normal,
    Uniform,
    Bernoulli,
    MixtureNormalUniform,
    MixtureOfNormals,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Normal,
        Family::Uniform,
        Family::Bernoulli,
        Family::MixtureNormalUniform,
        Family::MixtureOfNormals,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn tag(self) -> &'static str {
        match self {
            Family::Normal => "normal",
            Family::Uniform => "uniform",
            Family::Bernoulli => "bernoulli",
            Family::MixtureNormalUniform => "mix_normal_uniform",
            Family::MixtureOfNormals => "mix_normals",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self, DistError> {
        Family::ALL
            .into_iter()
            .find(|f| f.tag() == tag)
            .ok_or_else(|| DistError::UnknownTag(tag.to_string()))
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// A scalar distribution. Bernoulli outcomes are encoded as `0.0` / `1.0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Distribution {
    Normal {
        mean: f64,
        std: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    Bernoulli {
        p: f64,
    },
    MixtureNormalUniform {
        weight_normal: f64,
        mean: f64,
        std: f64,
        low: f64,
        high: f64,
    },
    /// Proposal-side family with full support on the real line.
    MixtureOfNormals {
        weights: Vec<f64>,
        means: Vec<f64>,
        stds: Vec<f64>,
    },
}

fn invalid(family: Family, reason: impl Into<String>) -> DistError {
    DistError::InvalidParameters {
        family,
        reason: reason.into(),
    }
}

pub fn normal_log_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - HALF_LN_2PI
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl Distribution {
    pub fn normal(mean: f64, std: f64) -> Result<Self, DistError> {
        let d = Distribution::Normal { mean, std };
        d.validate()?;
        Ok(d)
    }

    pub fn uniform(low: f64, high: f64) -> Result<Self, DistError> {
        let d = Distribution::Uniform { low, high };
        d.validate()?;
        Ok(d)
    }

    pub fn bernoulli(p: f64) -> Result<Self, DistError> {
        let d = Distribution::Bernoulli { p };
        d.validate()?;
        Ok(d)
    }

    pub fn mixture_normal_uniform(
        weight_normal: f64,
        mean: f64,
        std: f64,
        low: f64,
        high: f64,
    ) -> Result<Self, DistError> {
        let d = Distribution::MixtureNormalUniform {
            weight_normal,
            mean,
            std,
            low,
            high,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn mixture_of_normals(
        weights: Vec<f64>,
        means: Vec<f64>,
        stds: Vec<f64>,
    ) -> Result<Self, DistError> {
        let d = Distribution::MixtureOfNormals {
            weights,
            means,
            stds,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn family(&self) -> Family {
        match self {
            Distribution::Normal { .. } => Family::Normal,
            Distribution::Uniform { .. } => Family::Uniform,
            Distribution::Bernoulli { .. } => Family::Bernoulli,
            Distribution::MixtureNormalUniform { .. } => Family::MixtureNormalUniform,
            Distribution::MixtureOfNormals { .. } => Family::MixtureOfNormals,
        }
    }

    pub fn validate(&self) -> Result<(), DistError> {
        let fam = self.family();
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(invalid(fam, format!("{what} must be finite")))
            }
        };
        match *self {
            Distribution::Normal { mean, std } => {
                finite(mean, "mean")?;
                if !(std > 0.0 && std.is_finite()) {
                    return Err(invalid(fam, "std must be positive"));
                }
            }
            Distribution::Uniform { low, high } => {
                finite(low, "low")?;
                finite(high, "high")?;
                if high <= low {
                    return Err(invalid(fam, "high must exceed low"));
                }
            }
            Distribution::Bernoulli { p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(invalid(fam, "p must lie in [0, 1]"));
                }
            }
            Distribution::MixtureNormalUniform {
                weight_normal,
                mean,
                std,
                low,
                high,
            } => {
                if !(0.0..=1.0).contains(&weight_normal) {
                    return Err(invalid(fam, "weight_normal must lie in [0, 1]"));
                }
                finite(mean, "mean")?;
                finite(low, "low")?;
                finite(high, "high")?;
                if !(std > 0.0 && std.is_finite()) {
                    return Err(invalid(fam, "std must be positive"));
                }
                if high <= low {
                    return Err(invalid(fam, "high must exceed low"));
                }
            }
            Distribution::MixtureOfNormals {
                ref weights,
                ref means,
                ref stds,
            } => {
                if weights.is_empty() || weights.len() != means.len() || weights.len() != stds.len()
                {
                    return Err(invalid(
                        fam,
                        "component vectors must be non-empty and aligned",
                    ));
                }
                if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
                    return Err(invalid(fam, "weights must be non-negative"));
                }
                if (weights.iter().sum::<f64>() - 1.0).abs() > WEIGHT_SUM_TOL {
                    return Err(invalid(fam, "weights must sum to 1"));
                }
                for &m in means {
                    finite(m, "mean")?;
                }
                if stds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    return Err(invalid(fam, "stds must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Distribution::Normal { mean, std } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + std * z
            }
            Distribution::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            Distribution::Bernoulli { p } => {
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
            Distribution::MixtureNormalUniform {
                weight_normal,
                mean,
                std,
                low,
                high,
            } => {
                if rng.random::<f64>() < weight_normal {
                    let z: f64 = StandardNormal.sample(rng);
                    mean + std * z
                } else {
                    low + (high - low) * rng.random::<f64>()
                }
            }
            Distribution::MixtureOfNormals {
                ref weights,
                ref means,
                ref stds,
            } => {
                let u = rng.random::<f64>();
                let mut acc = 0.0;
                let mut k = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                let z: f64 = StandardNormal.sample(rng);
                means[k] + stds[k] * z
            }
        }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        match *self {
            Distribution::Normal { mean, std } => normal_log_pdf(x, mean, std),
            Distribution::Uniform { low, high } => {
                if x >= low && x <= high {
                    -(high - low).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Distribution::Bernoulli { p } => {
                if x == 1.0 {
                    p.ln()
                } else if x == 0.0 {
                    (-p).ln_1p()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Distribution::MixtureNormalUniform {
                weight_normal,
                mean,
                std,
                low,
                high,
            } => {
                let normal = weight_normal.ln() + normal_log_pdf(x, mean, std);
                let uniform = if x >= low && x <= high {
                    (-weight_normal).ln_1p() - (high - low).ln()
                } else {
                    f64::NEG_INFINITY
                };
                log_sum_exp(&[normal, uniform])
            }
            Distribution::MixtureOfNormals {
                ref weights,
                ref means,
                ref stds,
            } => {
                let mut terms = [0.0f64; 8];
                if weights.len() <= terms.len() {
                    for k in 0..weights.len() {
                        terms[k] = weights[k].ln() + normal_log_pdf(x, means[k], stds[k]);
                    }
                    log_sum_exp(&terms[..weights.len()])
                } else {
                    let terms: Vec<f64> = (0..weights.len())
                        .map(|k| weights[k].ln() + normal_log_pdf(x, means[k], stds[k]))
                        .collect();
                    log_sum_exp(&terms)
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::Normal { mean, .. } => mean,
            Distribution::Uniform { low, high } => 0.5 * (low + high),
            Distribution::Bernoulli { p } => p,
            Distribution::MixtureNormalUniform {
                weight_normal,
                mean,
                low,
                high,
                ..
            } => weight_normal * mean + (1.0 - weight_normal) * 0.5 * (low + high),
            Distribution::MixtureOfNormals {
                ref weights,
                ref means,
                ..
            } => weights.iter().zip(means).map(|(w, m)| w * m).sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Distribution::Normal { std, .. } => std * std,
            Distribution::Uniform { low, high } => (high - low).powi(2) / 12.0,
            Distribution::Bernoulli { p } => p * (1.0 - p),
            Distribution::MixtureNormalUniform {
                weight_normal,
                mean,
                std,
                low,
                high,
            } => {
                let mu = self.mean();
                let um = 0.5 * (low + high);
                let uv = (high - low).powi(2) / 12.0;
                weight_normal * (std * std + (mean - mu).powi(2))
                    + (1.0 - weight_normal) * (uv + (um - mu).powi(2))
            }
            Distribution::MixtureOfNormals {
                ref weights,
                ref means,
                ref stds,
            } => {
                let mu = self.mean();
                (0..weights.len())
                    .map(|k| weights[k] * (stds[k] * stds[k] + (means[k] - mu).powi(2)))
                    .sum()
            }
        }
    }

    /// Location and scale used to normalize values at a site with this prior.
    pub fn loc_scale(&self) -> (f64, f64) {
        match *self {
            Distribution::Normal { mean, std } => (mean, std),
            Distribution::Uniform { low, high } => (0.5 * (low + high), 0.5 * (high - low)),
            Distribution::Bernoulli { .. } => (0.5, 0.5),
            Distribution::MixtureNormalUniform {
                mean, low, high, ..
            } => (mean, 0.5 * (high - low).max(f64::MIN_POSITIVE)),
            Distribution::MixtureOfNormals { .. } => (self.mean(), self.variance().sqrt()),
        }
    }

    /// Finest natural length scale of the distribution (the tight component for mixtures).
    pub fn fine_scale(&self) -> f64 {
        match *self {
            Distribution::MixtureNormalUniform { std, .. } => std,
            Distribution::MixtureOfNormals { ref stds, .. } => {
                stds.iter().copied().fold(f64::INFINITY, f64::min)
            }
            _ => self.loc_scale().1,
        }
    }

    /// Flat parameter list, in the order used by the text trace format.
    pub fn params(&self) -> Vec<f64> {
        match self {
            Distribution::Normal { mean, std } => vec![*mean, *std],
            Distribution::Uniform { low, high } => vec![*low, *high],
            Distribution::Bernoulli { p } => vec![*p],
            Distribution::MixtureNormalUniform {
                weight_normal,
                mean,
                std,
                low,
                high,
            } => vec![*weight_normal, *mean, *std, *low, *high],
            Distribution::MixtureOfNormals {
                weights,
                means,
                stds,
            } => weights.iter().chain(means).chain(stds).copied().collect(),
        }
    }

    pub fn from_params(family: Family, p: &[f64]) -> Result<Self, DistError> {
        let count = |n: usize| {
            if p.len() == n {
                Ok(())
            } else {
                Err(DistError::ParamCount {
                    family,
                    got: p.len(),
                })
            }
        };
        match family {
            Family::Normal => {
                count(2)?;
                Distribution::normal(p[0], p[1])
            }
            Family::Uniform => {
                count(2)?;
                Distribution::uniform(p[0], p[1])
            }
            Family::Bernoulli => {
                count(1)?;
                Distribution::bernoulli(p[0])
            }
            Family::MixtureNormalUniform => {
                count(5)?;
                Distribution::mixture_normal_uniform(p[0], p[1], p[2], p[3], p[4])
            }
            Family::MixtureOfNormals => {
                if p.is_empty() || !p.len().is_multiple_of(3) {
                    return Err(DistError::ParamCount {
                        family,
                        got: p.len(),
                    });
                }
                let k = p.len() / 3;
                Distribution::mixture_of_normals(
                    p[..k].to_vec(),
                    p[k..2 * k].to_vec(),
                    p[2 * k..].to_vec(),
                )
            }
        }
    }
}

/// Standard normal CDF via the complementary error function.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

// W. J. Cody's rational approximation, |rel err| < 1.2e-7 over the real line.
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t
        * (-z * z - 1.265_512_23
            + t * (1.000_023_68
                + t * (0.374_091_96
                    + t * (0.096_784_18
                        + t * (-0.186_288_06
                            + t * (0.278_868_07
                                + t * (-1.135_203_98
                                    + t * (1.488_515_87
                                        + t * (-0.822_152_23 + t * 0.170_872_77)))))))))
            .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}
