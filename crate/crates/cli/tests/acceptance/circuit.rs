//! Fault diagnosis on the reference band-pass filter.

use crate::{train, Outcome};
use icattn::icnet::{Architecture, InferenceNetwork};
use icattn::models::{CircuitConfig, CircuitModel};
use icattn::sis::{ess_report, run_guided, SisOptions};
use icattn::trace::sample_prior;
use icattn::trainer::trace_rng;

pub const CRITERIA: [&str; 2] = ["circuit-ess-ordering", "circuit-reconstruction"];

const TRACES: u64 = 100_000;
const OBSERVATIONS: u64 = 100;
const K: usize = 20;
const REPEATS: usize = 5;
const OBS_SEED: u64 = 777;

/// Fraction of proposal sweeps whose RMS deviation from the observed
/// response over mid-band frequencies is within 3 noise stds.
fn reconstruction(model: &CircuitModel, net: &InferenceNetwork, ys: &[Vec<f64>]) -> f64 {
    let c = &model.config;
    let mid: Vec<usize> = model
        .freqs()
        .iter()
        .enumerate()
        .filter(|(_, f)| (**f - c.filter.f0).abs() <= c.filter.bandwidth / 2.0)
        .map(|(i, _)| i)
        .collect();
    let mut within = 0;
    let mut total = 0;
    for (i, y) in ys.iter().enumerate() {
        let set = run_guided(model, Some(net), y, &SisOptions::new(K, 5000 + i as u64)).unwrap();
        for s in &set.samples {
            total += 1;
            // sweeps with non-physical values have no response
            let Ok(r) = model.response_for(&s.trace) else {
                continue;
            };
            let ms = mid
                .iter()
                .map(|&j| (r.vout[j].re - y[2 * j]).powi(2) + (r.vout[j].im - y[2 * j + 1]).powi(2))
                .sum::<f64>()
                / (2 * mid.len()) as f64;
            if ms.sqrt() <= 3.0 * c.noise_std {
                within += 1;
            }
        }
    }
    within as f64 / total as f64
}

pub fn run() -> Vec<(&'static str, Outcome)> {
    let model = CircuitModel::new(CircuitConfig::default()).unwrap();
    let ys: Vec<Vec<f64>> = (0..OBSERVATIONS)
        .map(|i| {
            sample_prior(&model, &mut trace_rng(OBS_SEED, i))
                .unwrap()
                .observed_values()
        })
        .collect();
    let mut ess = Vec::new();
    let mut recon = Vec::new();
    for arch in Architecture::ALL {
        let net = train(&model, arch, TRACES);
        let opts = SisOptions {
            threads: crate::threads(),
            ..SisOptions::new(K, 0)
        };
        let e = ess_report(&model, Some(&net), &ys, REPEATS, &opts)
            .unwrap()
            .overall_mean();
        let r = reconstruction(&model, &net, &ys);
        eprintln!("  {arch}: mean ESS {e:.3}, sweeps within 3 std {r:.3}");
        ess.push((arch, e));
        recon.push((arch, r));
    }
    let get = |v: &[(Architecture, f64)], a| v.iter().find(|x| x.0 == a).unwrap().1;
    let (ff, ff_att, lstm, lstm_att) = (
        get(&ess, Architecture::FfNoAtt),
        get(&ess, Architecture::FfAtt),
        get(&ess, Architecture::LstmNoAtt),
        get(&ess, Architecture::LstmAtt),
    );
    let detail = format!(
        "mean ESS (K={K}, {REPEATS} repeats, {OBSERVATIONS} observations) FF w/ ATT {ff_att:.2} > LSTM w/o ATT {lstm:.2} > FF w/o ATT {ff:.2} wanted; LSTM w/ ATT {lstm_att:.2}"
    );
    let ordering = if ff_att > lstm && lstm > ff {
        Ok(detail)
    } else {
        Err(detail)
    };
    let (ra, rl) = (
        get(&recon, Architecture::FfAtt),
        get(&recon, Architecture::LstmAtt),
    );
    let detail = format!(
        "mid-band sweeps within 3 noise std: FF w/ ATT {ra:.3}, LSTM w/ ATT {rl:.3} (want >= 0.80); FF w/o ATT {:.3}, LSTM w/o ATT {:.3}",
        get(&recon, Architecture::FfNoAtt),
        get(&recon, Architecture::LstmNoAtt)
    );
    let reconstruction = if ra >= 0.8 && rl >= 0.8 {
        Ok(detail)
    } else {
        Err(detail)
    };
    vec![(CRITERIA[0], ordering), (CRITERIA[1], reconstruction)]
}
