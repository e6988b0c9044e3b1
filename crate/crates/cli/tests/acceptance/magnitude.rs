//! Magnitude task with 20 nuisance latents between x and y.

use crate::{train, Outcome};
use icattn::icnet::{Architecture, InferenceNetwork};
use icattn::models::{MagnitudeConfig, MagnitudeModel};
use icattn::sis::{collect_attention, run_guided, SisOptions};

pub const CRITERIA: [&str; 4] = [
    "magnitude-a-ff-unstructured",
    "magnitude-b-attention-coverage",
    "magnitude-c-attention-ess",
    "attention-weights",
];

const TRACES: u64 = 100_000;
const R2: f64 = 200.0;
const K: usize = 2000;
const ESTIMATES: u64 = 10;
const ATTENTION_RUNS: usize = 100;

struct Eval {
    arch: Architecture,
    coverage: f64,
    mean_ess: f64,
}

/// Fraction of proposal samples inside the sqrt(r2) ± 20% annulus, and the
/// mean ESS over independent estimates.
fn evaluate(model: &MagnitudeModel, net: &InferenceNetwork, arch: Architecture) -> Eval {
    let r0 = R2.sqrt();
    let mut coverage = 0.0;
    let mut total = 0.0;
    for seed in 0..ESTIMATES {
        let set = run_guided(model, Some(net), &[R2], &SisOptions::new(K, seed)).unwrap();
        total += set.ess().unwrap();
        if seed == 0 {
            let inside = set
                .samples
                .iter()
                .filter(|s| {
                    let x = s.trace.value("x", 1).unwrap();
                    let y = s.trace.value("y", 1).unwrap();
                    let r = x.hypot(y);
                    r >= 0.8 * r0 && r <= 1.2 * r0
                })
                .count();
            coverage = inside as f64 / K as f64;
        }
    }
    Eval {
        arch,
        coverage,
        mean_ess: total / ESTIMATES as f64,
    }
}

/// Per query: average weight on `x` and the largest average weight on any
/// nuisance site, when proposing `y`.
fn attention_on_x(model: &MagnitudeModel, net: &InferenceNetwork) -> Vec<(f64, f64)> {
    let runs = collect_attention(model, net, &[R2], ATTENTION_RUNS, 0).unwrap();
    let mut avg: Vec<f64> = Vec::new();
    let mut names = Vec::new();
    let mut nq = 0;
    for records in &runs {
        let rec = records
            .iter()
            .find(|r| r.site.address.as_str() == "y")
            .expect("y is proposed");
        if avg.is_empty() {
            avg = vec![0.0; rec.weights.len()];
            names = rec.attended.clone();
            nq = rec.num_queries;
        }
        for (a, w) in avg.iter_mut().zip(&rec.weights) {
            *a += w / runs.len() as f64;
        }
    }
    let n = names.len();
    (0..nq)
        .map(|q| {
            let row = &avg[q * n..(q + 1) * n];
            let mut on_x = 0.0;
            let mut nuisance: f64 = 0.0;
            for (key, w) in names.iter().zip(row) {
                if key.address.as_str() == "x" {
                    on_x = *w;
                } else {
                    nuisance = nuisance.max(*w);
                }
            }
            (on_x, nuisance)
        })
        .collect()
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn run() -> Vec<(&'static str, Outcome)> {
    let model = MagnitudeModel::new(MagnitudeConfig::default()).unwrap();
    let mut evals = Vec::new();
    let mut attention = Vec::new();
    for arch in Architecture::ALL {
        let net = train(&model, arch, TRACES);
        let e = evaluate(&model, &net, arch);
        eprintln!(
            "  {arch}: coverage {:.3}, mean ESS {:.2}",
            e.coverage, e.mean_ess
        );
        if arch.attention() {
            attention.push((arch, attention_on_x(&model, &net)));
        }
        evals.push(e);
    }
    let get = |a: Architecture| evals.iter().find(|e| e.arch == a).unwrap();
    let (ff, ff_att, lstm, lstm_att) = (
        get(Architecture::FfNoAtt),
        get(Architecture::FfAtt),
        get(Architecture::LstmNoAtt),
        get(Architecture::LstmAtt),
    );

    let a = verdict(
        ff.coverage < 0.40,
        format!(
            "FF w/o ATT annulus coverage {:.3} (want < 0.40)",
            ff.coverage
        ),
    );
    let b = verdict(
        ff_att.coverage > 0.80 && lstm_att.coverage > 0.80,
        format!(
            "annulus coverage FF w/ ATT {:.3}, LSTM w/ ATT {:.3} (want > 0.80)",
            ff_att.coverage, lstm_att.coverage
        ),
    );
    let c = verdict(
        ff_att.mean_ess >= 2.0 * lstm.mean_ess && lstm_att.mean_ess >= 2.0 * lstm.mean_ess,
        format!(
            "mean ESS (K={K}, {ESTIMATES} estimates) FF w/ ATT {:.1}, LSTM w/ ATT {:.1} vs LSTM w/o ATT {:.1} (want >= 2x); FF w/o ATT {:.1}",
            ff_att.mean_ess, lstm_att.mean_ess, lstm.mean_ess, ff.mean_ess
        ),
    );
    let mut ok = true;
    let mut parts = Vec::new();
    for (arch, rows) in &attention {
        let best = rows
            .iter()
            .enumerate()
            .max_by(|x, y| (x.1 .0 - x.1 .1).total_cmp(&(y.1 .0 - y.1 .1)))
            .unwrap();
        ok &= best.1 .0 > best.1 .1;
        parts.push(format!(
            "{arch}: query {} weight on x {:.3} vs max nuisance {:.3}",
            best.0 + 1,
            best.1 .0,
            best.1 .1
        ));
    }
    let w = verdict(ok, parts.join("; "));
    vec![
        (CRITERIA[0], a),
        (CRITERIA[1], b),
        (CRITERIA[2], c),
        (CRITERIA[3], w),
    ]
}
