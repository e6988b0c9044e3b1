//! Criteria checked against closed forms and finite differences.

use crate::Outcome;
use icattn::acsim::{
    butterworth_bandpass, frequency_sweep, log_space, ButterworthSpec, ComponentKind as K, Netlist,
    C64,
};
use icattn::dist::{Distribution, Family};
use icattn::icnet::{
    proposal_kind_for, trace_log_q, Architecture, ArchitectureConfig, InferenceNetwork,
    ProposalHead, Session,
};
use icattn::models::{ConjugateConfig, ConjugateModel, MagnitudeConfig, MagnitudeModel};
use icattn::nn::{Activation, Graph, Lstm, LstmState, Mlp, ParamGrads, ParamId, ParamStore, Var};
use icattn::sis::{ess, run_guided, SisError, SisOptions};
use icattn::trace::sample_prior;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

const PROBES: usize = 100;
const STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn coords(store: &ParamStore) -> Vec<(ParamId, usize)> {
    store
        .iter()
        .flat_map(|(id, p)| (0..p.data.len()).map(move |i| (id, i)))
        .collect()
}

/// Worst relative error over `PROBES` random coordinates of `store`.
fn probe(store: &ParamStore, f: &dyn Fn(&mut Graph<'_>) -> Var, seed: u64) -> f64 {
    let mut g = Graph::new(store);
    let out = f(&mut g);
    let (_, grads) = g.backward(out);
    let all = coords(store);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..PROBES {
        let (id, i) = all[rng.random_range(0..all.len())];
        let eval = |d: f64| {
            let mut s = store.clone();
            s.data_mut(id)[i] += d;
            let mut g = Graph::new(&s);
            let v = f(&mut g);
            g.scalar(v)
        };
        let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
        let analytic = grads.get(id).map_or(0.0, |g| g[i]);
        worst = worst.max(rel_err(analytic, numeric, 1e-6));
    }
    worst
}

fn readout(g: &mut Graph<'_>, x: Var, seed: u64) -> Var {
    let n = g.value(x).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = g.input((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
    let p = g.mul(x, c);
    g.sum(p)
}

fn random_param(store: &mut ParamStore, name: &str, n: usize, rng: &mut ChaCha8Rng) -> ParamId {
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    store.add(name, vec![n], data)
}

fn dense_worst() -> f64 {
    let mut worst: f64 = 0.0;
    for act in [Activation::Tanh, Activation::Relu] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[5, 7, 6, 3], act, true, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |g: &mut Graph<'_>| {
            let xi = g.input(x.clone());
            let h = mlp.forward(g, xi);
            readout(g, h, 9)
        };
        worst = worst.max(probe(&store, &f, 2));
    }
    worst
}

fn lstm_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let lstm = Lstm::new(&mut store, "l", 4, 6, &mut rng);
    let xs: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let f = |g: &mut Graph<'_>| {
        let mut state = LstmState::zeros(g, 6);
        let mut outs = Vec::new();
        for x in &xs {
            let xi = g.input(x.clone());
            let (h, s) = lstm.step(g, xi, state);
            state = s;
            outs.push(readout(g, h, outs.len() as u64));
        }
        outs.push(readout(g, state.cell, 99));
        g.sum_scalars(&outs)
    };
    probe(&store, &f, 4)
}

fn attention_worst() -> f64 {
    let (nq, k, v, locs) = (4, 16, 8, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let q = random_param(&mut store, "q", nq * k, &mut rng);
    let keys: Vec<ParamId> = (0..locs)
        .map(|i| random_param(&mut store, &format!("k{i}"), k, &mut rng))
        .collect();
    let vals: Vec<ParamId> = (0..locs)
        .map(|i| random_param(&mut store, &format!("v{i}"), v, &mut rng))
        .collect();
    let f = |g: &mut Graph<'_>| {
        let qv = g.param(q);
        let kv: Vec<Var> = keys.iter().map(|&id| g.param(id)).collect();
        let vv: Vec<Var> = vals.iter().map(|&id| g.param(id)).collect();
        let out = g.attention(qv, &kv, &vv, nq, 1.0 / (k as f64).sqrt());
        readout(g, out, 7)
    };
    probe(&store, &f, 6)
}

fn decoder_worst() -> f64 {
    let priors = [
        Distribution::normal(0.0, 10.0).unwrap(),
        Distribution::uniform(1.0, 1000.0).unwrap(),
        Distribution::bernoulli(0.1).unwrap(),
        Distribution::mixture_normal_uniform(0.98, 1e-6, 5e-10, 1e-7, 1.9e-6).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for p in 0..PROBES {
        let prior = &priors[p % priors.len()];
        let ncomp = 1 + (p / priors.len()) % 3;
        let kind = proposal_kind_for(prior.family(), ncomp, ncomp);
        let head = ProposalHead::for_prior(prior, kind);
        let raw: Vec<f64> = (0..kind.num_raw())
            .map(|_| rng.random_range(-1.5..1.5))
            .collect();
        let x = match prior.family() {
            Family::Bernoulli => f64::from(rng.random_bool(0.5)),
            _ => head.decode(&raw).sample(&mut rng),
        };
        let (lp, grad) = head.log_prob_with_grad(&raw, x);
        if (lp - head.decode(&raw).log_pdf(x)).abs() > 1e-10 {
            return f64::INFINITY;
        }
        let i = rng.random_range(0..raw.len());
        let at = |d: f64| {
            let mut r = raw.clone();
            r[i] += d;
            head.decode(&r).log_pdf(x)
        };
        let numeric = (at(STEP) - at(-STEP)) / (2.0 * STEP);
        worst = worst.max(rel_err(grad[i], numeric, 1e-6));
    }
    worst
}

/// Whole-network `Σ log q` over three traces for one architecture.
fn network_worst(arch: Architecture) -> f64 {
    let model = MagnitudeModel::new(MagnitudeConfig {
        nuisance: 3,
        ..MagnitudeConfig::default()
    })
    .unwrap();
    let mut cfg = ArchitectureConfig::new(arch);
    cfg.obs_hidden = vec![12];
    cfg.obs_embed_dim = 10;
    cfg.sample_embed_dim = 6;
    cfg.lstm_hidden_dim = 12;
    cfg.query_hidden = 10;
    cfg.proposal_hidden = 10;
    let mut net = InferenceNetwork::for_model(cfg, &model, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let traces: Vec<_> = (0..3)
        .map(|_| sample_prior(&model, &mut rng).unwrap())
        .collect();
    for t in &traces {
        net.ensure_sites(t).unwrap();
    }
    let all = coords(&net.params);
    for &(id, i) in &all {
        net.params.data_mut(id)[i] += rng.random_range(-0.05..0.05);
    }
    let mut grads = ParamGrads::new();
    for t in &traces {
        let mut s = Session::new(&net, &t.observed_values()).unwrap();
        let lq = s.score_trace(t).unwrap();
        s.graph().backward_into(lq, 1.0, &mut grads);
    }
    let mut worst: f64 = 0.0;
    for _ in 0..PROBES {
        let (id, i) = all[rng.random_range(0..all.len())];
        let eval = |d: f64| {
            let mut n = net.clone();
            n.params.data_mut(id)[i] += d;
            traces
                .iter()
                .map(|t| trace_log_q(&n, t).unwrap())
                .sum::<f64>()
        };
        let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
        let analytic = grads.get(id).map_or(0.0, |g| g[i]);
        // the summed log q is O(100): rounding noise in the difference is ~1e-9
        worst = worst.max(rel_err(analytic, numeric, 1e-4));
    }
    worst
}

pub fn gradients() -> Outcome {
    let mut parts = vec![
        ("dense".to_string(), dense_worst()),
        ("lstm".to_string(), lstm_worst()),
        ("attention".to_string(), attention_worst()),
        ("decoders".to_string(), decoder_worst()),
    ];
    for arch in Architecture::ALL {
        parts.push((format!("{arch} network"), network_worst(arch)));
    }
    let detail = parts
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    let detail = format!("worst relative error per component: {detail} (tol {GRAD_TOL:.0e})");
    if parts.iter().all(|(_, e)| *e < GRAD_TOL) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Posterior mean estimate under the prior proposal and its standard error.
fn conjugate_estimate(model: &ConjugateModel, y: f64, k: usize, seed: u64) -> (f64, f64) {
    let set = run_guided(model, None, &[y], &SisOptions::new(k, seed)).unwrap();
    let w = set.normalized_weights().unwrap();
    let xs: Vec<f64> = set
        .samples
        .iter()
        .map(|s| s.trace.value("mu", 1).unwrap())
        .collect();
    let m: f64 = w.iter().zip(&xs).map(|(w, x)| w * x).sum();
    let var: f64 = w.iter().zip(&xs).map(|(w, x)| (w * (x - m)).powi(2)).sum();
    (m, var.sqrt())
}

pub fn sis_conjugate() -> Outcome {
    let model = ConjugateModel::new(ConjugateConfig::default()).unwrap();
    let mut notes = Vec::new();
    let mut ok = true;
    for (i, y) in [0.3, 1.7, -2.4].into_iter().enumerate() {
        let (truth, _) = model.posterior(y);
        let (m, se) = conjugate_estimate(&model, y, 100_000, 40 + i as u64);
        let z = (m - truth).abs() / se;
        ok &= z < 3.0;
        notes.push(format!("y={y}: {z:.2} SE"));
    }
    let y = 1.2;
    let (truth, _) = model.posterior(y);
    let rmse = |k: usize| {
        let reps = 60;
        let s: f64 = (0..reps)
            .map(|r| (conjugate_estimate(&model, y, k, 1000 + r).0 - truth).powi(2))
            .sum();
        (s / reps as f64).sqrt()
    };
    let ratio = rmse(2_000) / rmse(8_000);
    ok &= (1.5..2.7).contains(&ratio);
    notes.push(format!("RMSE ratio K=2000/K=8000 {ratio:.2} (want ~2)"));
    let detail = format!("K=1e5 mean within {}", notes.join(", "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn ess_unit() -> Outcome {
    let mut checks = Vec::new();
    for k in [1usize, 20, 2000] {
        let e = ess(&vec![-1.5; k]).unwrap();
        checks.push((format!("uniform K={k}"), (e - k as f64).abs() < 1e-9));
    }
    let e = ess(&[2f64.ln(), 0.0, 0.0]).unwrap();
    checks.push(("[2,1,1]".into(), (e - 16.0 / 6.0).abs() < 1e-12));
    let base = [0.3, -7.0, 2.5, 0.0, 1.1];
    let e0 = ess(&base).unwrap();
    let shift_ok = [-800.0, -1.0, 3.0, 500.0].iter().all(|s| {
        let shifted: Vec<f64> = base.iter().map(|w| w + s).collect();
        (ess(&shifted).unwrap() - e0).abs() < 1e-10
    });
    checks.push(("shift invariance".into(), shift_ok));
    checks.push((
        "all -inf".into(),
        matches!(ess(&[f64::NEG_INFINITY; 3]), Err(SisError::Degenerate)),
    ));
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.1)
        .map(|c| c.0.as_str())
        .collect();
    if failed.is_empty() {
        Ok(format!("{} checks", checks.len()))
    } else {
        Err(format!("failed: {}", failed.join(", ")))
    }
}

fn j() -> C64 {
    C64::new(0.0, 1.0)
}

fn netlist(parts: &[(K, &str, &str, &str, f64)]) -> Netlist {
    let mut n = Netlist::new();
    for &(k, name, a, b, v) in parts {
        n.add(k, name, a, b, v).unwrap();
    }
    n
}

/// Worst relative deviation from `h` over a 40-point log sweep.
fn sweep_error(net: &Netlist, lo: f64, hi: f64, h: &dyn Fn(f64) -> C64) -> f64 {
    let freqs = log_space(lo, hi, 40);
    let resp = frequency_sweep(net, &freqs, net.node_id("out").unwrap()).unwrap();
    freqs
        .iter()
        .zip(&resp.vout)
        .map(|(f, v)| {
            let want = h(2.0 * PI * f);
            (v - want).norm() / want.norm()
        })
        .fold(0.0, f64::max)
}

pub fn simulator() -> Outcome {
    let one = C64::new(1.0, 0.0);
    let mut errs = Vec::new();

    let (r, c) = (1.5e3, 22e-9);
    let n = netlist(&[
        (K::VacSource, "V", "in", "0", 1.0),
        (K::Resistor, "R", "in", "out", r),
        (K::Capacitor, "C", "out", "0", c),
    ]);
    errs.push((
        "RC low-pass",
        sweep_error(&n, 1e2, 1e6, &|w| one / (1.0 + j() * w * r * c)),
    ));

    let (r, l) = (470.0, 10e-3);
    let n = netlist(&[
        (K::VacSource, "V", "in", "0", 1.0),
        (K::Resistor, "R", "in", "out", r),
        (K::Inductor, "L", "out", "0", l),
    ]);
    errs.push((
        "RL high-pass",
        sweep_error(&n, 1e2, 1e6, &|w| j() * w * l / (r + j() * w * l)),
    ));

    let (r, l, c) = (100.0, 5e-3, 47e-9);
    let n = netlist(&[
        (K::VacSource, "V", "in", "0", 2.0),
        (K::Inductor, "L", "in", "a", l),
        (K::Capacitor, "C", "a", "out", c),
        (K::Resistor, "R", "out", "0", r),
    ]);
    errs.push((
        "series RLC",
        sweep_error(&n, 1e3, 1e5, &|w| {
            2.0 * r / (r + j() * w * l + 1.0 / (j() * w * c))
        }),
    ));

    let (r1, c1, r2, c2) = (1e3, 100e-9, 2.2e3, 47e-9);
    let n = netlist(&[
        (K::VacSource, "V", "in", "0", 1.0),
        (K::Resistor, "R1", "in", "a", r1),
        (K::Capacitor, "C1", "a", "0", c1),
        (K::Resistor, "R2", "a", "out", r2),
        (K::Capacitor, "C2", "out", "0", c2),
    ]);
    errs.push((
        "two-section RC",
        sweep_error(&n, 10.0, 1e6, &|w| {
            let s = j() * w;
            one / (s * s * r1 * r2 * c1 * c2 + s * (r1 * c1 + r2 * c2 + r1 * c2) + 1.0)
        }),
    ));

    let (rs, l, c, rl) = (1e3, 2e-3, 100e-9, 10e3);
    let n = netlist(&[
        (K::VacSource, "V", "in", "0", 1.0),
        (K::Resistor, "Rs", "in", "out", rs),
        (K::Inductor, "L", "out", "0", l),
        (K::Capacitor, "C", "out", "0", c),
        (K::Resistor, "RL", "out", "0", rl),
    ]);
    errs.push((
        "loaded tank",
        sweep_error(&n, 1e3, 1e5, &|w| {
            let z = one / (one / (j() * w * l) + j() * w * c + 1.0 / rl);
            z / (rs + z)
        }),
    ));

    let spec = ButterworthSpec::default();
    let bw = butterworth_bandpass(&spec);
    let resp = frequency_sweep(&bw, &log_space(1e3, 1e5, 200), bw.node_id("out").unwrap()).unwrap();
    let db = resp.magnitude_db();
    let peak = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let contrast = peak - db[0].max(db[db.len() - 1]);

    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let detail = format!(
        "worst ladder error {worst:.1e} ({}); band-pass contrast {contrast:.1} dB",
        errs.iter()
            .map(|(n, e)| format!("{n} {e:.0e}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    if worst < 1e-6 && contrast >= 20.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Density mass, integrated piecewise between support edges and
/// multiples of each normal component's std.
fn mass(d: &Distribution) -> f64 {
    let mut pts = Vec::new();
    let mut normal = |m: f64, s: f64| pts.extend((-14..=14).map(|k| m + f64::from(k) * s));
    match d {
        Distribution::Bernoulli { .. } => return d.log_pdf(0.0).exp() + d.log_pdf(1.0).exp(),
        Distribution::Normal { mean, std } => normal(*mean, *std),
        Distribution::Uniform { low, high } => pts.extend([*low, *high]),
        Distribution::MixtureNormalUniform {
            mean,
            std,
            low,
            high,
            ..
        } => {
            normal(*mean, *std);
            pts.extend([*low, *high]);
        }
        Distribution::MixtureOfNormals { means, stds, .. } => {
            for (m, s) in means.iter().zip(stds) {
                normal(*m, *s);
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let f = |x: f64| d.log_pdf(x).exp();
    pts.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let eps = (w[1] - w[0]) * 1e-12;
            simpson(&f, w[0] + eps, w[1] - eps, 200)
        })
        .sum()
}

fn lse_reference(d: &Distribution, x: f64) -> f64 {
    let terms: Vec<f64> = match d {
        Distribution::MixtureNormalUniform {
            weight_normal,
            mean,
            std,
            low,
            high,
        } => vec![
            weight_normal.ln() + Distribution::normal(*mean, *std).unwrap().log_pdf(x),
            (1.0 - weight_normal).ln() + Distribution::uniform(*low, *high).unwrap().log_pdf(x),
        ],
        Distribution::MixtureOfNormals {
            weights,
            means,
            stds,
        } => weights
            .iter()
            .zip(means.iter().zip(stds))
            .map(|(w, (m, s))| w.ln() + Distribution::normal(*m, *s).unwrap().log_pdf(x))
            .collect(),
        _ => unreachable!(),
    };
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

pub fn distributions() -> Outcome {
    let cases = [
        Distribution::normal(0.0, 1.0).unwrap(),
        Distribution::normal(-3.0, 1e-4).unwrap(),
        Distribution::uniform(1.0, 1000.0).unwrap(),
        Distribution::bernoulli(0.1).unwrap(),
        Distribution::mixture_normal_uniform(0.98, 1e-6, 5e-10, 1e-7, 1.9e-6).unwrap(),
        Distribution::mixture_normal_uniform(0.5, 100.0, 1.0, 10.0, 190.0).unwrap(),
        Distribution::mixture_of_normals(vec![0.3, 0.7], vec![-2.0, 5.0], vec![0.5, 3.0]).unwrap(),
    ];
    let families: std::collections::HashSet<Family> = cases.iter().map(|d| d.family()).collect();
    if families.len() != Family::ALL.len() {
        return Err("not every family covered".into());
    }
    let worst_mass = cases
        .iter()
        .map(|d| (mass(d) - 1.0).abs())
        .fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_lse: f64 = 0.0;
    for d in cases.iter().filter(|d| {
        matches!(
            d.family(),
            Family::MixtureNormalUniform | Family::MixtureOfNormals
        )
    }) {
        for _ in 0..1000 {
            let x = d.sample(&mut rng);
            let (a, b) = (d.log_pdf(x), lse_reference(d, x));
            worst_lse = worst_lse.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    let detail = format!(
        "worst |mass - 1| {worst_mass:.1e} (tol 1e-4), worst mixture vs log-sum-exp {worst_lse:.1e} (tol 1e-12)"
    );
    if worst_mass < 1e-4 && worst_lse <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}
