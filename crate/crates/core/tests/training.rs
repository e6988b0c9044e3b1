//! Training loop behavior: convergence to a known optimum, determinism,
//! checkpoints and the loss estimator.

use icattn::dist::Distribution;
use icattn::icnet::{
    Architecture, ArchitectureConfig, Checkpoint, CheckpointError, InferenceNetwork, Session,
};
use icattn::models::{
    ConjugateConfig, ConjugateModel, MagnitudeConfig, MagnitudeModel, ModelConfig, MODEL_NAMES,
};
use icattn::trace::{sample_prior, Address, Context, Model, SiteKey, TraceError};
use icattn::trainer::{loss_estimate, trace_rng, TrainConfig, TrainError, Trainer};

fn small(arch: Architecture) -> ArchitectureConfig {
    let mut c = ArchitectureConfig::new(arch);
    c.obs_hidden = vec![32];
    c.obs_embed_dim = 16;
    c.lstm_hidden_dim = 32;
    c.query_hidden = 16;
    c.proposal_hidden = 32;
    c
}

fn config(total: u64, batch: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        total_traces: total,
        batch_size: batch,
        lr_schedule: vec![(0, lr)],
        ..TrainConfig::default()
    }
}

fn mu_proposal(net: &InferenceNetwork, y: f64) -> (f64, f64) {
    let prior = Distribution::normal(0.0, 1.0).unwrap();
    let key = SiteKey {
        address: Address::new("mu").unwrap(),
        instance: 1,
    };
    let mut s = Session::new(net, &[y]).unwrap();
    let raw = s.proposal_raw(&key, &prior).unwrap();
    let q = s.decode(raw, &key, &prior).unwrap();
    (q.mean(), q.variance().sqrt())
}

/// The sleep-phase optimum for `mu ~ N(0, 1)`, `y ~ N(mu, 1)` is the exact
/// posterior: mean `y / 2`, std `1 / sqrt(2)`. The trained proposal's mean is
/// fitted by least squares over `y` in [-2, 2] and compared by slope and
/// intercept; the std is compared pointwise.
#[test]
fn conjugate_proposal_reaches_the_posterior() {
    let model = ConjugateModel::new(ConjugateConfig::default()).unwrap();
    let mut arch = small(Architecture::FfNoAtt);
    arch.normal_components = 1;
    // piecewise-linear units fit the linear optimum without tail saturation
    arch.activation = icattn::nn::Activation::Relu;
    let net = InferenceNetwork::for_model(arch, &model, 512).unwrap();
    for seed in 0..3 {
        let mut cfg = config(20_000, 16, 3e-3);
        cfg.seed = seed;
        cfg.lr_schedule = vec![(0, 3e-3), (10_000, 1e-3), (15_000, 1e-4)];
        let mut t = Trainer::new(&model, net.clone(), cfg).unwrap();
        t.train(|_| {}).unwrap();
        let trained = t.into_network();

        let ys: Vec<f64> = (0..=8).map(|i| -2.0 + 0.5 * f64::from(i)).collect();
        let fits: Vec<(f64, f64)> = ys.iter().map(|&y| mu_proposal(&trained, y)).collect();
        let n = ys.len() as f64;
        let ybar = ys.iter().sum::<f64>() / n;
        let mbar = fits.iter().map(|f| f.0).sum::<f64>() / n;
        let sxy: f64 = ys
            .iter()
            .zip(&fits)
            .map(|(y, f)| (y - ybar) * (f.0 - mbar))
            .sum();
        let sxx: f64 = ys.iter().map(|y| (y - ybar).powi(2)).sum();
        let slope = sxy / sxx;
        let intercept = mbar - slope * ybar;
        let (_, post_std) = model.posterior(0.0);
        assert!(
            (slope / 0.5 - 1.0).abs() < 0.05,
            "seed {seed}: slope {slope}"
        );
        assert!(
            intercept.abs() < 0.05 * post_std,
            "seed {seed}: intercept {intercept}"
        );
        for (y, (_, s)) in ys.iter().zip(&fits) {
            assert!(
                (s / post_std - 1.0).abs() < 0.05,
                "seed {seed}, y = {y}: std {s}"
            );
        }
    }
}

#[test]
fn seeded_runs_are_identical() {
    let model = MagnitudeModel::new(MagnitudeConfig {
        nuisance: 3,
        ..MagnitudeConfig::default()
    })
    .unwrap();
    for arch in Architecture::ALL {
        let run = |threads: usize| {
            let net = InferenceNetwork::for_model(small(arch), &model, 64).unwrap();
            let mut cfg = config(640, 32, 1e-3);
            cfg.threads = threads;
            let mut t = Trainer::new(&model, net, cfg).unwrap();
            t.train(|_| {}).unwrap();
            (t.report.records.last().unwrap().loss, t.into_network())
        };
        let (a, na) = run(1);
        let (b, nb) = run(1);
        let (c, _) = run(3);
        assert!((a - b).abs() <= 1e-9, "{arch}: {a} vs {b}");
        assert!((a - c).abs() <= 1e-9, "{arch}: thread count changed loss");
        assert_eq!(na, nb);
    }
}

#[test]
fn loss_decreases_at_desk_scale() {
    let model = MagnitudeModel::new(MagnitudeConfig {
        nuisance: 4,
        ..MagnitudeConfig::default()
    })
    .unwrap();
    let net = InferenceNetwork::for_model(small(Architecture::FfAtt), &model, 256).unwrap();
    let mut t = Trainer::new(&model, net, config(10_000, 64, 1e-3)).unwrap();
    t.train(|_| {}).unwrap();
    let n = t.report.records.len();
    let early = t.report.mean_loss(0..20.min(n));
    let late = t.report.mean_loss(n - 20..n);
    assert!(late < early, "late {late} vs early {early}");
}

#[test]
fn single_trace_batches_step() {
    let model = ConjugateModel::new(ConjugateConfig::default()).unwrap();
    let net = InferenceNetwork::for_model(small(Architecture::LstmAtt), &model, 16).unwrap();
    let mut t = Trainer::new(&model, net, config(5, 1, 1e-3)).unwrap();
    t.train(|_| {}).unwrap();
    assert_eq!(t.report.records.len(), 5);
    assert!(t.report.records.iter().all(|r| r.loss.is_finite()));
}

/// Magnitude-style model whose trace length is 12 or 22.
struct VariableLength;

impl Model for VariableLength {
    fn name(&self) -> &str {
        "variable"
    }

    fn num_observations(&self) -> usize {
        1
    }

    fn run(&self, ctx: &mut Context<'_>) -> Result<(), TraceError> {
        let long = ctx.sample(&Address::new("long")?, Distribution::bernoulli(0.5)?)?;
        let x = ctx.sample(&Address::new("x")?, Distribution::normal(0.0, 10.0)?)?;
        let n = if long == 1.0 { 20 } else { 10 };
        let nuisance = Address::new("nuisance")?;
        for _ in 0..n {
            ctx.sample(&nuisance, Distribution::normal(0.0, 10.0)?)?;
        }
        ctx.observe(&Address::new("r")?, Distribution::normal(x, 1.0)?)?;
        Ok(())
    }
}

#[test]
fn mixed_trace_lengths_train() {
    let model = VariableLength;
    let lens: std::collections::BTreeSet<usize> = (0..40)
        .map(|i| sample_prior(&model, &mut trace_rng(0, i)).unwrap().len())
        .collect();
    assert_eq!(lens.into_iter().collect::<Vec<_>>(), vec![12, 22]);
    for arch in Architecture::ALL {
        let net = InferenceNetwork::for_model(small(arch), &model, 64).unwrap();
        let mut t = Trainer::new(&model, net, config(256, 32, 1e-3)).unwrap();
        t.train(|_| {}).unwrap();
        assert_eq!(t.net.registry.len(), 2 + 20, "{arch}");
    }
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = std::env::temp_dir().join(format!("icattn-resume-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("ck.json");
    let model = MagnitudeModel::new(MagnitudeConfig {
        nuisance: 2,
        ..MagnitudeConfig::default()
    })
    .unwrap();
    let arch = small(Architecture::LstmAtt);

    let mut full = Trainer::new(
        &model,
        InferenceNetwork::for_model(arch.clone(), &model, 64).unwrap(),
        config(512, 32, 1e-3),
    )
    .unwrap();
    full.train(|_| {}).unwrap();

    let mut first = config(256, 32, 1e-3);
    first.checkpoint_path = Some(path.clone());
    let mut half = Trainer::new(
        &model,
        InferenceNetwork::for_model(arch, &model, 64).unwrap(),
        first,
    )
    .unwrap();
    half.model_config = Some(ModelConfig::Magnitude(model.config));
    half.train(|_| {}).unwrap();

    let ck = Checkpoint::load(&path).unwrap();
    assert_eq!(ck.traces_seen, 256);
    assert_eq!(ck.model_config, Some(ModelConfig::Magnitude(model.config)));
    let mut rest = Trainer::resume(&model, ck, config(512, 32, 1e-3)).unwrap();
    rest.train(|_| {}).unwrap();
    assert_eq!(rest.net, full.net);
    assert_eq!(rest.steps, full.steps);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn checkpoint_round_trip_and_rejection() {
    let model = MagnitudeModel::new(MagnitudeConfig {
        nuisance: 2,
        ..MagnitudeConfig::default()
    })
    .unwrap();
    let mut t = Trainer::new(
        &model,
        InferenceNetwork::for_model(small(Architecture::FfAtt), &model, 64).unwrap(),
        config(128, 32, 1e-3),
    )
    .unwrap();
    t.train(|_| {}).unwrap();
    let ck = t.checkpoint();
    let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
    assert_eq!(back, ck);

    let other = ConjugateModel::new(ConjugateConfig::default()).unwrap();
    assert!(matches!(
        back.check_model(&other),
        Err(CheckpointError::ModelName { .. })
    ));
    let mut tampered = back.clone();
    tampered.version = 99;
    assert!(matches!(
        Checkpoint::from_json(&tampered.to_json().unwrap()),
        Err(CheckpointError::Version(99))
    ));
    assert!(Checkpoint::from_json("{\"format\": 3}").is_err());

    // same name, more nuisance sites than the network has seen: still loads,
    // unseen sites fall back to the prior
    let bigger = MagnitudeModel::new(MagnitudeConfig {
        nuisance: 5,
        ..MagnitudeConfig::default()
    })
    .unwrap();
    back.check_model(&bigger).unwrap();
}

#[test]
fn loss_equals_prior_negative_log_density_when_proposal_is_prior() {
    let model = ConjugateModel::new(ConjugateConfig::default()).unwrap();
    let mut arch = small(Architecture::FfNoAtt);
    arch.normal_components = 1;
    let mut net = InferenceNetwork::for_model(arch, &model, 64).unwrap();
    let traces: Vec<_> = (0..200)
        .map(|i| sample_prior(&model, &mut trace_rng(4, i)).unwrap())
        .collect();
    net.ensure_sites(&traces[0]).unwrap();
    let last = *net.registry.entries()[0].proposal.layers.last().unwrap();
    net.params.data_mut(last.w).fill(0.0);
    let loss = loss_estimate(&net, &traces).unwrap();
    let want = -traces.iter().map(|t| t.log_prior()).sum::<f64>() / traces.len() as f64;
    assert!((loss - want).abs() < 1e-9, "{loss} vs {want}");

    let same = vec![traces[3].clone(); 10];
    let single = loss_estimate(&net, &traces[3..4]).unwrap();
    assert!((loss_estimate(&net, &same).unwrap() - single).abs() < 1e-12);
}

#[test]
fn fresh_networks_have_finite_loss_on_every_model() {
    for name in MODEL_NAMES {
        let model = ModelConfig::default_for(name).unwrap().build().unwrap();
        let n = if name == "circuit" { 200 } else { 1000 };
        let traces: Vec<_> = (0..n)
            .map(|i| sample_prior(model.as_ref(), &mut trace_rng(8, i)).unwrap())
            .collect();
        for arch in Architecture::ALL {
            let mut net = InferenceNetwork::for_model(small(arch), model.as_ref(), 64).unwrap();
            for t in &traces {
                net.ensure_sites(t).unwrap();
            }
            let l = loss_estimate(&net, &traces).unwrap();
            assert!(l.is_finite(), "{name} {arch}: {l}");
        }
    }
}

#[test]
fn bad_configs_are_rejected() {
    let model = ConjugateModel::new(ConjugateConfig::default()).unwrap();
    let net = InferenceNetwork::for_model(small(Architecture::FfNoAtt), &model, 8).unwrap();
    let mut c = config(10, 0, 1e-3);
    assert!(matches!(
        Trainer::new(&model, net.clone(), c.clone()),
        Err(TrainError::Config(_))
    ));
    c.batch_size = 4;
    c.lr_schedule = vec![(5, 1e-3)];
    assert!(Trainer::new(&model, net.clone(), c.clone()).is_err());
    c.lr_schedule = vec![(0, 1e-3), (100, 1e-4)];
    assert_eq!(c.lr_at(99), 1e-3);
    assert_eq!(c.lr_at(100), 1e-4);
}
