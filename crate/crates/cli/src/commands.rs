use crate::io::{
    build_model, model_config, observations, observations_csv, parse_lr_schedule, strip_out_dir,
    OutDir, RunManifest, MANIFEST_FILE,
};
use crate::svg::{bar_chart, heatmap, Axis, Chart};
use crate::{usage, Cli, Command, ModelArgs};
use anyhow::{Context as _, Result};
use icattn::acsim::{FrequencyResponse, C64};
use icattn::icnet::{Architecture, ArchitectureConfig, Checkpoint, InferenceNetwork};
use icattn::models::{CircuitModel, ModelConfig};
use icattn::par::default_threads;
use icattn::sis::{collect_attention, ess_report, posterior_expectation, run_guided, SisOptions};
use icattn::trace::{sample_prior, Model};
use icattn::trainer::{trace_rng, TrainConfig, Trainer};
use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

struct Ctx {
    out: OutDir,
    threads: usize,
    args: Vec<String>,
}

impl Ctx {
    fn finish(mut self, mut manifest: RunManifest) -> Result<()> {
        manifest.outputs = self.out.written.clone();
        manifest.outputs.push(MANIFEST_FILE.to_string());
        let json = serde_json::to_string_pretty(&manifest)?;
        self.out.write(MANIFEST_FILE, &json)?;
        Ok(())
    }

    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            model: None,
            architecture: None,
            config_path: None,
            seed: None,
            checkpoint: None,
            out_dir: self.out.path.display().to_string(),
            args: self.args.clone(),
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

pub fn run(cli: Cli, argv: &[String]) -> Result<()> {
    let threads = cli.threads.unwrap_or_else(default_threads).max(1);
    if let Command::Rerun { manifest } = &cli.command {
        return rerun(manifest, &cli.out_dir, cli.threads);
    }
    let ctx = Ctx {
        out: OutDir::create(&cli.out_dir)?,
        threads,
        args: strip_out_dir(argv),
    };
    match cli.command {
        Command::Train {
            model,
            arch,
            traces,
            batch,
            lr_schedule,
            seed,
            lstm_hidden,
            normal_components,
            pilot,
            checkpoint,
            checkpoint_every,
            resume,
        } => train(
            ctx,
            TrainArgs {
                model,
                arch,
                traces,
                batch,
                lr_schedule,
                seed,
                lstm_hidden,
                normal_components,
                pilot,
                checkpoint,
                checkpoint_every,
                resume,
            },
        ),
        Command::Infer {
            model,
            observe,
            checkpoint,
            arch,
            k,
            repeats,
            seed,
        } => {
            let (net, cfg, label) = load_network(&model, checkpoint.as_deref(), arch.as_deref())?;
            let m = build_model(&cfg)?;
            let ys = observations(&observe, m.as_ref())?;
            infer(
                ctx,
                m.as_ref(),
                &cfg,
                net.as_ref(),
                &label,
                checkpoint,
                &ys,
                k,
                repeats,
                seed,
            )
        }
        Command::Diagnose {
            model,
            observe,
            checkpoint,
            arch,
            k,
            repeats,
            seed,
        } => {
            let (net, cfg, label) = load_network(&model, checkpoint.as_deref(), arch.as_deref())?;
            let ModelConfig::Circuit(cc) = &cfg else {
                return usage(format!(
                    "diagnose needs the circuit model, not {}",
                    cfg.name()
                ));
            };
            let m = CircuitModel::new(*cc)?;
            let ys = observations(&observe, &m)?;
            diagnose(
                ctx,
                &m,
                &cfg,
                net.as_ref(),
                &label,
                checkpoint,
                &ys,
                k,
                repeats,
                seed,
            )
        }
        Command::AttentionReport {
            model,
            observe,
            checkpoint,
            runs,
            site,
            seed,
        } => attention_report(ctx, &model, &observe, &checkpoint, runs, site, seed),
        Command::Generate { model, count, seed } => generate(ctx, &model, count, seed),
        Command::Rerun { .. } => unreachable!("handled above"),
    }
}

fn rerun(manifest: &Path, out_dir: &Path, threads: Option<usize>) -> Result<()> {
    let text = std::fs::read_to_string(manifest)
        .with_context(|| format!("cannot read manifest {}", manifest.display()))?;
    let m: RunManifest = match serde_json::from_str(&text) {
        Ok(m) => m,
        Err(e) => return usage(format!("bad manifest {}: {e}", manifest.display())),
    };
    if m.args.first().map(String::as_str) == Some("rerun") {
        return usage("a manifest cannot replay another rerun");
    }
    let mut argv = vec![
        "icattn".to_string(),
        "--out-dir".to_string(),
        out_dir.display().to_string(),
    ];
    if let Some(t) = threads {
        if !m
            .args
            .iter()
            .any(|a| a == "--threads" || a.starts_with("--threads="))
        {
            argv.push(format!("--threads={t}"));
        }
    }
    argv.extend(m.args.iter().cloned());
    let cli = match <Cli as clap::Parser>::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => return usage(format!("manifest arguments no longer parse: {e}")),
    };
    eprintln!(
        "rerunning `{}` into {}",
        m.args.join(" "),
        out_dir.display()
    );
    run(cli, &argv[1..])
}

struct TrainArgs {
    model: ModelArgs,
    arch: String,
    traces: u64,
    batch: usize,
    lr_schedule: String,
    seed: u64,
    lstm_hidden: Option<usize>,
    normal_components: Option<usize>,
    pilot: usize,
    checkpoint: Option<PathBuf>,
    checkpoint_every: Option<u64>,
    resume: Option<PathBuf>,
}

fn parse_arch(s: &str) -> Result<Architecture> {
    match s.parse() {
        Ok(a) => Ok(a),
        Err(e) => usage(format!("{e}")),
    }
}

fn train(ctx: Ctx, a: TrainArgs) -> Result<()> {
    let resumed = match &a.resume {
        Some(p) => Some(Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let cfg = model_config(
        &a.model,
        resumed.as_ref().and_then(|c| c.model_config.as_ref()),
    )?;
    let model = build_model(&cfg)?;
    let arch = parse_arch(&a.arch)?;
    let ck_path = a
        .checkpoint
        .clone()
        .unwrap_or_else(|| ctx.out.file("checkpoint.json"));
    if let Some(parent) = ck_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        if !parent.is_dir() {
            return usage(format!(
                "checkpoint directory {} does not exist",
                parent.display()
            ));
        }
    }
    let tc = TrainConfig {
        total_traces: a.traces,
        batch_size: a.batch,
        lr_schedule: parse_lr_schedule(&a.lr_schedule)?,
        seed: a.seed,
        checkpoint_every: a.checkpoint_every,
        checkpoint_path: Some(ck_path.clone()),
        threads: ctx.threads,
        ..TrainConfig::default()
    };
    if let Err(e) = tc.validate() {
        return usage(e.to_string());
    }
    let mut trainer = match resumed {
        Some(ck) => {
            if ck.network.architecture() != arch {
                return usage(format!(
                    "--arch {arch} does not match checkpoint architecture {}",
                    ck.network.architecture()
                ));
            }
            Trainer::resume(model.as_ref(), ck, tc)?
        }
        None => {
            let mut ac = ArchitectureConfig::new(arch);
            ac.seed = a.seed;
            if let Some(h) = a.lstm_hidden {
                ac.lstm_hidden_dim = h;
            }
            if let Some(n) = a.normal_components {
                ac.normal_components = n;
            }
            let net = InferenceNetwork::for_model(ac, model.as_ref(), a.pilot)?;
            Trainer::new(model.as_ref(), net, tc)?
        }
    };
    trainer.model_config = Some(cfg.clone());
    let every = (a.traces / a.batch.max(1) as u64 / 20).max(1);
    trainer.train(|r| {
        if r.step % every == 0 {
            eprintln!(
                "step {:>6}  traces {:>8}  loss {:>10.4}  lr {:.0e}",
                r.step, r.traces_seen, r.loss, r.lr
            );
        }
    })?;
    let mut ctx = ctx;
    ctx.out.write("train.csv", &trainer.report.to_csv())?;
    if !trainer.report.skipped.is_empty() {
        eprintln!(
            "{} batches skipped (non-finite)",
            trainer.report.skipped.len()
        );
    }
    println!(
        "trained {} on {} for {} traces; checkpoint {}",
        arch,
        cfg.name(),
        trainer.traces_seen,
        ck_path.display()
    );
    let mut m = ctx.manifest("train");
    m.model = Some(cfg.name().to_string());
    m.architecture = Some(arch.to_string());
    m.config_path = a.model.config.map(|p| p.display().to_string());
    m.seed = Some(a.seed);
    m.checkpoint = Some(ck_path.display().to_string());
    ctx.finish(m)
}

/// Network (or `None` for the prior baseline), model settings and a label.
fn load_network(
    model: &ModelArgs,
    checkpoint: Option<&Path>,
    arch: Option<&str>,
) -> Result<(Option<InferenceNetwork>, ModelConfig, String)> {
    match (checkpoint, arch) {
        (None, Some("prior")) => Ok((None, model_config(model, None)?, "prior".into())),
        (Some(_), Some("prior")) => usage("--arch prior takes no checkpoint"),
        (None, _) => usage("--checkpoint is required unless --arch prior"),
        (Some(path), arch) => {
            let ck =
                Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            let cfg = model_config(model, ck.model_config.as_ref())?;
            let m = build_model(&cfg)?;
            ck.check_model(m.as_ref()).with_context(|| {
                format!("checkpoint {} does not fit this model", path.display())
            })?;
            let a = ck.network.architecture();
            if let Some(want) = arch {
                if parse_arch(want)? != a {
                    return usage(format!(
                        "--arch {want} does not match checkpoint architecture {a}"
                    ));
                }
            }
            Ok((Some(ck.network), cfg, a.to_string()))
        }
    }
}

fn response_from_observed(freqs: &[f64], y: &[f64]) -> FrequencyResponse {
    FrequencyResponse {
        freqs: freqs.to_vec(),
        vout: y.chunks(2).map(|c| C64::new(c[0], c[1])).collect(),
    }
}

#[allow(clippy::too_many_arguments)]
fn infer(
    mut ctx: Ctx,
    model: &dyn Model,
    cfg: &ModelConfig,
    net: Option<&InferenceNetwork>,
    label: &str,
    checkpoint: Option<PathBuf>,
    ys: &[Vec<f64>],
    k: usize,
    repeats: usize,
    seed: u64,
) -> Result<()> {
    if k == 0 || repeats == 0 {
        return usage("--k and --repeats must be at least 1");
    }
    let opts = SisOptions {
        k,
        seed,
        threads: ctx.threads,
    };
    let report = ess_report(model, net, ys, repeats, &opts)?;
    let set = run_guided(model, net, &ys[0], &opts)?;
    ctx.out.write("samples.csv", &set.to_csv())?;
    ctx.out.write("ess.csv", &report.to_csv())?;

    match cfg {
        ModelConfig::Magnitude(_) => {
            let pts: Vec<(f64, f64)> = set
                .samples
                .iter()
                .filter_map(|s| Some((s.trace.value("x", 1)?, s.trace.value("y", 1)?)))
                .collect();
            let r = ys[0][0].max(0.0).sqrt();
            let lim = (1.5 * r).max(25.0);
            let mut chart = Chart::new(
                &format!("{label}: proposal samples given r2 = {}", ys[0][0]),
                Axis::linear(-lim, lim, "x"),
                Axis::linear(-lim, lim, "y"),
            );
            chart.points(&pts, "#cc3311", 0.35);
            chart.circle(0.0, 0.0, r, "black");
            ctx.out.write("scatter.svg", &chart.render())?;
        }
        ModelConfig::Circuit(cc) => {
            let cm = CircuitModel::new(*cc)?;
            let observed = response_from_observed(cm.freqs(), &ys[0]);
            let mut csv = String::from("series,log_weight,freq,re,im\n");
            let mut series = vec![("observed".to_string(), f64::NAN, observed)];
            for (i, s) in set.samples.iter().enumerate().take(50) {
                // zero-weight samples may hold non-physical values
                if s.log_weight == f64::NEG_INFINITY {
                    continue;
                }
                series.push((
                    format!("sample_{i}"),
                    s.log_weight,
                    cm.response_for(&s.trace)?,
                ));
            }
            for (name, lw, r) in &series {
                for (f, v) in r.freqs.iter().zip(&r.vout) {
                    let lw = if lw.is_nan() {
                        String::new()
                    } else {
                        format!("{lw:?}")
                    };
                    let _ = writeln!(csv, "{name},{lw},{f:?},{:?},{:?}", v.re, v.im);
                }
            }
            ctx.out.write("recon.csv", &csv)?;
            let ymax = series
                .iter()
                .flat_map(|(_, _, r)| r.magnitudes())
                .fold(0.0f64, f64::max);
            let mut chart = Chart::new(
                &format!("{label}: proposal sweeps vs observed |Vout|"),
                Axis::log(cc.f_min, cc.f_max, "frequency (Hz)"),
                Axis::linear(0.0, ymax * 1.05 + 1e-9, "|Vout| (V)"),
            );
            for (name, _, r) in series.iter().rev() {
                let pts: Vec<(f64, f64)> = r.freqs.iter().copied().zip(r.magnitudes()).collect();
                if name == "observed" {
                    chart.line(&pts, "black", 2.0, 1.0);
                } else {
                    chart.line(&pts, "#4477aa", 1.0, 0.3);
                }
            }
            ctx.out.write("recon.svg", &chart.render())?;
        }
        _ => {}
    }

    println!(
        "{label}: mean ESS {:.4} over {} observation(s) x {} repeat(s), K = {}",
        report.overall_mean(),
        ys.len(),
        repeats,
        k
    );
    let mut m = ctx.manifest("infer");
    m.model = Some(cfg.name().to_string());
    m.architecture = Some(label.to_string());
    m.seed = Some(seed);
    m.checkpoint = checkpoint.map(|p| p.display().to_string());
    ctx.finish(m)
}

#[allow(clippy::too_many_arguments)]
fn diagnose(
    mut ctx: Ctx,
    model: &CircuitModel,
    cfg: &ModelConfig,
    net: Option<&InferenceNetwork>,
    label: &str,
    checkpoint: Option<PathBuf>,
    ys: &[Vec<f64>],
    k: usize,
    repeats: usize,
    seed: u64,
) -> Result<()> {
    if ys.len() != 1 {
        return usage("diagnose takes exactly one observation");
    }
    if k == 0 || repeats == 0 {
        return usage("--k and --repeats must be at least 1");
    }
    let labels = model.fault_labels();
    let mut probs = vec![0.0; labels.len()];
    let mut ess_sum = 0.0;
    for r in 0..repeats {
        let opts = SisOptions {
            k,
            seed: seed.wrapping_add(r as u64),
            threads: ctx.threads,
        };
        let set = run_guided(model, net, &ys[0], &opts)?;
        ess_sum += set.ess()?;
        let p = posterior_expectation(&set, |t| {
            model
                .fault_indicators(t)
                .expect("circuit trace has every latent")
        })?;
        for (a, b) in probs.iter_mut().zip(p) {
            *a += b / repeats as f64;
        }
    }
    let mut csv = String::from("label,component,kind,probability\n");
    for (l, p) in labels.iter().zip(&probs) {
        let (comp, kind) = l.split_once(':').expect("label has kind");
        let _ = writeln!(csv, "{l},{comp},{kind},{p:.10}");
    }
    ctx.out.write("faults.csv", &csv)?;
    ctx.out.write(
        "faults.svg",
        &bar_chart(
            &format!("{label}: posterior fault probabilities"),
            &labels,
            &probs,
            "probability",
        ),
    )?;
    let mut ranked: Vec<(&String, &f64)> = labels.iter().zip(&probs).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(a.1));
    println!(
        "{label}: mean ESS {:.4}; most probable faults:",
        ess_sum / repeats as f64
    );
    for (l, p) in ranked.iter().take(5) {
        println!("  {l:<18} {p:.4}");
    }
    let mut m = ctx.manifest("diagnose");
    m.model = Some(cfg.name().to_string());
    m.architecture = Some(label.to_string());
    m.seed = Some(seed);
    m.checkpoint = checkpoint.map(|p| p.display().to_string());
    ctx.finish(m)
}

fn attention_report(
    mut ctx: Ctx,
    model_args: &ModelArgs,
    observe: &crate::ObserveArgs,
    checkpoint: &Path,
    runs: usize,
    site: Option<String>,
    seed: u64,
) -> Result<()> {
    if runs == 0 {
        return usage("--runs must be at least 1");
    }
    let (net, cfg, label) = load_network(model_args, Some(checkpoint), None)?;
    let net = net.expect("checkpoint given");
    if !net.architecture().attention() {
        return usage(format!(
            "checkpoint architecture {label} has no attention; use ff-att or lstm-att"
        ));
    }
    let model = build_model(&cfg)?;
    let ys = observations(observe, model.as_ref())?;
    let records = collect_attention(model.as_ref(), &net, &ys[0], runs, seed)?;
    let nq = net.config.attention.num_queries;

    // (site, query, attended) → (sum, count), in first-seen order
    let mut sites: Vec<String> = Vec::new();
    let mut attended_order: HashMap<String, Vec<String>> = HashMap::new();
    let mut acc: HashMap<(String, usize, String), (f64, usize)> = HashMap::new();
    for run in &records {
        for rec in run {
            let s = rec.site.to_string();
            if !sites.contains(&s) {
                sites.push(s.clone());
            }
            let order = attended_order.entry(s.clone()).or_default();
            let n = rec.attended.len();
            for (j, a) in rec.attended.iter().enumerate() {
                let a = a.to_string();
                if !order.contains(&a) {
                    order.push(a.clone());
                }
                for q in 0..nq {
                    let e = acc.entry((s.clone(), q, a.clone())).or_insert((0.0, 0));
                    e.0 += rec.weights[q * n + j];
                    e.1 += 1;
                }
            }
        }
    }
    let mut csv = String::from("site,query,attended,weight\n");
    for s in &sites {
        for q in 0..nq {
            for a in &attended_order[s] {
                if let Some((sum, _)) = acc.get(&(s.clone(), q, a.clone())) {
                    let _ = writeln!(csv, "{s},{},{a},{:.10}", q + 1, sum / runs as f64);
                }
            }
        }
    }
    ctx.out.write("attention.csv", &csv)?;

    let target = match site {
        Some(s) if s.contains('#') => s,
        Some(s) => format!("{s}#1"),
        None => match sites.last() {
            Some(s) => s.clone(),
            None => return usage("no site used attention (traces too short?)"),
        },
    };
    let Some(cols) = attended_order.get(&target) else {
        return usage(format!(
            "site {target} never attended; sites: {}",
            sites.join(", ")
        ));
    };
    let mut grid = Vec::with_capacity(nq * cols.len());
    for q in 0..nq {
        for a in cols {
            let v = acc
                .get(&(target.clone(), q, a.clone()))
                .map_or(0.0, |e| e.0 / runs as f64);
            grid.push(v);
        }
    }
    let rows: Vec<String> = (1..=nq).map(|q| format!("query {q}")).collect();
    ctx.out.write(
        "attention.svg",
        &heatmap(
            &format!("{label}: attention when proposing {target}"),
            &rows,
            cols,
            &grid,
        ),
    )?;
    println!("attention weights when proposing {target} (averaged over {runs} runs):");
    for (q, row) in grid.chunks(cols.len()).enumerate() {
        let best = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(j, w)| format!("{} ({w:.3})", cols[j]))
            .unwrap_or_default();
        println!("  query {}: strongest {best}", q + 1);
    }
    let mut m = ctx.manifest("attention-report");
    m.model = Some(cfg.name().to_string());
    m.architecture = Some(label);
    m.seed = Some(seed);
    m.checkpoint = Some(checkpoint.display().to_string());
    ctx.finish(m)
}

fn generate(mut ctx: Ctx, model_args: &ModelArgs, count: usize, seed: u64) -> Result<()> {
    if count == 0 {
        return usage("--count must be at least 1");
    }
    let cfg = model_config(model_args, None)?;
    let model = build_model(&cfg)?;
    let traces = (0..count)
        .map(|i| sample_prior(model.as_ref(), &mut trace_rng(seed, i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<Vec<f64>> = traces.iter().map(|t| t.observed_values()).collect();
    ctx.out.write(
        "observations.csv",
        &observations_csv(&model.observation_names(), &rows),
    )?;
    let cols: BTreeSet<String> = traces
        .iter()
        .flat_map(|t| {
            t.entries
                .iter()
                .map(|e| format!("{}#{}", e.address, e.instance))
        })
        .collect();
    let mut csv = String::from("trace");
    for c in &cols {
        csv.push(',');
        csv.push_str(c);
    }
    csv.push('\n');
    for (i, t) in traces.iter().enumerate() {
        csv.push_str(&i.to_string());
        for c in &cols {
            csv.push(',');
            let (a, n) = c.rsplit_once('#').expect("column has #");
            if let Some(v) = t.value(a, n.parse().expect("instance")) {
                let _ = write!(csv, "{v:?}");
            }
        }
        csv.push('\n');
    }
    ctx.out.write("latents.csv", &csv)?;
    if let ModelConfig::Circuit(cc) = &cfg {
        let cm = CircuitModel::new(*cc)?;
        let resp = response_from_observed(cm.freqs(), &rows[0]);
        ctx.out.write("response.csv", &resp.to_csv())?;
    }
    println!("generated {count} {} trace(s)", cfg.name());
    let mut m = ctx.manifest("generate");
    m.model = Some(cfg.name().to_string());
    m.config_path = model_args.config.as_ref().map(|p| p.display().to_string());
    m.seed = Some(seed);
    ctx.finish(m)
}
