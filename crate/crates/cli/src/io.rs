use crate::{usage, ModelArgs, ObserveArgs};
use anyhow::{Context as _, Result};
use icattn::acsim::FrequencyResponse;
use icattn::models::ModelConfig;
use icattn::trace::Model;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub model: Option<String>,
    pub architecture: Option<String>,
    pub config_path: Option<String>,
    pub seed: Option<u64>,
    pub checkpoint: Option<String>,
    pub out_dir: String,
    /// Command-line arguments without `--out-dir`, replayed by `rerun`.
    pub args: Vec<String>,
    pub outputs: Vec<String>,
    pub version: String,
}

/// `argv[1..]` with any `--out-dir` option removed.
pub fn strip_out_dir(args: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
            continue;
        }
        if a == "--out-dir" {
            skip = true;
            continue;
        }
        if a.starts_with("--out-dir=") {
            continue;
        }
        out.push(a.clone());
    }
    out
}

pub struct OutDir {
    pub path: PathBuf,
    pub written: Vec<String>,
}

impl OutDir {
    pub fn create(path: &Path) -> Result<Self> {
        std::fs::create_dir_all(path)
            .with_context(|| format!("cannot create output directory {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let p = self.path.join(name);
        std::fs::write(&p, contents).with_context(|| format!("cannot write {}", p.display()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}

/// Resolves model settings from `--config`, `--model` and overrides, falling
/// back to `fallback` (a checkpoint's recorded config) when neither is given.
pub fn model_config(args: &ModelArgs, fallback: Option<&ModelConfig>) -> Result<ModelConfig> {
    let mut cfg = match (&args.config, &args.model, fallback) {
        (Some(path), _, _) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            let cfg: ModelConfig = match toml::from_str(&text) {
                Ok(c) => c,
                Err(e) => {
                    return usage(format!(
                        "bad model config {}: {e}\nexpected `model = \"magnitude|resistor|circuit|conjugate\"` followed by that model's keys (see configs/)",
                        path.display()
                    ))
                }
            };
            if let Some(m) = &args.model {
                if m != cfg.name() {
                    return usage(format!(
                        "--model {m} conflicts with config model {}",
                        cfg.name()
                    ));
                }
            }
            cfg
        }
        (None, Some(name), fb) => match fb {
            Some(c) if c.name() == name => c.clone(),
            _ => match ModelConfig::default_for(name) {
                Ok(c) => c,
                Err(e) => return usage(e.to_string()),
            },
        },
        (None, None, Some(c)) => c.clone(),
        (None, None, None) => return usage("--model or --config is required"),
    };
    if args.nuisance.is_some() || args.sigma_l.is_some() {
        match &mut cfg {
            ModelConfig::Magnitude(m) => {
                if let Some(n) = args.nuisance {
                    m.nuisance = n;
                }
                if let Some(s) = args.sigma_l {
                    m.sigma_l = s;
                }
            }
            other => {
                return usage(format!(
                    "--nuisance/--sigma-l apply to the magnitude model, not {}",
                    other.name()
                ))
            }
        }
    }
    Ok(cfg)
}

pub fn build_model(cfg: &ModelConfig) -> Result<Box<dyn Model>> {
    match cfg.build() {
        Ok(m) => Ok(m),
        Err(e) => usage(e.to_string()),
    }
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => usage(format!("{what}: `{s}` is not a finite number")),
    }
}

/// Observation vectors from `--observe` pairs or `--observe-file`.
pub fn observations(args: &ObserveArgs, model: &dyn Model) -> Result<Vec<Vec<f64>>> {
    let names = model.observation_names();
    let n = names.len();
    match (&args.observe_file, args.observe.is_empty()) {
        (Some(_), false) => usage("use either --observe or --observe-file, not both"),
        (None, true) => usage(format!(
            "no observations given; expected {n} value(s): {}",
            names.join(", ")
        )),
        (None, false) => {
            let mut y = vec![None; n];
            let mut next = 0;
            for item in &args.observe {
                let (idx, val) = match item.split_once('=') {
                    Some((k, v)) => match names.iter().position(|x| x == k.trim()) {
                        Some(i) => (i, v),
                        None => {
                            return usage(format!(
                                "unknown observation `{k}`; expected one of {}",
                                names.join(", ")
                            ))
                        }
                    },
                    None => {
                        while next < n && y[next].is_some() {
                            next += 1;
                        }
                        (next, item.as_str())
                    }
                };
                if idx >= n {
                    return usage(format!("too many observations; the model takes {n}"));
                }
                y[idx] = Some(parse_f64(val, "--observe")?);
            }
            match y.into_iter().collect::<Option<Vec<f64>>>() {
                Some(v) => Ok(vec![v]),
                None => usage(format!(
                    "missing observations; expected {n}: {}",
                    names.join(", ")
                )),
            }
        }
        (Some(path), true) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read observations {}", path.display()))?;
            parse_observation_csv(&text, &names)
        }
    }
}

pub fn parse_observation_csv(text: &str, names: &[String]) -> Result<Vec<Vec<f64>>> {
    let header = text.lines().next().unwrap_or("").trim();
    if header.starts_with("freq,re,im") {
        let resp = match FrequencyResponse::from_csv(text) {
            Ok(r) => r,
            Err(e) => return usage(e.to_string()),
        };
        let y = resp.interleaved();
        if y.len() != names.len() {
            return usage(format!(
                "response has {} frequencies; the model expects {}",
                resp.freqs.len(),
                names.len() / 2
            ));
        }
        return Ok(vec![y]);
    }
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let idx: Vec<usize> = names
        .iter()
        .map(|n| cols.iter().position(|c| c == n))
        .collect::<Option<_>>()
        .map_or_else(
            || {
                usage(format!(
                    "observation CSV header must contain: {}",
                    names.join(",")
                ))
            },
            Ok,
        )?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return usage(format!("line {}: expected {} fields", i + 1, cols.len()));
        }
        rows.push(
            idx.iter()
                .map(|&j| parse_f64(f[j], &format!("line {}", i + 1)))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    if rows.is_empty() {
        return usage("observation CSV has no rows");
    }
    Ok(rows)
}

pub fn observations_csv(names: &[String], rows: &[Vec<f64>]) -> String {
    let mut s = names.join(",");
    s.push('\n');
    for r in rows {
        let v: Vec<String> = r.iter().map(|x| format!("{x:?}")).collect();
        s.push_str(&v.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_lr_schedule(s: &str) -> Result<Vec<(u64, f64)>> {
    let mut out = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let Some((t, lr)) = part.split_once(':') else {
            return usage(format!(
                "bad --lr-schedule entry `{part}` (want threshold:lr)"
            ));
        };
        let t: u64 = match t.trim().parse() {
            Ok(t) => t,
            Err(_) => return usage(format!("bad threshold `{t}` in --lr-schedule")),
        };
        out.push((t, parse_f64(lr, "--lr-schedule")?));
    }
    Ok(out)
}
