//! Every CLI command re-run from its manifest reproduces its CSVs byte for byte.

use crate::Outcome;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_icattn");

fn icattn(out: &Path, args: &[&str]) -> Result<(), String> {
    let o = Command::new(BIN)
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`icattn {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&o.stderr).trim()
        ))
    }
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>, String> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    v.sort();
    Ok(v)
}

/// Re-runs `dir`'s manifest and compares every CSV; returns the count.
fn rerun_matches(dir: &Path) -> Result<usize, String> {
    let again = dir.with_extension("rerun");
    let manifest = dir.join("manifest.json");
    icattn(&again, &["rerun", "--manifest", manifest.to_str().unwrap()])?;
    let original = csv_files(dir)?;
    if original.is_empty() {
        return Err(format!("{} wrote no CSV", dir.display()));
    }
    for path in &original {
        let name = path.file_name().unwrap();
        let a = fs::read(path).map_err(|e| e.to_string())?;
        let b = fs::read(again.join(name))
            .map_err(|e| format!("rerun of {} lacks {name:?}: {e}", dir.display()))?;
        if a != b {
            return Err(format!(
                "{} differs on rerun of {}",
                name.to_string_lossy(),
                dir.display()
            ));
        }
    }
    Ok(original.len())
}

pub fn run() -> Outcome {
    let root = std::env::temp_dir().join(format!("icattn-acceptance-{}", std::process::id()));
    let _ = fs::remove_dir_all(&root);
    let result = run_in(&root);
    let _ = fs::remove_dir_all(&root);
    result
}

fn run_in(root: &Path) -> Outcome {
    let d = |name: &str| root.join(name);
    let ckpt = d("train").join("checkpoint.json");
    let ckpt = ckpt.to_str().unwrap();
    let response = d("generate").join("response.csv");
    let response = response.to_str().unwrap();
    let mag = ["--model", "magnitude", "--nuisance", "3"];

    let runs: Vec<(&str, Vec<&str>)> = vec![
        (
            "generate",
            vec![
                "generate", "--model", "circuit", "--count", "3", "--seed", "4",
            ],
        ),
        (
            "train",
            [
                &["train"],
                &mag[..],
                &[
                    "--arch",
                    "ff-att",
                    "--traces",
                    "640",
                    "--batch",
                    "32",
                    "--lr-schedule",
                    "0:1e-3",
                    "--pilot",
                    "64",
                ],
            ]
            .concat(),
        ),
        (
            "infer",
            [
                &["infer"],
                &mag[..],
                &[
                    "--checkpoint",
                    ckpt,
                    "--observe",
                    "200",
                    "--k",
                    "300",
                    "--repeats",
                    "2",
                    "--seed",
                    "1",
                ],
            ]
            .concat(),
        ),
        (
            "attention-report",
            [
                &["attention-report"],
                &mag[..],
                &["--checkpoint", ckpt, "--observe", "200", "--runs", "10"],
            ]
            .concat(),
        ),
        (
            "infer-circuit",
            vec![
                "infer",
                "--model",
                "circuit",
                "--arch",
                "prior",
                "--observe-file",
                response,
                "--k",
                "100",
            ],
        ),
        (
            "diagnose",
            vec![
                "diagnose",
                "--model",
                "circuit",
                "--arch",
                "prior",
                "--observe-file",
                response,
                "--k",
                "50",
                "--repeats",
                "2",
            ],
        ),
    ];
    let mut compared = 0;
    for (name, args) in &runs {
        icattn(&d(name), args)?;
        compared += rerun_matches(&d(name))?;
    }
    Ok(format!(
        "{} commands re-run from manifests, {compared} CSVs byte-identical",
        runs.len()
    ))
}
