#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_disorder");

pub fn m2_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/m2.json")
}

pub fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

pub fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

/// Artifact-producing invocations on M2, keyed by golden file name.
pub fn artifact_commands() -> Vec<(&'static str, Vec<String>)> {
    let m2 = m2_path().to_string_lossy().into_owned();
    let v = |xs: &[&str]| {
        let mut out = Vec::new();
        for &x in xs {
            out.push(if x == "M2" { m2.clone() } else { x.to_string() });
        }
        out
    };
    vec![
        ("simulate_m2.csv", v(&["simulate", "--model", "M2", "--seed", "42", "--runs", "100", "--horizon", "30"])),
        (
            "solve_detect_m2.json",
            v(&["solve-detect", "--model", "M2", "--tol", "1e-9", "--grid-alpha", "11", "--grid-beta", "11"]),
        ),
        ("solve_d00_m2.json", v(&["solve-d00", "--model", "M2"])),
        (
            "evaluate_detect_m2.json",
            v(&["evaluate", "--model", "M2", "--seed", "7", "--runs", "5000", "--horizon", "200"]),
        ),
        (
            "evaluate_d00_m2.csv",
            v(&[
                "evaluate", "--model", "M2", "--problem", "d00", "--seed", "7", "--runs", "5000", "--horizon", "200",
                "--format", "csv",
            ]),
        ),
    ]
}

/// Output of `args` under the given thread count, or the failure message.
pub fn artifact(threads: Option<&str>, args: &[String]) -> Result<Vec<u8>, String> {
    let mut full: Vec<&str> = Vec::new();
    if let Some(t) = threads {
        full.extend(["--threads", t]);
    }
    full.extend(args.iter().map(String::as_str));
    let out = run(&full);
    if out.status.success() {
        Ok(out.stdout)
    } else {
        Err(format!("{full:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}
