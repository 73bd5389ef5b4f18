use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_fleet-prism");

fn spec_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data/small_spec.json")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stage_args<'a>(stage: &'a str, dir: &'a Path, v: &'a str, m: &'a str) -> Vec<&'a str> {
    vec![
        stage,
        "--vehicles-csv",
        v,
        "--maintenance-csv",
        m,
        "--out-dir",
        s(dir),
        "--rank",
        "3",
        "--max-iter",
        "100",
        "--bdpt-draws",
        "500",
        "--arima-p",
        "1",
        "--arima-d",
        "1",
        "--arima-q",
        "0",
        "--cost-grouping",
        "make-model",
    ]
}

fn checksums(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let digest = Sha256::digest(std::fs::read(&p).unwrap());
                let key = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(key, digest.iter().map(|b| format!("{b:02x}")).collect());
            }
        }
    }
    out
}

#[test]
fn gen_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gen", "--spec", s(&spec_path()), "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["ground_truth.json", "maintenance.csv", "vehicles.csv"]);
}

#[test]
fn gen_with_missing_spec_fails() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = run(&["gen", "--spec", s(&missing), "--out", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

#[test]
fn prism_without_model_names_the_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["gen", "--spec", s(&spec_path()), "--out", s(dir.path())]).status.success());
    let v = dir.path().join("vehicles.csv");
    let m = dir.path().join("maintenance.csv");
    let out = run(&stage_args("prism", dir.path(), s(&v), s(&m)));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.json"));
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"rnak": 3}"#).unwrap();
    let out = run(&["decompose", "--config", s(&cfg)]);
    assert!(!out.status.success());
}

#[test]
fn run_all_is_reproducible() {
    let data = tempfile::tempdir().unwrap();
    assert!(run(&["gen", "--spec", s(&spec_path()), "--out", s(data.path())]).status.success());
    let v = data.path().join("vehicles.csv");
    let m = data.path().join("maintenance.csv");
    let out_dir = data.path().join("run");
    let mut sums = Vec::new();
    for _ in 0..2 {
        let out = run(&stage_args("run-all", &out_dir, s(&v), s(&m)));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        sums.push(checksums(&out_dir));
    }
    assert!(sums[0].contains_key("model.json"));
    assert!(sums[0].contains_key("prism_report.json"));
    assert!(sums[0].contains_key("dsm.csv"));
    assert!(sums[0].contains_key("forecast_seq_summary.json"));
    assert_eq!(sums[0], sums[1]);
}
