//! Binary-level behaviour: stage outputs and the error contract.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sleeplite_core::signal_io::write_subject;
use sleeplite_core::EcgRecord;

fn sleeplite(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sleeplite"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn dataset_with_one_record(root: &Path, seconds: usize) -> std::path::PathBuf {
    let data = root.join("dataset");
    let samples = (0..seconds * 128).map(|i| (i as f64 * 0.05).sin()).collect();
    let rec = EcgRecord::new(samples, 128, "rec01").unwrap();
    write_subject(&data, &rec, &[]).unwrap();
    data
}

fn config_for(root: &Path, dataset: &Path) -> std::path::PathBuf {
    let cfg = root.join("cfg.toml");
    std::fs::write(&cfg, format!("[data]\ndataset_dir = {:?}\n", dataset.to_str().unwrap())).unwrap();
    cfg
}

#[test]
fn window_61_s_record_yields_51_windows() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset_with_one_record(dir.path(), 61);
    let cfg = config_for(dir.path(), &data);
    let out = dir.path().join("out");
    let o = sleeplite(
        &out,
        &["--config", cfg.to_str().unwrap(), "window", "--scheme", "WIN11", "--no-undersample"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("windows").join("manifest.json")).unwrap()).unwrap();
    let s = &manifest["summary"];
    assert_eq!(s["windows"], 51);
    assert_eq!(s["scheme"], "WIN11");
    let parts: u64 = ["train", "val", "test"].iter().map(|k| s[*k].as_u64().unwrap()).sum();
    assert_eq!(parts, 51);
    assert_eq!(manifest["command"], "window");
    assert!(manifest["artifacts"].as_object().unwrap().keys().any(|k| k.ends_with("train.slws")));
}

#[test]
fn unknown_scheme_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = sleeplite(dir.path(), &["window", "--scheme", "WIN99"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    let line = err.lines().last().unwrap();
    assert!(line.starts_with("error: kind=config reason="), "{line}");
    assert!(line.contains("unknown windowing scheme"), "{line}");
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = sleeplite(dir.path(), &["train-cnn"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error: kind=data"));
}

#[test]
fn bad_usage_exits_1_and_help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let o = sleeplite(dir.path(), &["no-such-command"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error: kind=config"));
    let o = sleeplite(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("reproduce-synthetic"));
}

#[test]
fn rerunning_a_stage_replaces_its_directory() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset_with_one_record(dir.path(), 80);
    let cfg = config_for(dir.path(), &data);
    let out = dir.path().join("out");
    let c = cfg.to_str().unwrap();
    let stray = out.join("windows").join("stray.txt");
    assert!(sleeplite(&out, &["--config", c, "window", "--no-undersample"]).status.success());
    std::fs::write(&stray, "x").unwrap();
    assert!(sleeplite(&out, &["--config", c, "window", "--no-undersample"]).status.success());
    assert!(!stray.exists());
}
