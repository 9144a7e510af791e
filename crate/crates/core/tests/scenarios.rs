use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use qcavity_core::scenario::{parse_config, run, RunOptions, Task};
use qcavity_core::Error;

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/broken")
}

fn golden_configs() -> Vec<(String, String)> {
    let mut v: Vec<_> = fs::read_dir(golden_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn golden_configs_parse_and_round_trip() {
    let configs = golden_configs();
    assert!(configs.len() >= 7);
    for (name, text) in configs {
        let cfg = parse_config(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        let canonical = cfg.canonical_json().unwrap();
        let again = parse_config(&canonical).unwrap();
        assert_eq!(again, cfg, "{name}");
        assert_eq!(again.canonical_json().unwrap(), canonical, "{name}");
        assert_eq!(again.hash().unwrap(), cfg.hash().unwrap(), "{name}");
    }
}

#[test]
fn broken_fixtures_name_the_offending_key() {
    let expected: BTreeMap<String, String> =
        serde_json::from_str(&fs::read_to_string(fixtures().join("expected.json")).unwrap()).unwrap();
    for (file, path) in &expected {
        let text = fs::read_to_string(fixtures().join(file)).unwrap();
        match parse_config(&text) {
            Err(Error::Config { path: got, .. }) => assert_eq!(&got, path, "{file}"),
            other => panic!("{file}: expected a config error at {path}, got {other:?}"),
        }
    }
    let on_disk = fs::read_dir(fixtures()).unwrap().count() - 1;
    assert_eq!(on_disk, expected.len(), "every broken fixture has an expected path");
}

#[test]
fn output_is_excluded_from_the_hash() {
    let a = parse_config(r#"{"task": "gate", "model": "reduced", "output": "x"}"#).unwrap();
    let b = parse_config(r#"{"task": "gate", "model": "reduced", "output": "y"}"#).unwrap();
    let c = parse_config(r#"{"task": "gate", "model": "reduced", "params": {"Omega": 0.01}}"#).unwrap();
    assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    assert_ne!(a.hash().unwrap(), c.hash().unwrap());
}

#[test]
fn delta_shortcut_equals_explicit_frequencies() {
    let a = parse_config(r#"{"task": "gate", "model": "dispersive", "params": {"Delta": 40, "Omega": 0.001}}"#).unwrap();
    let b = parse_config(
        r#"{"task": "gate", "model": "dispersive", "params": {"omega0": 0, "omega3": 0, "omega_c": 40, "Omega": 0.001}}"#,
    )
    .unwrap();
    assert_eq!(a, b);
}

#[test]
fn berry_defaults_to_the_geometric_model() {
    let cfg = parse_config(r#"{"task": "berry"}"#).unwrap();
    assert_eq!(cfg.task, Task::Berry);
    assert_eq!(cfg.model.name(), "geometric");
}

#[test]
fn run_writes_a_consistent_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(golden_dir().join("reduced_gate.json")).unwrap();
    let cfg = parse_config(&text).unwrap();
    let out = run(&cfg, &RunOptions { out_dir: tmp.path().to_path_buf(), workers: 1 }).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_sha256"], cfg.hash().unwrap());
    let listed = manifest["files"].as_array().unwrap();
    assert_eq!(listed.len(), out.files.len());
    for f in listed {
        let bytes = fs::read(tmp.path().join(f["name"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"], bytes.len());
        assert_eq!(f["sha256"], qcavity_core::scenario::sha256_hex(&bytes));
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("gate_report.json")).unwrap()).unwrap();
    assert!(report["fidelity"].as_f64().unwrap() > 1.0 - 1e-6);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(golden_dir().join("dispersive_scan.json")).unwrap();
    let cfg = parse_config(&text).unwrap();
    let mut outputs = Vec::new();
    for (k, workers) in [1, 1, 3].into_iter().enumerate() {
        let dir = tmp.path().join(k.to_string());
        run(&cfg, &RunOptions { out_dir: dir.clone(), workers }).unwrap();
        outputs.push((fs::read(dir.join("scan.csv")).unwrap(), fs::read(dir.join("manifest.json")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let cfg = parse_config(r#"{"task": "gate", "model": "reduced"}"#).unwrap();
    let err = run(&cfg, &RunOptions { out_dir: blocker.join("sub"), workers: 1 }).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}
