use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qcavity(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcavity")).args(args).output().unwrap()
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn gate_run_writes_report_config_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = qcavity(&["gate", "--config", golden("reduced_gate.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.starts_with("gate: reduced fidelity"), "{stdout}");
    for f in ["gate_report.json", "config.json", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["tool"], "qcavity");
    assert_eq!(manifest["task"], "gate");
}

#[test]
fn dump_writes_operators() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qcavity(&["dump", "--config", golden("full_dump.json").to_str().unwrap(), "--out", tmp.path().to_str().unwrap(), "--quiet"]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    let basis = fs::read_to_string(tmp.path().join("basis.csv")).unwrap();
    assert_eq!(basis.lines().count(), 28);
    let jumps = fs::read_to_string(tmp.path().join("jumps.csv")).unwrap();
    assert_eq!(jumps.lines().count(), 6);
    assert!(tmp.path().join("jump_4.txt").is_file());
}

#[test]
fn missing_config_file_is_an_io_error() {
    let o = qcavity(&["gate", "--config", "/nonexistent/config.json"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));
}

#[test]
fn invalid_config_exits_1_with_the_key_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"task": "gate", "model": "reduced", "params": {"kapa": 1}}"#).unwrap();
    let o = qcavity(&["gate", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("params.kapa"));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn task_mismatch_exits_1() {
    let o = qcavity(&["berry", "--config", golden("reduced_gate.json").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("task"));
}

#[test]
fn argument_errors_exit_1() {
    assert_eq!(code(&qcavity(&["gate"])), 1);
    assert_eq!(code(&qcavity(&["gate", "--config", "x.json", "--bogus"])), 1);
    assert_eq!(code(&qcavity(&["gate", "--config", golden("reduced_gate.json").to_str().unwrap(), "--workers", "0"])), 1);
    assert_eq!(code(&qcavity(&["gate", "--config", golden("reduced_gate.json").to_str().unwrap(), "--dt", "-1"])), 1);
    assert_eq!(code(&qcavity(&["--help"])), 0);
}

#[test]
fn config_reference_lists_every_key() {
    let o = qcavity(&["config-reference"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for key in ["params.Delta", "params.Omega", "scan.axis", "loop.Omega_bar", "spec.fock_cutoff"] {
        assert!(text.contains(key), "{key}");
    }
}

#[test]
fn out_flag_beats_config_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    let configured = tmp.path().join("configured");
    fs::write(&cfg, format!(r#"{{"task": "gate", "model": "reduced", "output": {:?}}}"#, configured.to_str().unwrap())).unwrap();
    let o = qcavity(&["gate", "--config", cfg.to_str().unwrap(), "--quiet"]);
    assert_eq!(code(&o), 0);
    assert!(configured.join("gate_report.json").is_file());
    let flag = tmp.path().join("flag");
    let o = qcavity(&["gate", "--config", cfg.to_str().unwrap(), "--out", flag.to_str().unwrap(), "--quiet"]);
    assert_eq!(code(&o), 0);
    assert!(flag.join("gate_report.json").is_file());
}

#[test]
fn dt_flag_is_recorded_in_the_written_config() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qcavity(&[
        "gate",
        "--config",
        golden("reduced_gate.json").to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
        "--dt",
        "0.5",
        "--quiet",
    ]);
    assert_eq!(code(&o), 0);
    let written: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(written["dt"], 0.5);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("gate_report.json")).unwrap()).unwrap();
    assert!(report["dt"].as_f64().unwrap() <= 0.5);
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn golden_runs_are_byte_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    for (task, name) in [("scan", "dispersive_scan.json"), ("simulate", "eliminated_simulate.json"), ("dump", "full_dump.json")] {
        let mut runs = Vec::new();
        for (k, workers) in ["1", "1", "4"].into_iter().enumerate() {
            let out = tmp.path().join(format!("{name}-{k}"));
            let o = qcavity(&[task, "--config", golden(name).to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", workers, "--quiet"]);
            assert_eq!(code(&o), 0, "{name}");
            runs.push(read_all(&out));
        }
        assert_eq!(runs[0], runs[1], "{name}");
        assert_eq!(runs[0], runs[2], "{name}");
    }
}
