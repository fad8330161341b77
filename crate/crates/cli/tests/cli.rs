//! The `ergovar` binary: validation, exit codes and artifacts.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ergovar(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ergovar"))
        .args(args)
        .env_remove(ergovar_cli::OUTPUT_DIR_ENV)
        .arg("--set")
        .arg(format!("output_dir={}", out_dir.display()))
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    v.sort();
    v
}

#[test]
fn spectrum_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = ergovar(&["run", "--set", "command=spectrum", "--set", "system=doubling", "--set", "N=4"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(text(&out.stdout).lines().count(), 1);
    let names = files(dir.path());
    assert_eq!(names.len(), 2, "{names:?}");
    let json = names.iter().find(|n| n.ends_with(".json")).unwrap();
    assert!(json.starts_with("spectrum-doubling-"));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join(json)).unwrap()).unwrap();
    assert_eq!(v["N"], 4);
    assert!(v["lambda2"].as_f64().unwrap().abs() < 1e-12);
    assert!((v["gap"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tower.json");
    fs::write(&cfg, r#"{"command": "tower", "system": "doubling", "base": "0/1..1/2", "q_max": 10, "pairs": 50}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = ergovar(&["run", cfg.to_str().unwrap(), "--set", "q_max=30"], &out_dir);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let names = files(&out_dir);
    let json = names.iter().find(|n| n.ends_with(".json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join(json)).unwrap()).unwrap();
    assert_eq!(v["q_max"], 30);
    assert!((v["kac_product"].as_f64().unwrap() - 1.0).abs() <= 1e-6);
    assert!((v["fitted_log_theta"].as_f64().unwrap() + std::f64::consts::LN_2).abs() <= 1e-9);
    assert_eq!(v["contraction"]["violations"], 0);
}

#[test]
fn validation_errors_exit_one_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = ergovar(
        &["run", "--set", "command=spectrum", "--set", "system=lorentz-gas", "--set", "N=0", "--set", "colour=red"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let err = text(&out.stderr);
    assert!(err.contains("N must be ≥ 1"), "{err}");
    assert!(err.contains("doubling, tent, logistic, lozi, henon"), "{err}");
    assert!(err.contains("unknown key \"colour\""), "{err}");
    assert!(!dir.path().exists() || files(dir.path()).is_empty());
}

#[test]
fn validate_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let ok = ergovar(&["validate", "--set", "command=simulate", "--set", "system=henon"], dir.path());
    assert_eq!(ok.status.code(), Some(0));
    assert!(text(&ok.stdout).starts_with("valid: simulate on henon"));
    let bad = ergovar(&["validate", "--set", "command=simulate"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    assert!(text(&bad.stderr).contains("system is required"));
}

#[test]
fn computational_errors_exit_two_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = ergovar(
        &["run", "--set", "command=simulate", "--set", "system=henon", "--set", "params.a=3.0", "--set", "seed_state=[0.5,0.5]"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("divergence"), "{}", text(&out.stderr));
    assert!(!dir.path().exists() || files(dir.path()).is_empty());
    // Too few CLT windows is a parameter problem, not a computational one.
    let out = ergovar(
        &["run", "--set", "command=clt", "--set", "system=doubling", "--set", "phi=cos2pi", "--set", "sample_count=500"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1), "{}", text(&out.stderr));
}

#[test]
fn environment_overrides_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let env_dir = dir.path().join("env");
    let out = Command::new(env!("CARGO_BIN_EXE_ergovar"))
        .args(["run", "--set", "command=spectrum", "--set", "system=tent", "--set", "N=16"])
        .arg("--set")
        .arg(format!("output_dir={}", dir.path().join("cfg").display()))
        .env(ergovar_cli::OUTPUT_DIR_ENV, &env_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(files(&env_dir).len(), 2);
    assert!(!dir.path().join("cfg").exists());
}

#[test]
fn svg_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let out = ergovar(
        &["run", "--set", "command=density", "--set", "system=logistic", "--set", "N=200", "--set", r#"formats=["csv","svg"]"#],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let names = files(dir.path());
    assert!(names.iter().any(|n| n.ends_with(".svg")) && names.iter().any(|n| n.ends_with(".csv")));
    assert!(!names.iter().any(|n| n.ends_with(".json")));
    let csv = fs::read_to_string(dir.path().join(names.iter().find(|n| n.ends_with(".csv")).unwrap())).unwrap();
    assert_eq!(csv.lines().next(), Some("bin,left,right,mass,reference"));
    assert_eq!(csv.lines().count(), 201);
}

#[test]
fn catalog_lists_everything() {
    let out = Command::new(env!("CARGO_BIN_EXE_ergovar")).arg("catalog").output().unwrap();
    let s = text(&out.stdout);
    for name in ["spectrum", "henon", "cos2pi", "pair-correlation"] {
        assert!(s.contains(name), "{s}");
    }
}
