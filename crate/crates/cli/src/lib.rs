//! Configuration-driven front end for `ergovar`: validates a JSON run
//! description, dispatches it to the toolkit and writes the resulting
//! artifacts.

pub mod artifacts;
mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

pub use config::{validate, validate_with, Command, ConfigError, Format, RunConfig, OUTPUT_DIR_ENV};

/// Successful run: summary lines and written files.
#[derive(Debug)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub artifacts: Vec<PathBuf>,
}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Core(ergovar::Error),
    Io(std::io::Error),
}

impl RunError {
    /// 1 for invalid input, 2 for failures of the computation or the disk.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            RunError::Core(e) if e.is_computational() || matches!(e, ergovar::Error::Io(_)) => 2,
            RunError::Core(_) => 1,
            RunError::Io(_) => 2,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => e.fmt(f),
            RunError::Core(e) => e.fmt(f),
            RunError::Io(e) => write!(f, "cannot write artifacts: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<ergovar::Error> for RunError {
    fn from(e: ergovar::Error) -> Self {
        RunError::Core(e)
    }
}

/// Output directory: the environment override if set, else the config's.
pub fn output_dir(cfg: &RunConfig) -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| cfg.output_dir.clone())
}

/// Runs `cfg` with at most `workers` sampling threads and writes its
/// artifacts into [`output_dir`].
pub fn run(cfg: &RunConfig, workers: Option<usize>) -> Result<Outcome, RunError> {
    run_into(cfg, workers, &output_dir(cfg))
}

pub fn run_into(cfg: &RunConfig, workers: Option<usize>, dir: &std::path::Path) -> Result<Outcome, RunError> {
    let out = ergovar::montecarlo::with_workers(workers, || commands::dispatch(cfg))??;
    let artifacts = out.artifacts.write(dir, &cfg.artifact_stem()).map_err(RunError::Io)?;
    Ok(Outcome { lines: out.lines, artifacts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn go(text: &str, dir: &std::path::Path) -> Result<Outcome, RunError> {
        let cfg = validate(text)?;
        run_into(&cfg, None, dir)
    }

    fn json_artifact(o: &Outcome) -> serde_json::Value {
        let p = o.artifacts.iter().find(|p| p.extension().is_some_and(|e| e == "json")).unwrap();
        serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
    }

    #[test]
    fn spectrum_of_four_bins() {
        let dir = tempfile::tempdir().unwrap();
        let o = go(r#"{"command": "spectrum", "system": "doubling", "N": 4}"#, dir.path()).unwrap();
        assert_eq!(o.lines.len(), 1);
        assert_eq!(o.artifacts.len(), 2);
        let v = json_artifact(&o);
        assert_eq!(v["N"], 4);
        assert_eq!(v["lambda2"].as_f64(), Some(0.0));
        assert_eq!(v["gap"].as_f64(), Some(1.0));
        let name = o.artifacts[0].file_name().unwrap().to_str().unwrap();
        assert!(name.starts_with("spectrum-doubling-"), "{name}");
    }

    #[test]
    fn variance_matches_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let o = go(
            r#"{"command": "variance", "system": "doubling", "family": "birkhoff-cos2pi", "n": 10, "sample_count": 100000}"#,
            dir.path(),
        )
        .unwrap();
        let v = json_artifact(&o);
        let (value, se) = (v["value"].as_f64().unwrap(), v["std_error"].as_f64().unwrap());
        assert!((value - 0.05).abs() <= 3.0 * se, "{value} ± {se}");
        assert_eq!(v["n_samples"], 100000);
        assert_eq!(v["family"], "birkhoff-cos2pi");
    }

    #[test]
    fn tower_summary() {
        let dir = tempfile::tempdir().unwrap();
        let o = go(r#"{"command": "tower", "system": "doubling", "base": "0/1..1/2", "q_max": 30, "pairs": 100}"#, dir.path()).unwrap();
        let v = json_artifact(&o);
        assert!((v["kac_product"].as_f64().unwrap() - 1.0).abs() <= 1e-6);
        assert!((v["fitted_log_theta"].as_f64().unwrap() + std::f64::consts::LN_2).abs() <= 1e-9);
        assert_eq!(v["contraction"]["violations"], 0);
        let csv = o.artifacts.iter().find(|p| p.extension().is_some_and(|e| e == "csv")).unwrap();
        assert_eq!(fs::read_to_string(csv).unwrap().lines().count(), 31);
    }

    #[test]
    fn exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let e = go(r#"{"command": "spectrum", "system": "doubling", "N": 0}"#, dir.path()).unwrap_err();
        assert_eq!(e.exit_code(), 1);
        let e = go(r#"{"command": "simulate", "system": "henon", "params": {"a": 3.0}, "seed_state": [0.5, 0.5]}"#, dir.path())
            .unwrap_err();
        assert_eq!(e.exit_code(), 2, "{e}");
        assert!(e.to_string().contains("divergence"), "{e}");
        let e = go(r#"{"command": "tower", "system": "doubling", "base": "1/4..3/4", "q_max": 5}"#, dir.path()).unwrap_err();
        assert_eq!(e.exit_code(), 1, "{e}");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn formats_select_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let o = go(
            r#"{"command": "correlations", "system": "tent", "phi": "identity", "lags": 5, "N": 64, "sample_count": 2000, "formats": ["csv", "svg"]}"#,
            dir.path(),
        )
        .unwrap();
        let exts: Vec<_> = o.artifacts.iter().map(|p| p.extension().unwrap().to_str().unwrap().to_string()).collect();
        assert_eq!(exts, ["csv", "svg"]);
        let csv = fs::read_to_string(&o.artifacts[0]).unwrap();
        assert_eq!(csv.lines().next(), Some("lag,value,std_error,ci_low,ci_high,operator"));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let text = r#"{"command": "devroye", "system": "lozi", "families": ["weighted-sup-identity", "birkhoff-cos2pi"], "n_grid": [5, 20], "sample_count": 2000}"#;
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = validate(text).unwrap();
        let oa = run_into(&cfg, Some(1), a.path()).unwrap();
        let ob = run_into(&cfg, Some(3), b.path()).unwrap();
        assert_eq!(oa.artifacts.len(), 2);
        for (pa, pb) in oa.artifacts.iter().zip(&ob.artifacts) {
            assert_eq!(pa.file_name(), pb.file_name());
            assert_eq!(fs::read(pa).unwrap(), fs::read(pb).unwrap());
        }
    }
}
