//! Run configuration: one JSON document, validated in full before any
//! computation starts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;

use ergovar::devroye::FamilySpec;
use ergovar::montecarlo::{Method, SeedDistribution};
use ergovar::tower::{parse_base, Dyadic};
use ergovar::{DynamicalSystem, EnsembleSpec, SiteFunction};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

pub const OUTPUT_DIR_ENV: &str = "ERGOVAR_OUTPUT_DIR";

pub const COMMANDS: [&str; 8] = ["simulate", "density", "spectrum", "variance", "devroye", "tower", "correlations", "clt"];

const KEYS: [&str; 27] = [
    "command",
    "system",
    "params",
    "family",
    "phi",
    "psi",
    "families",
    "n",
    "n_grid",
    "eta",
    "N",
    "lags",
    "q_max",
    "base",
    "bins_per_level",
    "pairs",
    "sample_count",
    "burn_in",
    "seed_distribution",
    "method",
    "batches",
    "master_seed",
    "length",
    "seed_state",
    "output_dir",
    "formats",
    "svg",
];

/// Keys that choose where or how fast results are produced, not what they
/// are; they do not enter the artifact hash.
const PLACEMENT_KEYS: [&str; 1] = ["output_dir"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Density,
    Spectrum,
    Variance,
    Devroye,
    Tower,
    Correlations,
    Clt,
}

impl Command {
    pub fn name(&self) -> &'static str {
        COMMANDS[*self as usize]
    }

    fn parse(s: &str) -> Option<Self> {
        use Command::*;
        [Simulate, Density, Spectrum, Variance, Devroye, Tower, Correlations, Clt]
            .into_iter()
            .find(|c| c.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Svg => "svg",
        }
    }
}

/// Every violation found in a configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub violations: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration ({} problem{}):", self.violations.len(), if self.violations.len() == 1 { "" } else { "s" })?;
        for v in &self.violations {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub command: Command,
    pub system: DynamicalSystem,
    pub families: Vec<FamilySpec>,
    pub phi: Option<String>,
    pub psi: Option<String>,
    pub n: Option<usize>,
    pub n_grid: Vec<usize>,
    pub eta: Option<f64>,
    pub bins: Option<usize>,
    pub lags: usize,
    pub q_max: Option<usize>,
    pub base: (Dyadic, Dyadic),
    pub bins_per_level: usize,
    pub pairs: usize,
    pub sample_count: usize,
    pub burn_in: u64,
    pub seed_distribution: Option<SeedDistribution>,
    pub method: Method,
    pub master_seed: u64,
    pub length: usize,
    pub seed_state: Option<Vec<f64>>,
    pub output_dir: PathBuf,
    pub formats: BTreeSet<Format>,
    canonical: Map<String, Value>,
}

impl RunConfig {
    pub fn ensemble(&self) -> EnsembleSpec {
        let mut spec = EnsembleSpec::new(self.system, self.sample_count, self.master_seed)
            .with_burn_in(self.burn_in)
            .with_method(self.method);
        if let Some(d) = self.seed_distribution {
            spec = spec.with_seed_distribution(d);
        }
        spec
    }

    /// First 12 hex digits of the SHA-256 of the canonical configuration.
    pub fn hash(&self) -> String {
        let mut m = self.canonical.clone();
        for k in PLACEMENT_KEYS {
            m.remove(k);
        }
        let text = serde_json::to_string(&Value::Object(m)).expect("json values serialize");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    /// `<command>-<system>-<hash>`.
    pub fn artifact_stem(&self) -> String {
        format!("{}-{}-{}", self.command.name(), self.system.name(), self.hash())
    }

    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

/// Applies `key=value` overrides. Values parse as JSON when they can and
/// fall back to strings; `a.b=v` sets a key inside object `a`.
pub fn apply_overrides(doc: &mut Map<String, Value>, sets: &[String]) -> Result<(), ConfigError> {
    let mut violations = Vec::new();
    for s in sets {
        let Some((key, raw)) = s.split_once('=') else {
            violations.push(format!("--set {s:?} is not of the form key=value"));
            continue;
        };
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        match key.split_once('.') {
            None => {
                doc.insert(key.to_string(), value);
            }
            Some((outer, inner)) => {
                let entry = doc.entry(outer.to_string()).or_insert_with(|| Value::Object(Map::new()));
                match entry {
                    Value::Object(m) => {
                        m.insert(inner.to_string(), value);
                    }
                    _ => violations.push(format!("--set {key}: \"{outer}\" is not an object")),
                }
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(ConfigError { violations })
    }
}

/// Parses and validates raw configuration text.
pub fn validate(text: &str) -> Result<RunConfig, ConfigError> {
    validate_with(text, &[])
}

pub fn validate_with(text: &str, sets: &[String]) -> Result<RunConfig, ConfigError> {
    let value: Value = if text.trim().is_empty() {
        Value::Object(Map::new())
    } else {
        serde_json::from_str(text).map_err(|e| ConfigError { violations: vec![format!("not valid JSON: {e}")] })?
    };
    let Value::Object(mut doc) = value else {
        return Err(ConfigError { violations: vec!["configuration must be a JSON object".into()] });
    };
    apply_overrides(&mut doc, sets)?;
    Validator { doc: &doc, violations: Vec::new() }.run()
}

struct Validator<'a> {
    doc: &'a Map<String, Value>,
    violations: Vec<String>,
}

impl Validator<'_> {
    fn bad(&mut self, msg: String) {
        self.violations.push(msg);
    }

    fn uint(&mut self, key: &str, min: u64) -> Option<u64> {
        let v = self.doc.get(key)?;
        match v.as_u64() {
            Some(x) if x >= min => Some(x),
            Some(_) => {
                self.bad(format!("{key} must be ≥ {min}"));
                None
            }
            None => {
                if v.as_i64().is_some() || v.as_f64().is_some_and(|f| f.fract() == 0.0 && f < min as f64) {
                    self.bad(format!("{key} must be ≥ {min}"));
                } else {
                    self.bad(format!("{key} must be a nonnegative integer, got {v}"));
                }
                None
            }
        }
    }

    fn usize(&mut self, key: &str, min: usize) -> Option<usize> {
        self.uint(key, min as u64).map(|x| x as usize)
    }

    fn real(&mut self, key: &str) -> Option<f64> {
        let v = self.doc.get(key)?;
        match v.as_f64() {
            Some(x) => Some(x),
            None => {
                self.bad(format!("{key} must be a number, got {v}"));
                None
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        let v = self.doc.get(key)?;
        match v.as_str() {
            Some(s) => Some(s.to_string()),
            None => {
                self.bad(format!("{key} must be a string, got {v}"));
                None
            }
        }
    }

    fn list<T>(&mut self, key: &str, mut item: impl FnMut(&mut Self, &Value) -> Option<T>) -> Option<Vec<T>> {
        let v = self.doc.get(key)?;
        let Some(items) = v.as_array() else {
            self.bad(format!("{key} must be a list, got {v}"));
            return None;
        };
        let mut out = Vec::new();
        for x in items {
            out.push(item(self, x)?);
        }
        Some(out)
    }

    fn site(&mut self, key: &str) -> Option<String> {
        let name = self.string(key)?;
        match SiteFunction::from_name(&name) {
            Ok(_) => Some(name),
            Err(e) => {
                self.bad(format!("{key}: {e}"));
                None
            }
        }
    }

    fn system(&mut self) -> Option<DynamicalSystem> {
        let (name, params_value) = match self.doc.get("system") {
            None => {
                self.bad("system is required".into());
                return None;
            }
            Some(Value::String(s)) => (s.clone(), self.doc.get("params").cloned()),
            Some(Value::Object(m)) => {
                let Some(name) = m.get("name").and_then(Value::as_str) else {
                    self.bad("system object needs a \"name\"".into());
                    return None;
                };
                let rest: Map<String, Value> = m.iter().filter(|(k, _)| *k != "name").map(|(k, v)| (k.clone(), v.clone())).collect();
                (name.to_string(), Some(Value::Object(rest)))
            }
            Some(v) => {
                self.bad(format!("system must be a name or an object, got {v}"));
                return None;
            }
        };
        let mut params = BTreeMap::new();
        if let Some(p) = params_value {
            let Value::Object(p) = p else {
                self.bad("params must be an object of numbers".into());
                return None;
            };
            for (k, v) in p {
                match v.as_f64() {
                    Some(x) => {
                        params.insert(k, x);
                    }
                    None => self.bad(format!("system parameter {k} must be a number, got {v}")),
                }
            }
        }
        match DynamicalSystem::from_name(&name, &params) {
            Ok(s) => Some(s),
            Err(e) => {
                self.bad(e.to_string());
                None
            }
        }
    }

    fn families(&mut self) -> Vec<FamilySpec> {
        let mut out = Vec::new();
        if let Some(names) = self.list("families", |v, x| match x.as_str() {
            Some(s) => Some(s.to_string()),
            None => {
                v.bad(format!("families entries must be strings, got {x}"));
                None
            }
        }) {
            for name in names {
                match FamilySpec::parse(&name) {
                    Ok(f) => out.push(f),
                    Err(e) => self.bad(format!("families: {e}")),
                }
            }
        }
        if let Some(family) = self.string("family") {
            let parsed = match self.doc.get("phi").and_then(Value::as_str) {
                Some(phi) if !family.contains('-') || family == "constant" => FamilySpec::new(&family, phi),
                _ => FamilySpec::parse(&family),
            };
            match parsed {
                Ok(f) => out.push(f),
                Err(e) => self.bad(format!("family: {e}")),
            }
        }
        out
    }

    fn run(mut self) -> Result<RunConfig, ConfigError> {
        for key in self.doc.keys() {
            if !KEYS.contains(&key.as_str()) {
                self.violations.push(format!("unknown key \"{key}\"; valid keys: {}", KEYS.join(", ")));
            }
        }
        let command = match self.string("command") {
            None if !self.doc.contains_key("command") => {
                self.bad(format!("command is required; one of {}", COMMANDS.join(", ")));
                None
            }
            None => None,
            Some(c) => {
                let parsed = Command::parse(&c);
                if parsed.is_none() {
                    self.bad(format!("unknown command \"{c}\"; one of {}", COMMANDS.join(", ")));
                }
                parsed
            }
        };
        let system = self.system();
        let families = self.families();
        let phi = self.site("phi");
        let psi = self.site("psi");
        let n = self.usize("n", 1);
        let n_grid = self.list("n_grid", |v, x| match x.as_u64() {
            Some(n) if n >= 1 => Some(n as usize),
            _ => {
                v.bad(format!("n_grid entries must be integers ≥ 1, got {x}"));
                None
            }
        });
        let eta = self.real("eta");
        if let Some(e) = eta {
            if !(e > 0.0 && e <= 1.0) {
                self.bad(format!("eta must lie in (0, 1], got {e}"));
            }
        }
        let bins = self.usize("N", 1);
        let lags = self.usize("lags", 1).unwrap_or(10);
        let q_max = self.usize("q_max", 1);
        let base = match self.string("base") {
            None => Some((Dyadic::ZERO, Dyadic::half_pow(1))),
            Some(b) => match parse_base(&b) {
                Ok(b) => Some(b),
                Err(e) => {
                    self.bad(format!("base: {e}"));
                    None
                }
            },
        };
        let bins_per_level = self.usize("bins_per_level", 1).unwrap_or(1);
        let pairs = self.usize("pairs", 0).unwrap_or(1000);
        let sample_count = self.usize("sample_count", 1).unwrap_or(10_000);
        let burn_in = self.uint("burn_in", 0).unwrap_or(1000);
        let seed_distribution = match self.string("seed_distribution").as_deref() {
            None => None,
            Some("uniform-on-domain") => Some(SeedDistribution::UniformOnDomain),
            Some("uniform-on-attractor-box") => Some(SeedDistribution::UniformOnAttractorBox),
            Some(other) => {
                self.bad(format!(
                    "seed_distribution \"{other}\" is not one of uniform-on-domain, uniform-on-attractor-box"
                ));
                None
            }
        };
        let batches = self.usize("batches", 2);
        let method = match self.string("method").as_deref() {
            None | Some("iid-windows") => {
                if batches.is_some() {
                    self.bad("batches is only meaningful with method batch-means".into());
                }
                Method::IidWindows
            }
            Some("batch-means") => Method::BatchMeans { batches: batches.unwrap_or(30) },
            Some(other) => {
                self.bad(format!("method \"{other}\" is not one of iid-windows, batch-means"));
                Method::IidWindows
            }
        };
        let master_seed = self.uint("master_seed", 0).unwrap_or(0);
        let length = self.usize("length", 1).unwrap_or(1000);
        let seed_state = self.list("seed_state", |v, x| match x.as_f64() {
            Some(f) => Some(f),
            None => {
                v.bad(format!("seed_state entries must be numbers, got {x}"));
                None
            }
        });
        let output_dir = PathBuf::from(self.string("output_dir").unwrap_or_else(|| ".".into()));
        let mut formats: BTreeSet<Format> = [Format::Csv, Format::Json].into();
        if let Some(list) = self.list("formats", |v, x| match x.as_str() {
            Some("csv") => Some(Format::Csv),
            Some("json") => Some(Format::Json),
            Some("svg") => Some(Format::Svg),
            _ => {
                v.bad(format!("formats entries must be csv, json or svg, got {x}"));
                None
            }
        }) {
            formats = list.into_iter().collect();
        }
        match self.doc.get("svg").map(|v| v.as_bool()) {
            None => {}
            Some(Some(true)) => {
                formats.insert(Format::Svg);
            }
            Some(Some(false)) => {
                formats.remove(&Format::Svg);
            }
            Some(None) => self.bad("svg must be true or false".into()),
        }

        // Per-command requirements.
        if let (Some(command), Some(system)) = (command, system.as_ref()) {
            let need = |v: &mut Self, ok: bool, msg: &str| {
                if !ok {
                    v.bad(format!("{}: {msg}", command.name()));
                }
            };
            match command {
                Command::Density | Command::Spectrum => {
                    if !self.doc.contains_key("N") {
                        need(&mut self, false, "N is required");
                    }
                    need(&mut self, system.dim() == 1, "needs a one-dimensional system");
                }
                Command::Variance => {
                    need(&mut self, families.len() == 1, "exactly one family is required");
                    need(&mut self, n.is_some(), "n is required");
                }
                Command::Devroye => {
                    need(&mut self, !families.is_empty(), "family or families is required");
                    need(&mut self, n.is_some() || n_grid.as_ref().is_some_and(|g| !g.is_empty()), "n or n_grid is required");
                }
                Command::Tower => {
                    need(&mut self, q_max.is_some(), "q_max is required");
                    need(&mut self, system.symbolic().is_some(), "needs the doubling or tent map");
                }
                Command::Correlations => need(&mut self, phi.is_some(), "phi is required"),
                Command::Clt => need(&mut self, phi.is_some(), "phi is required"),
                Command::Simulate => {
                    if let Some(s) = &seed_state {
                        need(&mut self, s.len() == system.dim(), "seed_state length must match the system dimension");
                    }
                }
            }
        }

        if !self.violations.is_empty() {
            return Err(ConfigError { violations: self.violations });
        }
        let n_grid = match (n_grid, n) {
            (Some(g), _) => g,
            (None, Some(n)) => vec![n],
            (None, None) => Vec::new(),
        };
        Ok(RunConfig {
            command: command.expect("validated"),
            system: system.expect("validated"),
            families,
            phi,
            psi,
            n,
            n_grid,
            eta,
            bins,
            lags,
            q_max,
            base: base.expect("validated"),
            bins_per_level,
            pairs,
            sample_count,
            burn_in,
            seed_distribution,
            method,
            master_seed,
            length,
            seed_state,
            output_dir,
            formats,
            canonical: self.doc.clone(),
        })
    }
}
