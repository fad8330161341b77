//! Empirical check of the variance bound `var(K) ≤ D · Σ_j L_j²`.
//!
//! For each observable the ratio `var(K) / Σ_j L_j²` is estimated with a
//! confidence interval; a sweep over families and window lengths reports the
//! running supremum of the upper interval ends, an empirical lower envelope
//! for any admissible `D`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::DynamicalSystem;
use crate::montecarlo::{estimate_variance, EnsembleSpec, EstimateWithCI, Method};
use crate::observables::{ConstantsSource, Observable, SiteFunction};
use crate::plot::Plot;
use crate::stats;

pub const CAVEAT_SRB: &str = "srb-surrogate";
pub const CAVEAT_BURN_IN: &str = "burn-in-surrogate";
pub const CAVEAT_ESTIMATED: &str = "estimated-constants";
pub const CAVEAT_DEGENERATE: &str = "degenerate";
pub const CAVEAT_BATCH: &str = "batch-means";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DevroyeReport {
    pub system: &'static str,
    pub family: String,
    pub eta: f64,
    pub n: usize,
    pub variance: EstimateWithCI,
    #[serde(rename = "sum_L2")]
    pub sum_l2: f64,
    pub ratio: EstimateWithCI,
    #[serde(rename = "D_running")]
    pub d_running: f64,
    pub caveats: Vec<&'static str>,
}

impl DevroyeReport {
    pub fn is_degenerate(&self) -> bool {
        self.caveats.contains(&CAVEAT_DEGENERATE)
    }
}

fn caveats_for(k: &Observable, spec: &EnsembleSpec) -> Vec<&'static str> {
    let mut c = Vec::new();
    if !spec.samples_exact_invariant_measure() {
        c.push(if spec.system.dim() == 2 { CAVEAT_SRB } else { CAVEAT_BURN_IN });
    }
    if k.constants_source() == ConstantsSource::Estimated {
        c.push(CAVEAT_ESTIMATED);
    }
    if let Method::BatchMeans { .. } = spec.method {
        c.push(CAVEAT_BATCH);
    }
    c
}

/// `var(K) / Σ_j L_j²` for one observable, with the ratio interval obtained
/// by scaling the variance interval.
pub fn devroye_ratio(k: &Observable, spec: &EnsembleSpec) -> Result<DevroyeReport> {
    let sum_l2 = k.sum_squared_constants();
    if !sum_l2.is_finite() {
        return Err(Error::Parameter(format!(
            "{} has no finite Hölder constants; estimate them first",
            k.tag()
        )));
    }
    let variance = estimate_variance(k, spec)?;
    let mut caveats = caveats_for(k, spec);
    let ratio = if sum_l2 > 0.0 {
        variance.scaled(1.0 / sum_l2)
    } else if variance.value == 0.0 || k.is_constant() {
        EstimateWithCI { value: 0.0, std_error: 0.0, ci_low: 0.0, ci_high: 0.0, ..variance }
    } else {
        return Err(Error::InconsistentConstants(format!(
            "{} has Σ L_j² = 0 but sample variance {:e}",
            k.tag(),
            variance.value
        )));
    };
    if variance.value == 0.0 {
        caveats.push(CAVEAT_DEGENERATE);
    }
    Ok(DevroyeReport {
        system: spec.system.name(),
        family: k.tag().to_string(),
        eta: k.exponent(),
        n: k.arity(),
        variance,
        sum_l2,
        d_running: ratio.ci_high,
        ratio,
        caveats,
    })
}

/// Observable families nameable from configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    Birkhoff,
    PairCorrelation,
    /// Weights `1/n` on every coordinate.
    WeightedSup,
    /// The constant 1.
    Constant,
}

pub const FAMILY_CATALOG: [&str; 4] = ["birkhoff", "pair-correlation", "weighted-sup", "constant"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FamilySpec {
    pub kind: FamilyKind,
    pub phi: String,
}

impl FamilySpec {
    pub fn new(kind: &str, phi: &str) -> Result<Self> {
        let kind = match kind {
            "birkhoff" => FamilyKind::Birkhoff,
            "pair-correlation" => FamilyKind::PairCorrelation,
            "weighted-sup" => FamilyKind::WeightedSup,
            "constant" => FamilyKind::Constant,
            other => {
                return Err(Error::Parameter(format!(
                    "unknown family {other:?}; supported: {}",
                    FAMILY_CATALOG.join(", ")
                )))
            }
        };
        if kind != FamilyKind::Constant {
            SiteFunction::from_name(phi)?;
        }
        Ok(FamilySpec { kind, phi: phi.to_string() })
    }

    /// Parses `"birkhoff-cos2pi"`-style names.
    pub fn parse(name: &str) -> Result<Self> {
        if name == "constant" {
            return FamilySpec::new("constant", "");
        }
        for kind in FAMILY_CATALOG {
            if let Some(phi) = name.strip_prefix(kind).and_then(|r| r.strip_prefix('-')) {
                return FamilySpec::new(kind, phi);
            }
        }
        Err(Error::Parameter(format!(
            "cannot parse family {name:?}; expected <family>-<phi> with family in {{{}}}",
            FAMILY_CATALOG.join(", ")
        )))
    }

    pub fn name(&self) -> String {
        match self.kind {
            FamilyKind::Constant => "constant".into(),
            _ => format!("{}-{}", kind_name(self.kind), self.phi),
        }
    }

    /// The family member of window length `n` on `system`. Site functions
    /// read the first coordinate; their sup norm is taken over the
    /// attractor box. With `eta` below the site exponent the constants are
    /// converted through the box diameter.
    pub fn build(&self, system: &DynamicalSystem, n: usize, eta: Option<f64>) -> Result<Observable> {
        let k = match self.kind {
            FamilyKind::Constant => return Observable::constant(1.0, n),
            kind => {
                let (lo, hi) = system.attractor_box().first_coordinate_range();
                let phi = SiteFunction::from_name(&self.phi)?.on_range(lo, hi);
                match kind {
                    FamilyKind::Birkhoff => Observable::birkhoff(phi, n)?,
                    FamilyKind::PairCorrelation => Observable::pair_correlation(phi, n)?,
                    _ => {
                        if n == 0 {
                            return Err(Error::Arity("weighted sup needs n ≥ 1".into()));
                        }
                        Observable::weighted_sup(phi, vec![1.0 / n as f64; n])?
                    }
                }
            }
        };
        match eta {
            Some(eta) if eta != k.exponent() => k.with_exponent(eta, system.attractor_box().diameter()),
            _ => Ok(k),
        }
    }
}

fn kind_name(kind: FamilyKind) -> &'static str {
    match kind {
        FamilyKind::Birkhoff => "birkhoff",
        FamilyKind::PairCorrelation => "pair-correlation",
        FamilyKind::WeightedSup => "weighted-sup",
        FamilyKind::Constant => "constant",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridPoint {
    pub family: String,
    pub n: usize,
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid {
    pub system: &'static str,
    pub families: Vec<String>,
    pub n_grid: Vec<usize>,
    pub eta: Vec<f64>,
}

/// Ratio versus `n` for one family.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FamilyTrend {
    pub family: String,
    pub n: Vec<usize>,
    pub ratio: Vec<f64>,
    /// Least-squares slope of `ln ratio` on `ln n`.
    pub log_log_slope: Option<f64>,
    /// `max ratio / min ratio` over the grid.
    pub max_over_min: Option<f64>,
    /// `max ci_high / min max(ci_low, ε)` over the grid.
    pub ci_spread: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSummary {
    #[serde(rename = "D_running")]
    pub d_running: f64,
    pub argmax_config: Option<GridPoint>,
    pub grid: Grid,
    pub seed: u64,
    pub monotonicity: Vec<FamilyTrend>,
}

/// Runs [`devroye_ratio`] over `families × n_grid` in grid order and
/// accumulates the running supremum of the ratio upper bounds.
pub fn estimate_constant_d(
    families: &[FamilySpec],
    n_grid: &[usize],
    eta: Option<f64>,
    spec: &EnsembleSpec,
) -> Result<(Vec<DevroyeReport>, SweepSummary)> {
    if families.is_empty() || n_grid.is_empty() {
        return Err(Error::Parameter("families and n_grid must be nonempty".into()));
    }
    let mut reports = Vec::with_capacity(families.len() * n_grid.len());
    let mut running = 0.0f64;
    for family in families {
        for &n in n_grid {
            let k = family.build(&spec.system, n, eta)?;
            let mut r = devroye_ratio(&k, spec)?;
            running = running.max(r.ratio.ci_high);
            r.d_running = running;
            reports.push(r);
        }
    }
    let summary = summarize(&reports)?;
    Ok((reports, summary))
}

fn dedup<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for i in items {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

/// Sweep summary recomputed from reports in their given order.
pub fn summarize(reports: &[DevroyeReport]) -> Result<SweepSummary> {
    let first = reports.first().ok_or_else(|| Error::Parameter("no reports to summarize".into()))?;
    let mut best: Option<&DevroyeReport> = None;
    for r in reports {
        if best.is_none_or(|b| r.ratio.ci_high > b.ratio.ci_high) {
            best = Some(r);
        }
    }
    let families = dedup(reports.iter().map(|r| r.family.clone()));
    let monotonicity = families
        .iter()
        .map(|f| {
            let rows: Vec<&DevroyeReport> = reports.iter().filter(|r| &r.family == f).collect();
            trend(f, &rows)
        })
        .collect();
    Ok(SweepSummary {
        d_running: reports.iter().map(|r| r.ratio.ci_high).fold(0.0, f64::max),
        argmax_config: best.map(|b| GridPoint { family: b.family.clone(), n: b.n, eta: b.eta }),
        grid: Grid {
            system: first.system,
            families,
            n_grid: dedup(reports.iter().map(|r| r.n)),
            eta: dedup(reports.iter().map(|r| r.eta)),
        },
        seed: first.variance.seed,
        monotonicity,
    })
}

fn trend(family: &str, rows: &[&DevroyeReport]) -> FamilyTrend {
    let positive: Vec<&&DevroyeReport> = rows.iter().filter(|r| r.ratio.value > 0.0).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        positive.iter().map(|r| ((r.n as f64).ln(), r.ratio.value.ln())).unzip();
    let slope = (xs.len() >= 2 && xs.iter().any(|x| *x != xs[0])).then(|| stats::linear_fit(&xs, &ys).0);
    let values: Vec<f64> = rows.iter().map(|r| r.ratio.value).collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.ratio.ci_high).fold(f64::NEG_INFINITY, f64::max);
    let lo = rows.iter().map(|r| r.ratio.ci_low.max(f64::EPSILON)).fold(f64::INFINITY, f64::min);
    FamilyTrend {
        family: family.to_string(),
        n: rows.iter().map(|r| r.n).collect(),
        ratio: values,
        log_log_slope: slope,
        max_over_min: (min > 0.0).then(|| max / min),
        ci_spread: (max > 0.0).then(|| hi / lo),
    }
}

pub const CSV_HEADER: [&str; 11] = [
    "system",
    "family",
    "eta",
    "n",
    "variance",
    "variance_se",
    "sum_L2",
    "ratio",
    "ratio_ci_low",
    "ratio_ci_high",
    "caveats",
];

/// Reals printed with 17 significant digits, which round-trips `f64`.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// One parsed CSV row.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct ReportRow {
    pub system: String,
    pub family: String,
    pub eta: f64,
    pub n: usize,
    pub variance: f64,
    pub variance_se: f64,
    #[serde(rename = "sum_L2")]
    pub sum_l2: f64,
    pub ratio: f64,
    pub ratio_ci_low: f64,
    pub ratio_ci_high: f64,
    pub caveats: String,
}

pub fn write_reports_csv<W: Write>(reports: &[DevroyeReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        w.write_record([
            r.system.to_string(),
            r.family.clone(),
            fmt_real(r.eta),
            r.n.to_string(),
            fmt_real(r.variance.value),
            fmt_real(r.variance.std_error),
            fmt_real(r.sum_l2),
            fmt_real(r.ratio.value),
            fmt_real(r.ratio.ci_low),
            fmt_real(r.ratio.ci_high),
            r.caveats.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_reports_csv<R: Read>(input: R) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?)
}

/// Ratio versus `n`, one series per family.
pub fn ratio_plot(reports: &[DevroyeReport]) -> Plot {
    let system = reports.first().map(|r| r.system).unwrap_or("");
    let mut plot = Plot::new(&format!("var(K) / sum L_j^2 on {system}"), "n", "ratio").log_x();
    for family in dedup(reports.iter().map(|r| r.family.clone())) {
        let pts = reports.iter().filter(|r| r.family == family).map(|r| (r.n as f64, r.ratio.value)).collect();
        plot = plot.with_series(&family, pts);
    }
    plot
}

/// Writes `<stem>.csv`, `<stem>.json` and, when requested, `<stem>.svg`.
/// Returns the written paths; on error nothing written by this call is left
/// behind.
pub fn inequality_report(reports: &[DevroyeReport], stem: &Path, svg: bool) -> Result<Vec<PathBuf>> {
    let summary = summarize(reports)?;
    let mut written = Vec::new();
    let result = (|| -> Result<()> {
        let csv_path = stem.with_extension("csv");
        let mut buf = Vec::new();
        write_reports_csv(reports, &mut buf)?;
        written.push(csv_path.clone());
        fs::write(&csv_path, buf)?;
        let json_path = stem.with_extension("json");
        written.push(json_path.clone());
        fs::write(&json_path, serde_json::to_string_pretty(&summary)? + "\n")?;
        if svg {
            let svg_path = stem.with_extension("svg");
            written.push(svg_path.clone());
            fs::write(&svg_path, ratio_plot(reports).to_svg())?;
        }
        Ok(())
    })();
    match result {
        Ok(()) => Ok(written),
        Err(e) => {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn doubling(n: usize, seed: u64) -> EnsembleSpec {
        EnsembleSpec::new(DynamicalSystem::doubling(), n, seed)
    }

    #[test]
    fn birkhoff_ratio_oracle() {
        let k = Observable::birkhoff(SiteFunction::cos2pi(), 10).unwrap();
        let r = devroye_ratio(&k, &doubling(20_000, 3)).unwrap();
        let target = 1.0 / (8.0 * PI * PI);
        assert!(r.ratio.within(target, 3.0), "{r:?}");
        assert!((r.sum_l2 - 4.0 * PI * PI / 10.0).abs() < 1e-12);
        assert!((r.ratio.value * r.sum_l2 - r.variance.value).abs() <= 1e-12 * r.variance.value);
        assert!(r.caveats.is_empty());
    }

    #[test]
    fn constant_ratio_is_zero() {
        let k = Observable::constant(2.0, 5).unwrap();
        let r = devroye_ratio(&k, &doubling(200, 3)).unwrap();
        assert_eq!(r.ratio.value, 0.0);
        assert!(r.is_degenerate());
    }

    #[test]
    fn scaling_leaves_ratio_unchanged() {
        let k = Observable::pair_correlation(SiteFunction::cos2pi(), 6).unwrap();
        let spec = doubling(2000, 8);
        let base = devroye_ratio(&k, &spec).unwrap().ratio.value;
        for c in [2.0, -0.5, 4.0] {
            assert_eq!(devroye_ratio(&k.scaled(c), &spec).unwrap().ratio.value, base);
        }
        let three = devroye_ratio(&k.scaled(3.0), &spec).unwrap().ratio.value;
        assert!((three - base).abs() <= 1e-12 * base);
    }

    #[test]
    fn inconsistent_constants_are_rejected() {
        let k = Observable::custom("sloppy", 1, 1.0, |xs| xs[0].x)
            .unwrap()
            .with_estimated_constants(vec![0.0])
            .unwrap();
        assert!(matches!(devroye_ratio(&k, &doubling(200, 1)), Err(Error::InconsistentConstants(_))));
    }

    #[test]
    fn family_names_round_trip() {
        for name in ["birkhoff-cos2pi", "pair-correlation-identity", "weighted-sup-sqrt", "constant"] {
            assert_eq!(FamilySpec::parse(name).unwrap().name(), name);
        }
        assert!(FamilySpec::parse("birkhoff-tan").is_err());
        assert!(FamilySpec::parse("spline-cos2pi").is_err());
    }

    #[test]
    fn sweep_and_csv_round_trip() {
        let families = [FamilySpec::parse("birkhoff-cos2pi").unwrap(), FamilySpec::parse("constant").unwrap()];
        let (reports, summary) = estimate_constant_d(&families, &[10, 20, 40], None, &doubling(500, 2)).unwrap();
        assert_eq!(reports.len(), 6);
        assert_eq!(summary.argmax_config.as_ref().unwrap().family, "birkhoff-cos2pi");
        assert!(reports.windows(2).all(|w| w[1].d_running >= w[0].d_running));
        let mut buf = Vec::new();
        write_reports_csv(&reports, &mut buf).unwrap();
        let rows = read_reports_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 6);
        for (row, r) in rows.iter().zip(&reports) {
            assert_eq!(row.variance, r.variance.value);
            assert_eq!(row.ratio_ci_high, r.ratio.ci_high);
            assert_eq!(row.sum_l2, r.sum_l2);
        }
        assert_eq!(ratio_plot(&reports).series.len(), 2);
    }
}
