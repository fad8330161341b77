//! Ensemble estimators for means, variances, correlations and the central
//! limit theorem under the invariant measure of a catalog system.
//!
//! Every sample index owns a counter-based ChaCha stream derived from
//! `(master_seed, purpose, index)`. Windows are generated in parallel and
//! reduced sequentially in index order, so estimates are a pure function of
//! the [`EnsembleSpec`] whatever the number of worker threads.
//!
//! Seeds for the doubling and tent maps are random binary expansions long
//! enough to cover the burn-in and the window (see
//! [`DynamicalSystem::fill_from_expansion`]). Other systems start from an
//! `f64` point drawn uniformly from the requested region and are burned in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::maps::{BitExpansion, Domain, DynamicalSystem, Point};
use crate::observables::{Observable, SiteFunction};
use crate::stats;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

const PURPOSE_WINDOWS: u64 = 0x5749_4e44;
const PURPOSE_PAIRS: u64 = 0x5041_4952;
const PURPOSE_CORRELATION: u64 = 0x434f_5252;
const PURPOSE_CLT: u64 = 0x434c_5400;
const PURPOSE_CONTROL: u64 = 0x4e4f_524d;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedDistribution {
    /// Uniform on the system's (bounded) domain.
    UniformOnDomain,
    /// Uniform on the system's seed box ([`DynamicalSystem::seed_box`]).
    UniformOnAttractorBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Method {
    /// One window per independent seed.
    IidWindows,
    /// Consecutive non-overlapping windows of one long orbit, with the
    /// standard error taken from `batches` batch means.
    BatchMeans { batches: usize },
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::IidWindows => "iid-windows",
            Method::BatchMeans { .. } => "batch-means",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub system: DynamicalSystem,
    pub sample_count: usize,
    pub burn_in: u64,
    pub seed_distribution: SeedDistribution,
    pub master_seed: u64,
    pub method: Method,
}

impl EnsembleSpec {
    /// Independent windows, burn-in 1000, and seeds uniform on the domain
    /// for interval maps or on the seed box for planar maps.
    pub fn new(system: DynamicalSystem, sample_count: usize, master_seed: u64) -> Self {
        let seed_distribution = if system.dim() == 1 {
            SeedDistribution::UniformOnDomain
        } else {
            SeedDistribution::UniformOnAttractorBox
        };
        EnsembleSpec {
            system,
            sample_count,
            burn_in: 1000,
            seed_distribution,
            master_seed,
            method: Method::IidWindows,
        }
    }

    pub fn with_burn_in(mut self, burn_in: u64) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn with_seed_distribution(mut self, d: SeedDistribution) -> Self {
        self.seed_distribution = d;
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_master_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    fn validate(&self, min_samples: usize) -> Result<()> {
        if self.sample_count < min_samples {
            return Err(Error::Parameter(format!(
                "sample_count must be ≥ {min_samples}, got {}",
                self.sample_count
            )));
        }
        if let Method::BatchMeans { batches } = self.method {
            if batches < 2 || batches > self.sample_count {
                return Err(Error::Parameter(format!(
                    "batch-means needs 2 ≤ batches ≤ sample_count, got {batches}"
                )));
            }
        }
        Ok(())
    }

    /// True when seeds are drawn exactly from the invariant measure
    /// (Lebesgue for the doubling and tent maps).
    pub fn samples_exact_invariant_measure(&self) -> bool {
        self.system.symbolic().is_some() && self.seed_distribution == SeedDistribution::UniformOnDomain
    }

    fn seed_region(&self) -> Result<Domain> {
        match self.seed_distribution {
            SeedDistribution::UniformOnAttractorBox => Ok(self.system.seed_box()),
            SeedDistribution::UniformOnDomain => {
                let d = self.system.domain();
                if d.is_bounded() {
                    Ok(d)
                } else {
                    Err(Error::Parameter(format!(
                        "{} has an unbounded domain; use the uniform-on-attractor-box seed distribution",
                        self.system.name()
                    )))
                }
            }
        }
    }
}

/// A point estimate with a 95% normal confidence interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EstimateWithCI {
    pub value: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    #[serde(rename = "n_samples")]
    pub sample_count: usize,
    pub method: &'static str,
    pub seed: u64,
    #[serde(skip)]
    pub discarded: usize,
}

impl EstimateWithCI {
    pub fn new(value: f64, std_error: f64, sample_count: usize, method: &'static str, seed: u64) -> Self {
        EstimateWithCI {
            value,
            std_error,
            ci_low: value - Z95 * std_error,
            ci_high: value + Z95 * std_error,
            sample_count,
            method,
            seed,
            discarded: 0,
        }
    }

    /// `|value - target| ≤ k · std_error`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error
    }

    /// Multiplies value, error and interval by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut e = *self;
        e.value *= factor;
        e.std_error *= factor;
        e.ci_low *= factor;
        e.ci_high *= factor;
        e
    }
}

pub(crate) fn stream_rng(master_seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&purpose.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Runs `f` on a dedicated pool of `workers` threads (or the global pool
/// for `None`). Results do not depend on the worker count.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::Parameter(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

enum SeedMode {
    Digits,
    Region(Domain),
}

struct Sampler<'a> {
    spec: &'a EnsembleSpec,
    mode: SeedMode,
}

impl<'a> Sampler<'a> {
    fn new(spec: &'a EnsembleSpec) -> Result<Self> {
        let region = spec.seed_region()?;
        let mode = if spec.system.symbolic().is_some() && spec.seed_distribution == SeedDistribution::UniformOnDomain {
            SeedMode::Digits
        } else {
            SeedMode::Region(region)
        };
        Ok(Sampler { spec, mode })
    }

    /// Fills `buf` with the window whose seed comes from stream `index`.
    fn window(&self, purpose: u64, index: u64, buf: &mut [Point]) -> Result<()> {
        let mut rng = stream_rng(self.spec.master_seed, purpose, index);
        let system = &self.spec.system;
        match &self.mode {
            SeedMode::Digits => {
                let digits = self.spec.burn_in as usize + buf.len() + 64;
                let bits = BitExpansion::random(&mut rng, digits);
                system.fill_from_expansion(&bits, self.spec.burn_in, buf)
            }
            SeedMode::Region(region) => {
                let seed = region.sample(&mut rng);
                system.fill_orbit(seed, self.spec.burn_in, buf)
            }
        }
    }

    /// The long orbit used by batch means, `len` states after burn-in.
    fn long_orbit(&self, purpose: u64, len: usize) -> Result<Vec<Point>> {
        let mut buf = vec![Point::default(); len];
        self.window(purpose, 0, &mut buf)?;
        Ok(buf)
    }
}

/// Per-window results in sample-index order; `None` marks a divergent orbit.
fn collect_windows<T: Send>(
    spec: &EnsembleSpec,
    purpose: u64,
    count: usize,
    len: usize,
    f: impl Fn(&[Point]) -> T + Sync,
) -> Result<Vec<Option<T>>> {
    let sampler = Sampler::new(spec)?;
    let results: Vec<Result<Option<T>>> = (0..count as u64)
        .into_par_iter()
        .map_init(
            || vec![Point::default(); len],
            |buf, i| match sampler.window(purpose, i, buf) {
                Ok(()) => Ok(Some(f(buf))),
                Err(Error::Divergence { .. }) => Ok(None),
                Err(e) => Err(e),
            },
        )
        .collect();
    results.into_iter().collect()
}

fn check_discards(discarded: usize, total: usize) -> Result<()> {
    if discarded * 100 > total {
        return Err(Error::Sampling { discarded, total });
    }
    Ok(())
}

/// Per-window values, plus the discard count.
fn window_values<T: Send + Clone>(
    spec: &EnsembleSpec,
    purpose: u64,
    len: usize,
    f: impl Fn(&[Point]) -> T + Sync + Send,
) -> Result<(Vec<T>, usize)> {
    match spec.method {
        Method::IidWindows => {
            let raw = collect_windows(spec, purpose, spec.sample_count, len, f)?;
            let total = raw.len();
            let kept: Vec<T> = raw.into_iter().flatten().collect();
            let discarded = total - kept.len();
            check_discards(discarded, total)?;
            Ok((kept, discarded))
        }
        Method::BatchMeans { .. } => {
            let sampler = Sampler::new(spec)?;
            let orbit = sampler.long_orbit(purpose, spec.sample_count * len)?;
            let values = orbit.par_chunks_exact(len).map(f).collect();
            Ok((values, 0))
        }
    }
}

/// One burned-in orbit of `length` states from the spec's seed
/// distribution, seeded by stream 0 of `master_seed`.
pub fn reference_orbit(spec: &EnsembleSpec, length: usize) -> Result<Vec<Point>> {
    Sampler::new(spec)?.long_orbit(PURPOSE_WINDOWS, length)
}

/// Standard error of the mean of `values` under `method`.
fn standard_error(values: &[f64], method: Method) -> f64 {
    match method {
        Method::IidWindows => stats::mean_standard_error(values),
        Method::BatchMeans { batches } => {
            let size = values.len() / batches;
            let means: Vec<f64> = values.chunks_exact(size).take(batches).map(stats::mean).collect();
            stats::mean_standard_error(&means)
        }
    }
}

fn finish(value: f64, se: f64, n: usize, discarded: usize, spec: &EnsembleSpec) -> EstimateWithCI {
    let mut e = EstimateWithCI::new(value, se, n, spec.method.tag(), spec.master_seed);
    e.discarded = discarded;
    e
}

/// `𝔼(K)`: mean of `K` over windows of the ensemble.
pub fn estimate_mean(k: &Observable, spec: &EnsembleSpec) -> Result<EstimateWithCI> {
    spec.validate(100)?;
    let (values, discarded) = window_values(spec, PURPOSE_WINDOWS, k.arity(), |w| k.evaluate(w))?;
    let value = stats::mean(&values);
    let se = standard_error(&values, spec.method);
    Ok(finish(value, se, values.len(), discarded, spec))
}

/// `var(K)`: unbiased sample variance over windows, with a delta-method
/// (fourth-moment) standard error, or batch means of squared deviations.
pub fn estimate_variance(k: &Observable, spec: &EnsembleSpec) -> Result<EstimateWithCI> {
    spec.validate(100)?;
    let (values, discarded) = window_values(spec, PURPOSE_WINDOWS, k.arity(), |w| k.evaluate(w))?;
    Ok(variance_from_values(&values, discarded, spec))
}

pub(crate) fn variance_from_values(values: &[f64], discarded: usize, spec: &EnsembleSpec) -> EstimateWithCI {
    let m = stats::moments(values);
    let se = match spec.method {
        Method::IidWindows => stats::variance_standard_error(&m, values.len()),
        Method::BatchMeans { .. } => {
            let dev: Vec<f64> = values.iter().map(|v| (v - m.mean).powi(2)).collect();
            standard_error(&dev, spec.method)
        }
    };
    finish(m.variance, se, values.len(), discarded, spec)
}

/// `var(K) = ½ ∬ (K(x, …) − K(x′, …))² dμ(x) dμ(x′)`, estimated from
/// independent window pairs. Always uses independent windows.
pub fn pair_variance(k: &Observable, spec: &EnsembleSpec) -> Result<EstimateWithCI> {
    spec.validate(100)?;
    let raw = collect_windows(spec, PURPOSE_PAIRS, 2 * spec.sample_count, k.arity(), |w| k.evaluate(w))?;
    let halves: Vec<f64> = raw
        .chunks_exact(2)
        .filter_map(|p| match (p[0], p[1]) {
            (Some(a), Some(b)) => Some(0.5 * (a - b) * (a - b)),
            _ => None,
        })
        .collect();
    let discarded = spec.sample_count - halves.len();
    check_discards(discarded, spec.sample_count)?;
    let mut e = EstimateWithCI::new(
        stats::mean(&halves),
        stats::mean_standard_error(&halves),
        halves.len(),
        Method::IidWindows.tag(),
        spec.master_seed,
    );
    e.discarded = discarded;
    Ok(e)
}

/// `C(k) = mean(φ(x) ψ(f^k x)) − mean(φ) mean(ψ)` for `k = 0 … max_lag`,
/// with influence-function standard errors.
pub fn empirical_correlation(
    phi: &SiteFunction,
    psi: &SiteFunction,
    max_lag: usize,
    spec: &EnsembleSpec,
) -> Result<Vec<EstimateWithCI>> {
    spec.validate(100)?;
    let lags = max_lag + 1;
    let (rows, discarded) = window_values(spec, PURPOSE_CORRELATION, lags, |w| {
        let mut row = Vec::with_capacity(lags + 1);
        row.push(phi.eval_state(&w[0]));
        row.extend(w.iter().map(|p| psi.eval_state(p)));
        row
    })?;
    let n = rows.len();
    let a: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let a_mean = stats::mean(&a);
    let a_c: Vec<f64> = a.iter().map(|x| x - a_mean).collect();
    let mut out = Vec::with_capacity(lags);
    for k in 0..lags {
        let b: Vec<f64> = rows.iter().map(|r| r[k + 1]).collect();
        let b_mean = stats::mean(&b);
        let prod: Vec<f64> = a_c.iter().zip(&b).map(|(x, y)| x * (y - b_mean)).collect();
        let c = stats::mean(&prod);
        let se = standard_error(&prod, spec.method);
        out.push(finish(c, se, n, discarded, spec));
    }
    Ok(out)
}

/// Kolmogorov–Smirnov comparison with the standard normal law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub sample_count: usize,
}

/// Standardizes Birkhoff sums `Σ_{j<n} φ(f^j x)` by their sample mean and
/// standard deviation and measures their KS distance to `N(0, 1)`.
pub fn clt_diagnostic(phi: &SiteFunction, n: usize, spec: &EnsembleSpec) -> Result<KsResult> {
    if n < 100 {
        return Err(Error::Parameter(format!("CLT window length must be ≥ 100, got {n}")));
    }
    spec.validate(10_000)?;
    let (sums, _) = window_values(spec, PURPOSE_CLT, n, |w| {
        stats::compensated_sum(w.iter().map(|p| phi.eval_state(p)))
    })?;
    ks_standard_normal(sums)
}

/// The same test on an i.i.d. standard normal stream; its p-values are
/// uniform on repeated seeds.
pub fn clt_control(sample_count: usize, master_seed: u64) -> Result<KsResult> {
    let values: Vec<f64> = (0..sample_count as u64)
        .into_par_iter()
        .map(|i| StandardNormal.sample(&mut stream_rng(master_seed, PURPOSE_CONTROL, i)))
        .collect();
    ks_standard_normal(values)
}

/// KS distance between the standardized sample and `N(0, 1)`, with the
/// asymptotic Kolmogorov p-value.
pub fn ks_standard_normal(mut values: Vec<f64>) -> Result<KsResult> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Parameter("KS test needs at least two samples".into()));
    }
    let m = stats::moments(&values);
    if !(m.variance > 0.0) {
        return Err(Error::Degenerate("sums have zero variance; nothing to standardize".into()));
    }
    let sd = m.variance.sqrt();
    values.iter_mut().for_each(|v| *v = (*v - m.mean) / sd);
    values.sort_by(f64::total_cmp);
    let normal = Normal::standard();
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, z) in values.iter().enumerate() {
        let f = normal.cdf(*z);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    let sqrt_n = nf.sqrt();
    let p = kolmogorov_survival((sqrt_n + 0.12 + 0.11 / sqrt_n) * d);
    Ok(KsResult { statistic: d, p_value: p, sample_count: n })
}

/// `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²λ²)`.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = sign * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
