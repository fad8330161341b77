//! Separately Hölder observables `K(x_1, …, x_n)` and their per-coordinate
//! Hölder constants `L_j`.
//!
//! Library families carry analytic upper bounds for `L_j`. Black-box
//! observables get lower-bound estimates from [`estimate_holder_constant`]
//! and are flagged as such.
//!
//! A [`SiteFunction`] acts on the first coordinate of a state. The distance
//! between states is Euclidean, and `|x - x'|` never exceeds it, so the
//! one-dimensional Hölder data of a site function carry over to planar
//! systems unchanged.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::maps::{Domain, Point, Trajectory};

#[derive(Clone)]
enum SiteKind {
    Cos2Pi,
    Identity,
    Sqrt,
    AbsDistHalf,
    Constant(f64),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

/// A real function of one state, with exponent `η`, Hölder constant `Λ`
/// and sup-norm `M` over the first-coordinate range it is used on.
#[derive(Clone)]
pub struct SiteFunction {
    kind: SiteKind,
    name: String,
    exponent: f64,
    holder: f64,
    range: (f64, f64),
    sup_norm: f64,
}

/// Names accepted by [`SiteFunction::from_name`].
pub const SITE_CATALOG: [&str; 4] = ["cos2pi", "identity", "sqrt", "abs_dist_half"];

impl SiteFunction {
    /// `cos(2πx)`: η = 1, Λ = 2π, M = 1.
    pub fn cos2pi() -> Self {
        Self::catalog(SiteKind::Cos2Pi, "cos2pi", 1.0, TAU)
    }

    /// `x`: η = 1, Λ = 1, M = 1 on `[0, 1]`.
    pub fn identity() -> Self {
        Self::catalog(SiteKind::Identity, "identity", 1.0, 1.0)
    }

    /// `√max(x, 0)`: η = 1/2, Λ = 1, M = 1 on `[0, 1]`.
    pub fn sqrt() -> Self {
        Self::catalog(SiteKind::Sqrt, "sqrt", 0.5, 1.0)
    }

    /// `|x - 1/2|`: η = 1, Λ = 1, M = 1/2 on `[0, 1]`.
    pub fn abs_dist_half() -> Self {
        Self::catalog(SiteKind::AbsDistHalf, "abs_dist_half", 1.0, 1.0)
    }

    pub fn constant(c: f64) -> Self {
        let mut f = Self::catalog(SiteKind::Constant(c), "constant", 1.0, 0.0);
        f.name = format!("constant({c})");
        f
    }

    /// A user function with declared exponent, Hölder constant and sup-norm.
    pub fn custom(
        name: &str,
        exponent: f64,
        holder: f64,
        sup_norm: f64,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        check_exponent(exponent)?;
        if !(holder >= 0.0 && holder.is_finite()) || !(sup_norm >= 0.0 && sup_norm.is_finite()) {
            return Err(Error::Parameter(format!(
                "site function {name}: Hölder constant and sup-norm must be finite and ≥ 0"
            )));
        }
        Ok(SiteFunction {
            kind: SiteKind::Custom(Arc::new(f)),
            name: name.to_string(),
            exponent,
            holder,
            range: (0.0, 1.0),
            sup_norm,
        })
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "cos2pi" => Ok(Self::cos2pi()),
            "identity" => Ok(Self::identity()),
            "sqrt" => Ok(Self::sqrt()),
            "abs_dist_half" => Ok(Self::abs_dist_half()),
            _ => Err(Error::Parameter(format!(
                "unknown function \"{name}\"; catalog: {}",
                SITE_CATALOG.join(", ")
            ))),
        }
    }

    fn catalog(kind: SiteKind, name: &str, exponent: f64, holder: f64) -> Self {
        let mut f = SiteFunction {
            kind,
            name: name.to_string(),
            exponent,
            holder,
            range: (0.0, 1.0),
            sup_norm: 0.0,
        };
        f.sup_norm = f.catalog_sup(0.0, 1.0);
        f
    }

    fn catalog_sup(&self, lo: f64, hi: f64) -> f64 {
        match &self.kind {
            SiteKind::Cos2Pi => {
                if hi - lo >= 1.0 {
                    1.0
                } else {
                    // cos(2πx) peaks at integers and bottoms at half-integers.
                    let mut m = (TAU * lo).cos().abs().max((TAU * hi).cos().abs());
                    if (2.0 * lo).ceil() <= 2.0 * hi {
                        m = 1.0;
                    }
                    m
                }
            }
            SiteKind::Identity => lo.abs().max(hi.abs()),
            SiteKind::Sqrt => hi.max(0.0).sqrt(),
            SiteKind::AbsDistHalf => (lo - 0.5).abs().max((hi - 0.5).abs()),
            SiteKind::Constant(c) => c.abs(),
            SiteKind::Custom(_) => self.sup_norm,
        }
    }

    /// The same function with its sup-norm taken over `[lo, hi]` (the range
    /// of the first coordinate on the support of the measure). Custom
    /// functions keep their declared sup-norm.
    pub fn on_range(&self, lo: f64, hi: f64) -> Self {
        let mut f = self.clone();
        f.range = (lo, hi);
        f.sup_norm = f.catalog_sup(lo, hi);
        f
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            SiteKind::Cos2Pi => (TAU * x).cos(),
            SiteKind::Identity => x,
            SiteKind::Sqrt => x.max(0.0).sqrt(),
            SiteKind::AbsDistHalf => (x - 0.5).abs(),
            SiteKind::Constant(c) => *c,
            SiteKind::Custom(f) => f(x),
        }
    }

    #[inline]
    pub fn eval_state(&self, p: &Point) -> f64 {
        self.eval(p.x)
    }

    /// Average of the function over `[a, b]`, in closed form for the
    /// catalog and by 8-point Gauss–Legendre quadrature otherwise.
    pub fn bin_average(&self, a: f64, b: f64) -> f64 {
        let w = b - a;
        if w <= 0.0 {
            return self.eval(a);
        }
        match &self.kind {
            SiteKind::Cos2Pi => ((TAU * b).sin() - (TAU * a).sin()) / (TAU * w),
            SiteKind::Identity => 0.5 * (a + b),
            SiteKind::Sqrt => {
                let cube = |x: f64| x.max(0.0).powf(1.5);
                (2.0 / 3.0) * (cube(b) - cube(a)) / w
            }
            SiteKind::AbsDistHalf => {
                let prim = |x: f64| 0.5 * (x - 0.5) * (x - 0.5).abs();
                (prim(b) - prim(a)) / w
            }
            SiteKind::Constant(c) => *c,
            SiteKind::Custom(_) => gauss_legendre(|x| self.eval(x), a, b) / w,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn holder_constant(&self) -> f64 {
        self.holder
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, SiteKind::Constant(_))
    }
}

impl fmt::Debug for SiteFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SiteFunction")
            .field("name", &self.name)
            .field("exponent", &self.exponent)
            .field("holder", &self.holder)
            .field("range", &self.range)
            .field("sup_norm", &self.sup_norm)
            .finish()
    }
}

fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const NODES: [(f64, f64); 4] = [
        (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
        (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
        (0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
        (0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
    ];
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    half * NODES
        .iter()
        .map(|&(x, w)| w * (f(mid - half * x) + f(mid + half * x)))
        .sum::<f64>()
}

pub(crate) fn check_exponent(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Parameter(format!("Hölder exponent must lie in (0, 1], got {eta}")));
    }
    Ok(())
}

type WindowFn = Arc<dyn Fn(&[Point]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Family {
    Birkhoff(SiteFunction),
    PairCorrelation(SiteFunction),
    WeightedSup(SiteFunction, Vec<f64>),
    Constant(f64),
    Custom(WindowFn),
}

/// Where the stored Hölder constants come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantsSource {
    /// Analytic upper bounds from the family constructor.
    Analytic,
    /// Empirical lower bounds from sampled pairs.
    Estimated,
}

/// A real function of `n` states, Hölder with exponent `η` in each
/// coordinate separately, together with its constants `L_1 … L_n`.
#[derive(Clone)]
pub struct Observable {
    family: Family,
    /// Number of coordinates the family actually reads.
    active: usize,
    arity: usize,
    exponent: f64,
    holder: Vec<f64>,
    scale: f64,
    tag: String,
    source: ConstantsSource,
}

impl Observable {
    /// Time average `(1/n) Σ_j φ(x_j)`; every `L_j = Λ/n`.
    pub fn birkhoff(phi: SiteFunction, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Arity("Birkhoff average needs n ≥ 1".into()));
        }
        let l = if phi.is_constant() { 0.0 } else { phi.holder / n as f64 };
        Ok(Observable {
            tag: format!("birkhoff-{}", phi.name),
            exponent: phi.exponent,
            holder: vec![l; n],
            family: Family::Birkhoff(phi),
            active: n,
            arity: n,
            scale: 1.0,
            source: ConstantsSource::Analytic,
        })
    }

    /// `(1/(n-1)) Σ_{j<n} φ(x_j) φ(x_{j+1})`. Endpoint constants are
    /// `MΛ/(n-1)`, interior ones `2MΛ/(n-1)`.
    pub fn pair_correlation(phi: SiteFunction, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Arity(format!("pair correlation needs n ≥ 2, got {n}")));
        }
        let unit = phi.sup_norm * phi.holder / (n - 1) as f64;
        let holder = (0..n)
            .map(|j| if j == 0 || j == n - 1 { unit } else { 2.0 * unit })
            .collect();
        Ok(Observable {
            tag: format!("pair-correlation-{}", phi.name),
            exponent: phi.exponent,
            holder,
            family: Family::PairCorrelation(phi),
            active: n,
            arity: n,
            scale: 1.0,
            source: ConstantsSource::Analytic,
        })
    }

    /// `max_j w_j φ(x_j)`; `L_j = w_j Λ`.
    pub fn weighted_sup(phi: SiteFunction, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Arity("weighted sup needs at least one weight".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Parameter("weights must be finite and ≥ 0".into()));
        }
        let n = weights.len();
        let holder = weights.iter().map(|w| w * phi.holder).collect();
        Ok(Observable {
            tag: format!("weighted-sup-{}", phi.name),
            exponent: phi.exponent,
            holder,
            family: Family::WeightedSup(phi, weights),
            active: n,
            arity: n,
            scale: 1.0,
            source: ConstantsSource::Analytic,
        })
    }

    pub fn constant(c: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Arity("observable arity must be ≥ 1".into()));
        }
        Ok(Observable {
            family: Family::Constant(c),
            active: n,
            arity: n,
            exponent: 1.0,
            holder: vec![0.0; n],
            scale: 1.0,
            tag: "constant".into(),
            source: ConstantsSource::Analytic,
        })
    }

    /// A black-box observable. Supply constants from
    /// [`estimate_holder_constant`] through [`Observable::with_estimated_constants`]
    /// before using it in a variance bound.
    pub fn custom(
        tag: &str,
        arity: usize,
        exponent: f64,
        f: impl Fn(&[Point]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if arity == 0 {
            return Err(Error::Arity("observable arity must be ≥ 1".into()));
        }
        check_exponent(exponent)?;
        Ok(Observable {
            family: Family::Custom(Arc::new(f)),
            active: arity,
            arity,
            exponent,
            holder: vec![f64::INFINITY; arity],
            scale: 1.0,
            tag: tag.to_string(),
            source: ConstantsSource::Estimated,
        })
    }

    pub fn with_estimated_constants(mut self, holder: Vec<f64>) -> Result<Self> {
        if holder.len() != self.arity {
            return Err(Error::Arity(format!(
                "{} constants supplied for an observable of arity {}",
                holder.len(),
                self.arity
            )));
        }
        if holder.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Parameter("Hölder constants must be finite and ≥ 0".into()));
        }
        self.holder = holder;
        self.source = ConstantsSource::Estimated;
        Ok(self)
    }

    /// `c · K`; every constant is multiplied by `|c|`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut k = self.clone();
        k.scale *= c;
        for l in &mut k.holder {
            *l *= c.abs();
        }
        k
    }

    /// Extends `K` by `extra` coordinates it ignores, with `L_j = 0` there.
    pub fn padded(&self, extra: usize) -> Self {
        let mut k = self.clone();
        k.arity += extra;
        k.holder.extend(std::iter::repeat_n(0.0, extra));
        k
    }

    /// Re-expresses the constants for a smaller exponent `eta` on a domain of
    /// diameter `diameter`: `d^η₀ ≤ diam^(η₀-η) · d^η` for `d ≤ diam`.
    pub fn with_exponent(&self, eta: f64, diameter: f64) -> Result<Self> {
        check_exponent(eta)?;
        if eta > self.exponent {
            return Err(Error::Parameter(format!(
                "{} is only {}-Hölder; cannot use exponent {eta}",
                self.tag, self.exponent
            )));
        }
        let mut k = self.clone();
        if eta < self.exponent {
            let factor = diameter.powf(self.exponent - eta);
            for l in &mut k.holder {
                *l *= factor;
            }
            k.exponent = eta;
        }
        Ok(k)
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn holder_constants(&self) -> &[f64] {
        &self.holder
    }

    pub fn sum_squared_constants(&self) -> f64 {
        self.holder.iter().map(|l| l * l).sum()
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn constants_source(&self) -> ConstantsSource {
        self.source
    }

    /// True when the family is constant by construction.
    pub fn is_constant(&self) -> bool {
        match &self.family {
            Family::Constant(_) => true,
            Family::Birkhoff(phi) | Family::PairCorrelation(phi) | Family::WeightedSup(phi, _) => {
                phi.is_constant()
            }
            Family::Custom(_) => false,
        }
    }

    /// `K(xs[0], …, xs[n-1])`. Panics if `xs.len() != arity`.
    #[inline]
    pub fn evaluate(&self, xs: &[Point]) -> f64 {
        assert_eq!(xs.len(), self.arity, "observable arity mismatch");
        let xs = &xs[..self.active];
        let raw = match &self.family {
            Family::Birkhoff(phi) => {
                xs.iter().map(|p| phi.eval_state(p)).sum::<f64>() / xs.len() as f64
            }
            Family::PairCorrelation(phi) => {
                let mut prev = phi.eval_state(&xs[0]);
                let mut acc = 0.0;
                for p in &xs[1..] {
                    let cur = phi.eval_state(p);
                    acc += prev * cur;
                    prev = cur;
                }
                acc / (xs.len() - 1) as f64
            }
            Family::WeightedSup(phi, w) => xs
                .iter()
                .zip(w)
                .map(|(p, w)| w * phi.eval_state(p))
                .fold(f64::NEG_INFINITY, f64::max),
            Family::Constant(c) => *c,
            Family::Custom(f) => f(xs),
        };
        if self.scale == 1.0 {
            raw
        } else {
            self.scale * raw
        }
    }

    /// `K(states[offset], …, states[offset + n - 1])`.
    pub fn evaluate_on_window(&self, traj: &Trajectory, offset: usize) -> Result<f64> {
        let end = offset.checked_add(self.arity).filter(|&e| e <= traj.len()).ok_or_else(|| {
            Error::Bounds(format!(
                "window [{offset}, {offset}+{}) exceeds trajectory length {}",
                self.arity,
                traj.len()
            ))
        })?;
        Ok(self.evaluate(&traj.states[offset..end]))
    }
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable")
            .field("tag", &self.tag)
            .field("arity", &self.arity)
            .field("exponent", &self.exponent)
            .field("scale", &self.scale)
            .field("source", &self.source)
            .finish()
    }
}

/// A source of states for Hölder-constant estimation.
pub trait StateSource {
    fn sample(&self, rng: &mut dyn rand::RngCore) -> Point;
    fn region(&self) -> Domain;
}

impl StateSource for Domain {
    fn sample(&self, rng: &mut dyn rand::RngCore) -> Point {
        Domain::sample(self, rng)
    }

    fn region(&self) -> Domain {
        *self
    }
}

/// Empirical `L_j`: the largest `|ΔK| / d(x_j, x̃_j)^η` over `pairs` random
/// tuples, each perturbed in coordinate `j` (zero-based) at a distance drawn
/// log-uniformly from `[1e-6, diam]`. This is a lower bound on the true
/// constant; with a fixed `rng` seed, more pairs extend the same sample.
pub fn estimate_holder_constant(
    k: &Observable,
    j: usize,
    eta: f64,
    sampler: &dyn StateSource,
    pairs: usize,
    rng: &mut dyn rand::RngCore,
) -> Result<f64> {
    check_exponent(eta)?;
    if j >= k.arity() {
        return Err(Error::Bounds(format!("coordinate {j} out of range for arity {}", k.arity())));
    }
    let region = sampler.region();
    if !region.is_bounded() {
        return Err(Error::Parameter("Hölder estimation needs a bounded sampling region".into()));
    }
    let (lo, hi) = (1e-6f64.ln(), region.diameter().max(2e-6).ln());
    let mut xs = vec![Point::default(); k.arity()];
    let mut best = 0.0f64;
    for _ in 0..pairs {
        for x in xs.iter_mut() {
            *x = sampler.sample(rng);
        }
        let r = (lo + (hi - lo) * rng.random::<f64>()).exp();
        let base = xs[j];
        let moved = if region.dim == 1 {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            Point::scalar(base.x + sign * r)
        } else {
            let angle = TAU * rng.random::<f64>();
            Point::planar(base.x + r * angle.cos(), base.y + r * angle.sin())
        };
        let moved = region.clamp(moved);
        let d = base.distance(&moved);
        if d == 0.0 {
            continue;
        }
        let k0 = k.evaluate(&xs);
        xs[j] = moved;
        let k1 = k.evaluate(&xs);
        xs[j] = base;
        best = best.max((k1 - k0).abs() / d.powf(eta));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn pts(xs: &[f64]) -> Vec<Point> {
        xs.iter().map(|&x| Point::scalar(x)).collect()
    }

    #[test]
    fn birkhoff_constants() {
        let k = Observable::birkhoff(SiteFunction::cos2pi(), 10).unwrap();
        for l in k.holder_constants() {
            assert_abs_diff_eq!(*l, PI / 5.0, epsilon = 1e-15);
        }
        let k = Observable::birkhoff(SiteFunction::constant(3.0), 7).unwrap();
        assert!(k.holder_constants().iter().all(|&l| l == 0.0));
        let k = Observable::birkhoff(SiteFunction::sqrt(), 4).unwrap();
        assert_eq!(k.holder_constants(), &[0.25; 4]);
        assert_eq!(k.exponent(), 0.5);
        assert!(matches!(Observable::birkhoff(SiteFunction::cos2pi(), 0), Err(Error::Arity(_))));
    }

    #[test]
    fn pair_correlation_constants() {
        let k = Observable::pair_correlation(SiteFunction::cos2pi(), 3).unwrap();
        let l = k.holder_constants();
        assert_abs_diff_eq!(l[0], PI, epsilon = 1e-15);
        assert_abs_diff_eq!(l[1], TAU, epsilon = 1e-15);
        assert_abs_diff_eq!(l[2], PI, epsilon = 1e-15);
        let k = Observable::pair_correlation(SiteFunction::constant(0.0), 5).unwrap();
        assert!(k.holder_constants().iter().all(|&l| l == 0.0));
        let k = Observable::pair_correlation(SiteFunction::cos2pi(), 101).unwrap();
        assert_abs_diff_eq!(k.holder_constants()[1], 4.0 * PI / 100.0, epsilon = 1e-15);
        assert!(matches!(Observable::pair_correlation(SiteFunction::cos2pi(), 1), Err(Error::Arity(_))));
    }

    #[test]
    fn weighted_sup_examples() {
        let k = Observable::weighted_sup(SiteFunction::identity(), vec![1.0, 1.0]).unwrap();
        assert_eq!(k.evaluate(&pts(&[0.2, 0.7])), 0.7);
        let k = Observable::weighted_sup(SiteFunction::identity(), vec![0.0, 0.0]).unwrap();
        assert_eq!(k.evaluate(&pts(&[0.2, 0.7])), 0.0);
        assert_eq!(k.holder_constants(), &[0.0, 0.0]);
        let k = Observable::weighted_sup(SiteFunction::identity(), vec![2.0, 1.0]).unwrap();
        assert_eq!(k.holder_constants(), &[2.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let (a, b, d) = (rng.random::<f64>(), rng.random::<f64>(), 1e-3 * rng.random::<f64>());
            let diff = (k.evaluate(&pts(&[a + d, b])) - k.evaluate(&pts(&[a, b]))).abs();
            assert!(diff <= 2.0 * d + 1e-15);
        }
    }

    #[test]
    fn evaluate_on_window_examples() {
        let traj = crate::maps::DynamicalSystem::doubling()
            .orbit(Point::scalar(0.3), 0, 2)
            .unwrap();
        let k = Observable::birkhoff(SiteFunction::identity(), 2).unwrap();
        assert_abs_diff_eq!(k.evaluate_on_window(&traj, 0).unwrap(), 0.45, epsilon = 1e-15);
        assert!(matches!(k.evaluate_on_window(&traj, 1), Err(Error::Bounds(_))));
        let c = Observable::constant(2.5, 2).unwrap();
        assert_eq!(c.evaluate_on_window(&traj, 0).unwrap(), 2.5);
        let k = Observable::pair_correlation(SiteFunction::cos2pi(), 3).unwrap();
        assert_eq!(k.evaluate(&pts(&[0.0, 0.0, 0.0])), 1.0);
    }

    #[test]
    fn padding_keeps_values() {
        let k = Observable::pair_correlation(SiteFunction::cos2pi(), 3).unwrap();
        let p = k.padded(2);
        assert_eq!(p.arity(), 5);
        assert_eq!(&p.holder_constants()[3..], &[0.0, 0.0]);
        assert_eq!(p.sum_squared_constants(), k.sum_squared_constants());
        let xs = pts(&[0.1, 0.4, 0.8, 0.3, 0.9]);
        let mut ys = xs.clone();
        ys[4] = Point::scalar(0.123);
        assert_eq!(p.evaluate(&xs), k.evaluate(&xs[..3]));
        assert_eq!(p.evaluate(&xs), p.evaluate(&ys));
    }

    #[test]
    fn scaling_multiplies_constants() {
        let k = Observable::birkhoff(SiteFunction::cos2pi(), 4).unwrap();
        let s = k.scaled(-3.0);
        for (a, b) in k.holder_constants().iter().zip(s.holder_constants()) {
            assert_abs_diff_eq!(*b, 3.0 * a, epsilon = 1e-15);
        }
        let xs = pts(&[0.1, 0.2, 0.3, 0.4]);
        assert_abs_diff_eq!(s.evaluate(&xs), -3.0 * k.evaluate(&xs), epsilon = 1e-15);
    }

    #[test]
    fn exponent_change_on_unit_interval_keeps_constants() {
        let k = Observable::birkhoff(SiteFunction::cos2pi(), 4).unwrap();
        let k2 = k.with_exponent(0.5, 1.0).unwrap();
        assert_eq!(k2.holder_constants(), k.holder_constants());
        assert_eq!(k2.exponent(), 0.5);
        let k3 = k.with_exponent(0.5, 4.0).unwrap();
        assert_abs_diff_eq!(k3.holder_constants()[0], 2.0 * k.holder_constants()[0], epsilon = 1e-15);
        let s = Observable::birkhoff(SiteFunction::sqrt(), 2).unwrap();
        assert!(s.with_exponent(1.0, 1.0).is_err());
    }

    #[test]
    fn estimated_constants_examples() {
        let unit = Domain::interval(0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = Observable::birkhoff(SiteFunction::cos2pi(), 10).unwrap();
        let est = estimate_holder_constant(&k, 0, 1.0, &unit, 1000, &mut rng).unwrap();
        assert!(est >= 0.9 * PI / 5.0 && est <= PI / 5.0 * (1.0 + 1e-9), "{est}");

        let c = Observable::constant(1.0, 3).unwrap();
        assert_eq!(estimate_holder_constant(&c, 1, 1.0, &unit, 1000, &mut rng).unwrap(), 0.0);

        let id = Observable::birkhoff(SiteFunction::identity(), 1).unwrap();
        let est = estimate_holder_constant(&id, 0, 1.0, &unit, 100_000, &mut rng).unwrap();
        assert!((0.99..=1.0 + 1e-9).contains(&est), "{est}");

        assert!(matches!(
            estimate_holder_constant(&id, 0, 1.5, &unit, 1000, &mut rng),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn estimates_are_monotone_in_pairs() {
        let unit = Domain::interval(0.0, 1.0);
        let k = Observable::pair_correlation(SiteFunction::abs_dist_half(), 4).unwrap();
        let mut last = 0.0;
        for pairs in [1000, 2000, 4000, 8000] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let est = estimate_holder_constant(&k, 1, 1.0, &unit, pairs, &mut rng).unwrap();
            assert!(est >= last);
            assert!(est <= k.holder_constants()[1] * (1.0 + 1e-9));
            last = est;
        }
    }

    #[test]
    fn bin_averages_match_quadrature() {
        for f in [SiteFunction::cos2pi(), SiteFunction::identity(), SiteFunction::abs_dist_half()] {
            for (a, b) in [(0.0, 0.1), (0.3, 0.7), (0.45, 0.55)] {
                // Split at the kink of |x - 1/2| so the quadrature is exact.
                let m = 0.5f64.clamp(a, b);
                let q = (gauss_legendre(|x| f.eval(x), a, m) + gauss_legendre(|x| f.eval(x), m, b)) / (b - a);
                assert_abs_diff_eq!(f.bin_average(a, b), q, epsilon = 1e-10);
            }
        }
        let s = SiteFunction::sqrt();
        let composite: f64 = (0..64)
            .map(|i| gauss_legendre(|x| x.sqrt(), 0.25 + 0.75 * i as f64 / 64.0, 0.25 + 0.75 * (i + 1) as f64 / 64.0))
            .sum();
        assert_abs_diff_eq!(s.bin_average(0.25, 1.0), composite / 0.75, epsilon = 1e-10);
    }

    #[test]
    fn sup_norms_on_ranges() {
        assert_eq!(SiteFunction::identity().on_range(-1.8, 1.8).sup_norm(), 1.8);
        assert_eq!(SiteFunction::cos2pi().on_range(-1.8, 1.8).sup_norm(), 1.0);
        assert_eq!(SiteFunction::abs_dist_half().sup_norm(), 0.5);
        assert_abs_diff_eq!(SiteFunction::cos2pi().on_range(0.1, 0.2).sup_norm(), (TAU * 0.1).cos());
    }
}
