//! Catalog of concrete dynamical systems: the expanding interval maps
//! (doubling, tent, logistic) and the planar Lozi and Hénon maps.
//!
//! Every system is an immutable value. Evaluation is pure, so systems can be
//! shared freely between worker threads.
//!
//! Interval maps reduce their images into `[0, 1)`; the single point that
//! would land on `1` is sent to `0`. Planar maps are evaluated on the whole
//! plane and an orbit is declared divergent once a coordinate stops being
//! finite or leaves the escape radius.
//!
//! The doubling and tent maps act on binary digits by a shift (with a
//! complement for the tent map), so their `f64` orbits collapse onto the
//! fixed point `0` after at most 53 steps. [`BitExpansion`] carries an
//! arbitrarily long binary seed and [`DynamicalSystem::orbit_from_expansion`]
//! returns the `f64` projection of its exact orbit, which is what the
//! ensemble sampler uses for these two maps.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Coordinates beyond this radius count as an escaped (divergent) orbit.
pub const ESCAPE_RADIUS: f64 = 1.0e6;

const TWO_POW_53: f64 = 9_007_199_254_740_992.0;
const MASK_53: u64 = (1u64 << 53) - 1;

/// A state of a one- or two-dimensional system. One-dimensional systems keep
/// `y == 0`, so [`Point::distance`] is the Euclidean metric in both cases.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn scalar(x: f64) -> Self {
        Point { x, y: 0.0 }
    }

    pub const fn planar(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// A product of closed intervals; bounds may be infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Domain {
    pub dim: usize,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl Domain {
    pub const fn interval(lo: f64, hi: f64) -> Self {
        Domain { dim: 1, lower: [lo, 0.0], upper: [hi, 0.0] }
    }

    pub const fn rectangle(x: (f64, f64), y: (f64, f64)) -> Self {
        Domain { dim: 2, lower: [x.0, y.0], upper: [x.1, y.1] }
    }

    pub fn contains(&self, p: &Point) -> bool {
        let inside = |v: f64, k: usize| v >= self.lower[k] && v <= self.upper[k];
        match self.dim {
            1 => inside(p.x, 0) && p.y == 0.0,
            _ => inside(p.x, 0) && inside(p.y, 1),
        }
    }

    pub fn is_bounded(&self) -> bool {
        (0..self.dim).all(|k| self.lower[k].is_finite() && self.upper[k].is_finite())
    }

    pub fn diameter(&self) -> f64 {
        let dx = self.upper[0] - self.lower[0];
        let dy = if self.dim == 2 { self.upper[1] - self.lower[1] } else { 0.0 };
        dx.hypot(dy)
    }

    /// Projects `p` onto the domain coordinate-wise.
    pub fn clamp(&self, p: Point) -> Point {
        let x = p.x.clamp(self.lower[0], self.upper[0]);
        let y = if self.dim == 2 { p.y.clamp(self.lower[1], self.upper[1]) } else { 0.0 };
        Point { x, y }
    }

    /// Draws a point uniformly from a bounded domain.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let x = self.lower[0] + (self.upper[0] - self.lower[0]) * rng.random::<f64>();
        let y = if self.dim == 2 {
            self.lower[1] + (self.upper[1] - self.lower[1]) * rng.random::<f64>()
        } else {
            0.0
        };
        Point { x, y }
    }

    /// Range of the first coordinate.
    pub fn first_coordinate_range(&self) -> (f64, f64) {
        (self.lower[0], self.upper[0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "system", rename_all = "lowercase")]
pub enum MapKind {
    Doubling,
    Tent,
    Logistic { a: f64 },
    Lozi { a: f64, b: f64 },
    Henon { a: f64, b: f64 },
}

/// Maps whose action on binary digits is exact: a shift, or a shift
/// followed by a complement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SymbolicMap {
    Doubling,
    Tent,
}

/// Derivative matrix at a point. For one-dimensional systems only
/// `entries[0][0]` is meaningful.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jacobian {
    pub dim: usize,
    pub entries: [[f64; 2]; 2],
    /// The point lies on a measure-zero set where the map is not
    /// differentiable; `entries` holds a one-sided derivative.
    pub on_singular_set: bool,
}

impl Jacobian {
    fn scalar(d: f64, on_singular_set: bool) -> Self {
        Jacobian { dim: 1, entries: [[d, 0.0], [0.0, 0.0]], on_singular_set }
    }
}

/// A maximal interval on which a one-dimensional map is continuous and
/// strictly monotone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonotoneBranch {
    pub lo: f64,
    pub hi: f64,
    pub increasing: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DynamicalSystem {
    kind: MapKind,
}

/// Names accepted by [`DynamicalSystem::from_name`].
pub const CATALOG: [&str; 5] = ["doubling", "tent", "logistic", "lozi", "henon"];

impl DynamicalSystem {
    pub fn doubling() -> Self {
        DynamicalSystem { kind: MapKind::Doubling }
    }

    pub fn tent() -> Self {
        DynamicalSystem { kind: MapKind::Tent }
    }

    pub fn logistic(a: f64) -> Result<Self> {
        if !(a > 0.0 && a <= 4.0) {
            return Err(Error::Parameter(format!(
                "logistic parameter a must lie in (0, 4], got {a}"
            )));
        }
        Ok(DynamicalSystem { kind: MapKind::Logistic { a } })
    }

    pub fn lozi(a: f64, b: f64) -> Result<Self> {
        check_planar("lozi", a, b)?;
        Ok(DynamicalSystem { kind: MapKind::Lozi { a, b } })
    }

    pub fn henon(a: f64, b: f64) -> Result<Self> {
        check_planar("henon", a, b)?;
        Ok(DynamicalSystem { kind: MapKind::Henon { a, b } })
    }

    /// Builds a catalog system from its configuration name and parameter
    /// overrides. Unknown names or parameters are rejected with the list of
    /// valid options.
    pub fn from_name(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let allowed: &[&str] = match name {
            "doubling" | "tent" => &[],
            "logistic" => &["a"],
            "lozi" | "henon" => &["a", "b"],
            _ => {
                return Err(Error::Parameter(format!(
                    "unknown system \"{name}\"; supported systems: {}",
                    CATALOG.join(", ")
                )))
            }
        };
        let unknown: Vec<&str> = params
            .keys()
            .map(String::as_str)
            .filter(|k| !allowed.contains(k))
            .collect();
        if !unknown.is_empty() {
            let valid = if allowed.is_empty() { "none".to_string() } else { allowed.join(", ") };
            return Err(Error::Parameter(format!(
                "unknown parameter(s) {} for system \"{name}\"; valid parameters: {valid}",
                unknown.join(", ")
            )));
        }
        let get = |k: &str, default: f64| params.get(k).copied().unwrap_or(default);
        match name {
            "doubling" => Ok(Self::doubling()),
            "tent" => Ok(Self::tent()),
            "logistic" => Self::logistic(get("a", 4.0)),
            "lozi" => Self::lozi(get("a", 1.7), get("b", 0.5)),
            _ => Self::henon(get("a", 1.4), get("b", 0.3)),
        }
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            MapKind::Doubling => "doubling",
            MapKind::Tent => "tent",
            MapKind::Logistic { .. } => "logistic",
            MapKind::Lozi { .. } => "lozi",
            MapKind::Henon { .. } => "henon",
        }
    }

    pub fn params(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        match self.kind {
            MapKind::Doubling | MapKind::Tent => {}
            MapKind::Logistic { a } => {
                out.insert("a".to_string(), a);
            }
            MapKind::Lozi { a, b } | MapKind::Henon { a, b } => {
                out.insert("a".to_string(), a);
                out.insert("b".to_string(), b);
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            MapKind::Doubling | MapKind::Tent | MapKind::Logistic { .. } => 1,
            MapKind::Lozi { .. } | MapKind::Henon { .. } => 2,
        }
    }

    pub fn domain(&self) -> Domain {
        match self.dim() {
            1 => Domain::interval(0.0, 1.0),
            _ => Domain::rectangle(
                (f64::NEG_INFINITY, f64::INFINITY),
                (f64::NEG_INFINITY, f64::INFINITY),
            ),
        }
    }

    /// A box containing the attractor (the support of the natural invariant
    /// measure) at the default parameters.
    pub fn attractor_box(&self) -> Domain {
        match self.kind {
            MapKind::Henon { .. } => Domain::rectangle((-1.8, 1.8), (-0.6, 0.6)),
            MapKind::Lozi { .. } => Domain::rectangle((-1.8, 1.8), (-0.9, 0.9)),
            _ => Domain::interval(0.0, 1.0),
        }
    }

    /// Box from which ensemble seeds are drawn for the planar maps. It lies
    /// inside the basin of attraction at the default parameters (no escapes
    /// in 2·10^5 trial seeds burned in for 10^3 steps), unlike the attractor
    /// bounding box, a third of which escapes.
    pub fn seed_box(&self) -> Domain {
        match self.kind {
            MapKind::Henon { .. } => Domain::rectangle((-0.8, 0.8), (-0.25, 0.25)),
            MapKind::Lozi { .. } => Domain::rectangle((-0.8, 0.8), (-0.4, 0.4)),
            _ => Domain::interval(0.0, 1.0),
        }
    }

    pub fn symbolic(&self) -> Option<SymbolicMap> {
        match self.kind {
            MapKind::Doubling => Some(SymbolicMap::Doubling),
            MapKind::Tent => Some(SymbolicMap::Tent),
            _ => None,
        }
    }

    /// Closed-form distribution function of the absolutely continuous
    /// invariant measure, where one is known.
    pub fn invariant_cdf(&self) -> Option<fn(f64) -> f64> {
        fn lebesgue(x: f64) -> f64 {
            x.clamp(0.0, 1.0)
        }
        fn arcsine(x: f64) -> f64 {
            std::f64::consts::FRAC_2_PI * x.clamp(0.0, 1.0).sqrt().asin()
        }
        match self.kind {
            MapKind::Doubling | MapKind::Tent => Some(lebesgue),
            MapKind::Logistic { a: 4.0 } => Some(arcsine),
            _ => None,
        }
    }

    /// One application of the map, without domain or divergence checks.
    #[inline]
    pub fn step(&self, p: Point) -> Point {
        match self.kind {
            MapKind::Doubling => Point::scalar(reduce_unit(2.0 * p.x)),
            MapKind::Tent => Point::scalar(reduce_unit(1.0 - (1.0 - 2.0 * p.x).abs())),
            MapKind::Logistic { a } => Point::scalar(reduce_unit(a * p.x * (1.0 - p.x))),
            MapKind::Lozi { a, b } => Point::planar(1.0 + p.y - a * p.x.abs(), b * p.x),
            MapKind::Henon { a, b } => Point::planar(1.0 + p.y - a * p.x * p.x, b * p.x),
        }
    }

    fn check_domain(&self, p: &Point) -> Result<()> {
        if !p.is_finite() || !self.domain().contains(p) {
            return Err(Error::Domain(format!(
                "state ({}, {}) lies outside the domain of {}",
                p.x,
                p.y,
                self.name()
            )));
        }
        Ok(())
    }

    fn check_escape(&self, p: &Point, step: u64) -> Result<()> {
        if !p.is_finite() {
            return Err(Error::Divergence { step, detail: "non-finite coordinate".into() });
        }
        if p.x.abs() > ESCAPE_RADIUS || p.y.abs() > ESCAPE_RADIUS {
            return Err(Error::Divergence {
                step,
                detail: format!("|state| exceeded escape radius {ESCAPE_RADIUS:e}"),
            });
        }
        Ok(())
    }

    /// `f^steps(state)` by iterated evaluation.
    pub fn evolve(&self, state: Point, steps: u64) -> Result<Point> {
        if steps == 0 {
            return Err(Error::Parameter("steps must be ≥ 1".into()));
        }
        self.check_domain(&state)?;
        let mut p = state;
        for k in 1..=steps {
            p = self.step(p);
            self.check_escape(&p, k)?;
        }
        Ok(p)
    }

    /// States `f^burn_in(seed), …, f^(burn_in + length - 1)(seed)`.
    pub fn orbit(&self, seed: Point, burn_in: u64, length: usize) -> Result<Trajectory> {
        let mut states = vec![Point::default(); length];
        self.fill_orbit(seed, burn_in, &mut states)?;
        Ok(Trajectory { system: *self, states, burn_in, seed_state: seed })
    }

    /// Writes the orbit segment starting at `f^burn_in(seed)` into `out`.
    pub fn fill_orbit(&self, seed: Point, burn_in: u64, out: &mut [Point]) -> Result<()> {
        if out.is_empty() {
            return Err(Error::Parameter("orbit length must be ≥ 1".into()));
        }
        self.check_domain(&seed)?;
        let mut p = seed;
        for k in 1..=burn_in {
            p = self.step(p);
            self.check_escape(&p, k)?;
        }
        out[0] = p;
        for j in 1..out.len() {
            p = self.step(p);
            self.check_escape(&p, burn_in + j as u64)?;
            out[j] = p;
        }
        Ok(())
    }

    fn require_symbolic(&self) -> Result<SymbolicMap> {
        self.symbolic().ok_or_else(|| {
            Error::Capability(format!(
                "{} has no exact binary-digit action (only doubling and tent do)",
                self.name()
            ))
        })
    }

    /// Orbit of the point with binary expansion `bits`, projected to `f64`
    /// by truncating each iterate to 53 binary digits. Digits past the end
    /// of `bits` are zero.
    pub fn orbit_from_expansion(
        &self,
        bits: &BitExpansion,
        burn_in: u64,
        length: usize,
    ) -> Result<Trajectory> {
        let mut states = vec![Point::default(); length];
        self.fill_from_expansion(bits, burn_in, &mut states)?;
        Ok(Trajectory {
            system: *self,
            states,
            burn_in,
            seed_state: Point::scalar(bits.to_f64()),
        })
    }

    pub fn fill_from_expansion(
        &self,
        bits: &BitExpansion,
        burn_in: u64,
        out: &mut [Point],
    ) -> Result<()> {
        let map = self.require_symbolic()?;
        if out.is_empty() {
            return Err(Error::Parameter("orbit length must be ≥ 1".into()));
        }
        let start = burn_in as usize;
        for (j, slot) in out.iter_mut().enumerate() {
            let k = start + j;
            let mut window = bits.window53(k);
            // The k-th tent iterate is the digit shift by k, complemented
            // exactly when digit d_k is 1.
            if map == SymbolicMap::Tent && k >= 1 && bits.digit(k - 1) == 1 {
                window = MASK_53 - window;
            }
            *slot = Point::scalar(window as f64 / TWO_POW_53);
        }
        Ok(())
    }

    pub fn jacobian(&self, p: Point) -> Option<Jacobian> {
        Some(match self.kind {
            MapKind::Doubling => Jacobian::scalar(2.0, p.x == 0.5),
            MapKind::Tent => {
                Jacobian::scalar(if p.x < 0.5 { 2.0 } else { -2.0 }, p.x == 0.5)
            }
            MapKind::Logistic { a } => Jacobian::scalar(a * (1.0 - 2.0 * p.x), false),
            MapKind::Lozi { a, b } => {
                // One-sided derivative from x > 0 on the fold line x = 0.
                let s = if p.x < 0.0 { -1.0 } else { 1.0 };
                Jacobian {
                    dim: 2,
                    entries: [[-a * s, 1.0], [b, 0.0]],
                    on_singular_set: p.x == 0.0,
                }
            }
            MapKind::Henon { a, b } => Jacobian {
                dim: 2,
                entries: [[-2.0 * a * p.x, 1.0], [b, 0.0]],
                on_singular_set: false,
            },
        })
    }

    /// Lyapunov exponents (nats per iteration) in decreasing order, by
    /// Gram–Schmidt re-orthonormalization of a tangent frame at every step.
    pub fn lyapunov_spectrum(&self, seed: Point, steps: u64) -> Result<Vec<f64>> {
        if steps < 100 {
            return Err(Error::Parameter(format!("lyapunov_spectrum needs steps ≥ 100, got {steps}")));
        }
        self.check_domain(&seed)?;
        let jac = |p| {
            self.jacobian(p).ok_or_else(|| {
                Error::Capability(format!("{} has no derivative data", self.name()))
            })
        };
        let mut p = seed;
        if self.dim() == 1 {
            let mut sum = 0.0;
            for k in 1..=steps {
                sum += jac(p)?.entries[0][0].abs().ln();
                p = self.step(p);
                self.check_escape(&p, k)?;
            }
            return Ok(vec![sum / steps as f64]);
        }
        let mut q1 = [1.0, 0.0];
        let mut q2 = [0.0, 1.0];
        let (mut s1, mut s2) = (0.0, 0.0);
        for k in 1..=steps {
            let j = jac(p)?.entries;
            let apply = |v: [f64; 2]| {
                [j[0][0] * v[0] + j[0][1] * v[1], j[1][0] * v[0] + j[1][1] * v[1]]
            };
            let v1 = apply(q1);
            let mut v2 = apply(q2);
            let r11 = v1[0].hypot(v1[1]);
            q1 = [v1[0] / r11, v1[1] / r11];
            let proj = q1[0] * v2[0] + q1[1] * v2[1];
            v2 = [v2[0] - proj * q1[0], v2[1] - proj * q1[1]];
            let r22 = v2[0].hypot(v2[1]);
            q2 = [v2[0] / r22, v2[1] / r22];
            s1 += r11.ln();
            s2 += r22.ln();
            p = self.step(p);
            self.check_escape(&p, k)?;
        }
        let n = steps as f64;
        let mut out = vec![s1 / n, s2 / n];
        out.sort_by(|a, b| b.total_cmp(a));
        Ok(out)
    }

    /// Monotone branches of a one-dimensional map; `None` for planar maps.
    pub fn monotone_branches(&self) -> Option<Vec<MonotoneBranch>> {
        let halves = |second_increasing| {
            vec![
                MonotoneBranch { lo: 0.0, hi: 0.5, increasing: true },
                MonotoneBranch { lo: 0.5, hi: 1.0, increasing: second_increasing },
            ]
        };
        match self.kind {
            MapKind::Doubling => Some(halves(true)),
            MapKind::Tent | MapKind::Logistic { .. } => Some(halves(false)),
            _ => None,
        }
    }

    /// The continuous extension of branch `branch` evaluated at `x`
    /// (no reduction into `[0, 1)`).
    pub fn branch_image(&self, branch: usize, x: f64) -> f64 {
        match (self.kind, branch) {
            (MapKind::Doubling, 0) => 2.0 * x,
            (MapKind::Doubling, _) => 2.0 * x - 1.0,
            (MapKind::Tent, 0) => 2.0 * x,
            (MapKind::Tent, _) => 2.0 - 2.0 * x,
            (MapKind::Logistic { a }, _) => a * x * (1.0 - x),
            _ => f64::NAN,
        }
    }

    /// Inverse of branch `branch` at `y` (which must lie in the branch image).
    pub fn branch_preimage(&self, branch: usize, y: f64) -> f64 {
        match (self.kind, branch) {
            (MapKind::Doubling, 0) => 0.5 * y,
            (MapKind::Doubling, _) => 0.5 * (y + 1.0),
            (MapKind::Tent, 0) => 0.5 * y,
            (MapKind::Tent, _) => 1.0 - 0.5 * y,
            (MapKind::Logistic { a }, b) => {
                let t = (4.0 * y / a).clamp(0.0, 1.0);
                let s = (1.0 - t).sqrt();
                // (1 - s) / 2 rewritten to avoid cancellation near y = 0.
                let low = 0.5 * t / (1.0 + s);
                if b == 0 {
                    low
                } else {
                    1.0 - low
                }
            }
            _ => f64::NAN,
        }
    }
}

impl fmt::Display for DynamicalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())?;
        let params = self.params();
        if !params.is_empty() {
            let parts: Vec<String> = params.iter().map(|(k, v)| format!("{k}={v}")).collect();
            write!(f, "({})", parts.join(", "))?;
        }
        Ok(())
    }
}

fn check_planar(name: &str, a: f64, b: f64) -> Result<()> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Parameter(format!("{name} parameters must be finite, got a={a}, b={b}")));
    }
    Ok(())
}

#[inline]
fn reduce_unit(y: f64) -> f64 {
    if y >= 1.0 {
        y - y.floor()
    } else {
        y
    }
}

/// A finite orbit segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub system: DynamicalSystem,
    pub states: Vec<Point>,
    /// Transient steps discarded before `states[0]`.
    pub burn_in: u64,
    pub seed_state: Point,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Binary expansion `0.d_1 d_2 d_3 …` of a point in `[0, 1)`, most
/// significant digit first. Digits beyond `len` are zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitExpansion {
    words: Vec<u64>,
    len: usize,
}

impl BitExpansion {
    pub fn from_digits(digits: &[u8]) -> Self {
        let mut words = vec![0u64; digits.len().div_ceil(64)];
        for (i, &d) in digits.iter().enumerate() {
            if d != 0 {
                words[i / 64] |= 1u64 << (63 - i % 64);
            }
        }
        BitExpansion { words, len: digits.len() }
    }

    /// `len` independent fair digits.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Self {
        let mut words: Vec<u64> = (0..len.div_ceil(64)).map(|_| rng.next_u64()).collect();
        if !len.is_multiple_of(64) {
            if let Some(last) = words.last_mut() {
                *last &= !(u64::MAX >> (len % 64));
            }
        }
        BitExpansion { words, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Digit `d_{i+1}` (zero-based index `i`).
    pub fn digit(&self, i: usize) -> u8 {
        if i >= self.len {
            return 0;
        }
        ((self.words[i / 64] >> (63 - i % 64)) & 1) as u8
    }

    fn word(&self, w: usize) -> u64 {
        self.words.get(w).copied().unwrap_or(0)
    }

    /// Digits `offset .. offset + 53` read as an integer.
    pub fn window53(&self, offset: usize) -> u64 {
        let (w, r) = (offset / 64, offset % 64);
        let hi = self.word(w) << r;
        let lo = if r == 0 { 0 } else { self.word(w + 1) >> (64 - r) };
        (hi | lo) >> 11
    }

    /// The point truncated to 53 digits.
    pub fn to_f64(&self) -> f64 {
        self.window53(0) as f64 / TWO_POW_53
    }
}
