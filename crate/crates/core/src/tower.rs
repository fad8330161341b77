//! Exact first-return towers over dyadic cylinders for the doubling and
//! tent maps.
//!
//! A base `Λ = [p/2^k, (p+1)/2^k)` is the cylinder of a binary word `w` of
//! length `k`. A point returns at time `n` when the first `k` digits of
//! `fⁿ(x)` spell `w`; both catalog maps act on digits exactly, so the return
//! branches are binary cylinders of length `R + k` that are enumerated by
//! depth-first search and carried as exact dyadic rationals.
//!
//! Separation times use the counting convention: `s(z, z′)` is the first
//! iterate at which `Fⁱ(z)` and `Fⁱ(z′)` fall in different atoms
//! `Δ_{q,j}` of the tower partition.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::maps::{DynamicalSystem, SymbolicMap};
use crate::stats;
use crate::transfer::{Layout, Stationary, StochasticMatrix, UlamOperator};

/// Largest supported `q_max + k`: keeps every measure in a `u128` numerator.
pub const MAX_DEPTH: usize = 110;
/// Cap on search-tree nodes during branch enumeration.
pub const NODE_CAP: usize = 1 << 21;
/// Truncated mass above which Kac and tower-Ulam computations refuse to run.
pub const TAIL_LIMIT: f64 = 1e-6;

/// Nonnegative dyadic rational `num / 2^exp`, kept in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dyadic {
    num: u128,
    exp: u32,
}

impl Dyadic {
    pub const ZERO: Dyadic = Dyadic { num: 0, exp: 0 };
    pub const ONE: Dyadic = Dyadic { num: 1, exp: 0 };

    pub fn new(mut num: u128, mut exp: u32) -> Self {
        if num == 0 {
            return Dyadic::ZERO;
        }
        let tz = num.trailing_zeros().min(exp);
        num >>= tz;
        exp -= tz;
        Dyadic { num, exp }
    }

    /// `2^{-k}`.
    pub fn half_pow(k: u32) -> Self {
        Dyadic::new(1, k)
    }

    pub fn numerator(&self) -> u128 {
        self.num
    }

    pub fn exponent(&self) -> u32 {
        self.exp
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 * 2f64.powi(-(self.exp as i32))
    }

    fn aligned(self, other: Dyadic) -> (u128, u128, u32) {
        let e = self.exp.max(other.exp);
        (self.num << (e - self.exp), other.num << (e - other.exp), e)
    }

    pub fn add(self, other: Dyadic) -> Dyadic {
        let (a, b, e) = self.aligned(other);
        Dyadic::new(a.checked_add(b).expect("dyadic overflow"), e)
    }

    /// `self − other`, or `None` when negative.
    pub fn checked_sub(self, other: Dyadic) -> Option<Dyadic> {
        let (a, b, e) = self.aligned(other);
        a.checked_sub(b).map(|d| Dyadic::new(d, e))
    }

    pub fn mul_int(self, k: u64) -> Dyadic {
        Dyadic::new(self.num.checked_mul(k as u128).expect("dyadic overflow"), self.exp)
    }

    pub fn mul(self, other: Dyadic) -> Dyadic {
        Dyadic::new(self.num.checked_mul(other.num).expect("dyadic overflow"), self.exp + other.exp)
    }

    /// `"p/2^k"` with a chosen exponent `k ≥ self.exponent()`.
    pub fn display_with_exp(&self, k: u32) -> String {
        assert!(k >= self.exp);
        format!("{}/2^{}", self.num << (k - self.exp), k)
    }
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b, _) = self.aligned(*other);
        a.cmp(&b)
    }
}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/2^{}", self.num, self.exp)
    }
}

impl FromStr for Dyadic {
    type Err = Error;

    /// Accepts `p`, `p/q` with `q` a power of two, and `p/2^k`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Parameter(format!("cannot parse {s:?} as a dyadic rational p/2^k"));
        let int = |t: &str| t.trim().parse::<u128>().map_err(|_| bad());
        let Some((p, q)) = s.split_once('/') else {
            return Ok(Dyadic::new(int(s)?, 0));
        };
        let p = int(p)?;
        let q = q.trim();
        if let Some(k) = q.strip_prefix("2^") {
            let k: u32 = k.trim().parse().map_err(|_| bad())?;
            if k as usize > MAX_DEPTH {
                return Err(Error::Capability(format!("denominator 2^{k} exceeds 2^{MAX_DEPTH}")));
            }
            return Ok(Dyadic::new(p, k));
        }
        let q = int(q)?;
        if q == 0 || !q.is_power_of_two() {
            return Err(Error::Capability(format!(
                "{s} is not dyadic; tower bases need endpoints p/2^k"
            )));
        }
        Ok(Dyadic::new(p, q.trailing_zeros()))
    }
}

/// Parses a base interval written `"a..b"` with dyadic endpoints.
pub fn parse_base(s: &str) -> Result<(Dyadic, Dyadic)> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| Error::Parameter(format!("base {s:?} must be written as left..right, e.g. 0/1..1/2")))?;
    Ok((a.parse()?, b.parse()?))
}

/// One first-return branch `Λ_i`: a binary cylinder of length `R_i + k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Branch {
    pub index: usize,
    pub left: Dyadic,
    pub right: Dyadic,
    pub return_time: usize,
    /// Orientation of `f^{R_i}` on the branch.
    pub increasing: bool,
    word: Vec<u8>,
}

impl Branch {
    pub fn measure(&self) -> Dyadic {
        self.right.checked_sub(self.left).expect("ordered endpoints")
    }

    /// Binary digits defining the cylinder.
    pub fn word(&self) -> &[u8] {
        &self.word
    }
}

/// Value of a finite binary word as the left end of its cylinder.
fn word_value(word: &[u8]) -> Dyadic {
    let num = word.iter().fold(0u128, |acc, &d| (acc << 1) | d as u128);
    Dyadic::new(num, word.len() as u32)
}

/// Does the `n`-th iterate of any point with leading digits `buf` (at least
/// `n + k` of them) start with `w`?
fn returns_at(map: SymbolicMap, buf: &[u8], w: &[u8], n: usize) -> bool {
    match map {
        SymbolicMap::Doubling => &buf[n..n + w.len()] == w,
        SymbolicMap::Tent => {
            let c = buf[n - 1];
            w.iter().enumerate().all(|(j, &wj)| buf[n + j] ^ c == wj)
        }
    }
}

/// Image word and orientation of `f^q` on the cylinder of `word`.
fn cylinder_image(map: SymbolicMap, word: &[u8], q: usize) -> (Vec<u8>, bool) {
    match map {
        SymbolicMap::Doubling => (word[q..].to_vec(), true),
        SymbolicMap::Tent if q == 0 => (word.to_vec(), true),
        SymbolicMap::Tent => {
            let c = word[q - 1];
            (word[q..].iter().map(|d| d ^ c).collect(), c == 0)
        }
    }
}

#[derive(Clone, Debug)]
pub struct TowerModel {
    system: DynamicalSystem,
    map: SymbolicMap,
    base_word: Vec<u8>,
    base_left: Dyadic,
    base_right: Dyadic,
    q_max: usize,
    branches: Vec<Branch>,
    /// Cylinders of length `q_max + k` that have not returned by `q_max`.
    survivors: Vec<Vec<u8>>,
    tail_remainder: Dyadic,
    level_measures: Vec<Dyadic>,
    fitted_log_theta: Option<f64>,
}

/// Enumerates first-return branches of `system` to the dyadic cylinder
/// `[left, right)` up to return time `q_max`.
pub fn build_first_return_tower(
    system: &DynamicalSystem,
    left: Dyadic,
    right: Dyadic,
    q_max: usize,
) -> Result<TowerModel> {
    let map = system.symbolic().ok_or_else(|| {
        Error::Capability(format!(
            "exact towers need a full-branch dyadic Markov map (doubling or tent); got {}",
            system.name()
        ))
    })?;
    if q_max < 1 {
        return Err(Error::Parameter("q_max must be ≥ 1".into()));
    }
    let width = right
        .checked_sub(left)
        .filter(|w| *w > Dyadic::ZERO && w.numerator() == 1)
        .ok_or_else(|| {
            Error::Capability(format!(
                "base [{left}, {right}) must be a dyadic cylinder [p/2^k, (p+1)/2^k)"
            ))
        })?;
    if left.exponent() > width.exponent() {
        return Err(Error::Capability(format!(
            "base [{left}, {right}) must be a dyadic cylinder [p/2^k, (p+1)/2^k)"
        )));
    }
    if right > Dyadic::ONE {
        return Err(Error::Parameter(format!("base [{left}, {right}) leaves [0, 1)")));
    }
    let k = width.exponent() as usize;
    if q_max + k > MAX_DEPTH {
        return Err(Error::Parameter(format!(
            "q_max + base depth must be ≤ {MAX_DEPTH}, got {q_max} + {k}"
        )));
    }
    let p = left.numerator() << (k as u32 - left.exponent());
    let base_word: Vec<u8> = (0..k).rev().map(|i| ((p >> i) & 1) as u8).collect();

    let mut search = Search { map, w: &base_word, q_max, nodes: 0, branches: Vec::new(), survivors: Vec::new() };
    let mut buf = base_word.clone();
    search.explore(&mut buf, 1)?;
    let Search { branches, survivors, .. } = search;

    let branches: Vec<Branch> = branches
        .into_iter()
        .enumerate()
        .map(|(index, (word, return_time))| {
            let left = word_value(&word);
            let increasing = map == SymbolicMap::Doubling || word[return_time - 1] == 0;
            Branch {
                index,
                left,
                right: left.add(Dyadic::half_pow(word.len() as u32)),
                return_time,
                increasing,
                word,
            }
        })
        .collect();

    let tail_remainder = Dyadic::half_pow(q_max as u32).mul_int(survivors.len() as u64);
    let mut level_measures = Vec::with_capacity(q_max);
    let mut level = width;
    for q in 0..q_max {
        level_measures.push(level);
        for b in branches.iter().filter(|b| b.return_time == q + 1) {
            level = level.checked_sub(b.measure()).expect("branches inside base");
        }
    }

    let mut tower = TowerModel {
        system: *system,
        map,
        base_word,
        base_left: left,
        base_right: right,
        q_max,
        branches,
        survivors,
        tail_remainder,
        level_measures,
        fitted_log_theta: None,
    };
    tower.fitted_log_theta = tower.fit_log_theta();
    Ok(tower)
}

struct Search<'a> {
    map: SymbolicMap,
    w: &'a [u8],
    q_max: usize,
    nodes: usize,
    branches: Vec<(Vec<u8>, usize)>,
    survivors: Vec<Vec<u8>>,
}

impl Search<'_> {
    /// `buf` holds `n − 1 + k` digits that have not returned before time `n`.
    fn explore(&mut self, buf: &mut Vec<u8>, n: usize) -> Result<()> {
        for d in 0..2u8 {
            self.nodes += 1;
            if self.nodes > NODE_CAP {
                return Err(Error::Capability(format!(
                    "branch enumeration exceeds {NODE_CAP} cylinders; use a coarser base or a smaller q_max"
                )));
            }
            buf.push(d);
            if returns_at(self.map, buf, self.w, n) {
                self.branches.push((buf.clone(), n));
            } else if n == self.q_max {
                self.survivors.push(buf.clone());
            } else {
                self.explore(buf, n + 1)?;
            }
            buf.pop();
        }
        Ok(())
    }
}

/// A tower point `(x, q)` with `x` given by its exact binary expansion: a
/// finite digit prefix followed by a constant tail digit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolicPoint {
    digits: Vec<u8>,
    tail: u8,
    offset: usize,
    flip: u8,
    level: usize,
}

impl SymbolicPoint {
    pub fn new(digits: Vec<u8>, tail: u8, level: usize) -> Result<Self> {
        if tail > 1 || digits.iter().any(|&d| d > 1) {
            return Err(Error::Parameter("binary digits must be 0 or 1".into()));
        }
        Ok(SymbolicPoint { digits, tail, offset: 0, flip: 0, level })
    }

    /// The base point `value` (tail of zeros) on level `level`.
    pub fn from_dyadic(value: Dyadic, level: usize) -> Result<Self> {
        if value >= Dyadic::ONE {
            return Err(Error::Domain(format!("{value} is outside [0, 1)")));
        }
        let k = value.exponent();
        let digits = (0..k).rev().map(|i| ((value.numerator() >> i) & 1) as u8).collect();
        SymbolicPoint::new(digits, 0, level)
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// The `i`-th binary digit (zero-based) of the base point.
    pub fn digit(&self, i: usize) -> u8 {
        self.digits.get(self.offset + i).copied().unwrap_or(self.tail) ^ self.flip
    }

    fn remaining(&self) -> usize {
        self.digits.len().saturating_sub(self.offset)
    }

    /// Applies `fⁿ` to the base point.
    fn advance(&mut self, map: SymbolicMap, n: usize) {
        if n == 0 {
            return;
        }
        let c = self.digit(n - 1);
        self.offset += n;
        if map == SymbolicMap::Tent {
            self.flip ^= c;
        }
    }

    /// Exact value of the base point as `numerator / 2^len`.
    fn exact_value(&self) -> (BigUint, usize) {
        let m = self.remaining();
        let mut num = BigUint::default();
        for i in 0..m {
            num = (num << 1u32) + BigUint::from(self.digit(i));
        }
        if self.digit(m) == 1 {
            num += 1u32;
        }
        (num, m)
    }
}

/// Result of a separation-time computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Separation {
    /// First iterate at which the two points occupy different atoms.
    Exact(usize),
    /// No separation within the horizon.
    AtLeast(usize),
}

impl Separation {
    pub fn truncated(self, horizon: usize) -> Separation {
        match self {
            Separation::Exact(s) if s <= horizon => Separation::Exact(s),
            _ => Separation::AtLeast(horizon),
        }
    }
}

/// Outcome of the backward-contraction check on random dyadic pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ContractionCheck {
    pub pairs: usize,
    pub violations: usize,
    /// Largest observed `d(π(y), π(y′)) · 2^{min(q, s)}`.
    pub worst_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TowerSummary {
    pub system: &'static str,
    pub base: String,
    pub branch_count: usize,
    pub q_max: usize,
    pub tail_remainder: f64,
    pub kac_product: Option<f64>,
    pub fitted_log_theta: Option<f64>,
}

impl TowerModel {
    pub fn system(&self) -> &DynamicalSystem {
        &self.system
    }

    pub fn base(&self) -> (Dyadic, Dyadic) {
        (self.base_left, self.base_right)
    }

    pub fn base_depth(&self) -> usize {
        self.base_word.len()
    }

    pub fn base_measure(&self) -> Dyadic {
        Dyadic::half_pow(self.base_depth() as u32)
    }

    pub fn q_max(&self) -> usize {
        self.q_max
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    /// `m(R > q_max | Λ)`.
    pub fn tail_remainder(&self) -> Dyadic {
        self.tail_remainder
    }

    /// Lebesgue measure of level `Δ_q`, the base subset `{R > q}`, for
    /// `q < q_max`.
    pub fn level_measure(&self, q: usize) -> Option<Dyadic> {
        self.level_measures.get(q).copied()
    }

    pub fn fitted_log_theta(&self) -> Option<f64> {
        self.fitted_log_theta
    }

    /// Number of branches with return time `n`.
    pub fn branch_count_with_return(&self, n: usize) -> usize {
        self.branches.iter().filter(|b| b.return_time == n).count()
    }

    fn check_range(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::Parameter("return time n must be ≥ 1".into()));
        }
        if n > self.q_max {
            return Err(Error::Truncation(format!(
                "n = {n} exceeds q_max = {}; available range is 1..={}",
                self.q_max, self.q_max
            )));
        }
        Ok(())
    }

    fn conditional(&self, m: Dyadic) -> Dyadic {
        if m == Dyadic::ZERO {
            return m;
        }
        Dyadic::new(m.numerator(), m.exponent() - self.base_depth() as u32)
    }

    /// `m(R = n | Λ)`, exactly.
    pub fn return_probability(&self, n: usize) -> Result<Dyadic> {
        self.check_range(n)?;
        let m = self
            .branches
            .iter()
            .filter(|b| b.return_time == n)
            .fold(Dyadic::ZERO, |acc, b| acc.add(b.measure()));
        Ok(self.conditional(m))
    }

    /// `m(R ≥ n | Λ)`, exactly.
    pub fn return_tail_exact(&self, n: usize) -> Result<Dyadic> {
        self.check_range(n)?;
        Ok(self.conditional(self.level_measures[n - 1]))
    }

    pub fn return_tail(&self, n: usize) -> Result<f64> {
        self.return_tail_exact(n).map(|d| d.to_f64())
    }

    /// Least-squares slope of `ln m(R ≥ n | Λ)` over `n = 2 … q_max`,
    /// skipping empty tails.
    fn fit_log_theta(&self) -> Option<f64> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = (2..=self.q_max)
            .filter_map(|n| {
                let t = self.return_tail(n).ok()?;
                (t > 0.0).then(|| (n as f64, t.ln()))
            })
            .unzip();
        (xs.len() >= 2).then(|| stats::linear_fit(&xs, &ys).0)
    }

    fn require_small_tail(&self) -> Result<()> {
        let tail = self.tail_remainder.to_f64();
        if tail >= TAIL_LIMIT {
            return Err(Error::Truncation(format!(
                "truncated mass m(R > {}) = {tail:e} is not below {TAIL_LIMIT:e}; raise q_max",
                self.q_max
            )));
        }
        Ok(())
    }

    /// `𝔼[R | Λ] · m(Λ) = Σ_i R_i m(Λ_i)` from the branch table. Kac's
    /// identity makes it 1 up to `q_max` times the truncated mass.
    pub fn kac_check(&self) -> Result<f64> {
        self.require_small_tail()?;
        let sum = self
            .branches
            .iter()
            .fold(Dyadic::ZERO, |acc, b| acc.add(b.measure().mul_int(b.return_time as u64)));
        Ok(sum.to_f64())
    }

    pub fn summary(&self) -> TowerSummary {
        let k = self.base_depth() as u32;
        TowerSummary {
            system: self.system.name(),
            base: format!("{}..{}", self.base_left.display_with_exp(k), self.base_right.display_with_exp(k)),
            branch_count: self.branches.len(),
            q_max: self.q_max,
            tail_remainder: self.tail_remainder.to_f64(),
            kac_product: self.kac_check().ok(),
            fitted_log_theta: self.fitted_log_theta,
        }
    }

    /// Branch table with exact endpoints `p/2^L`, `L` the cylinder length.
    pub fn write_branch_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["branch_index", "left", "right", "return_time"])?;
        for b in &self.branches {
            let len = b.word.len() as u32;
            w.write_record([
                b.index.to_string(),
                b.left.display_with_exp(len),
                b.right.display_with_exp(len),
                b.return_time.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    fn in_base(&self, x: &SymbolicPoint) -> bool {
        self.base_word.iter().enumerate().all(|(i, &d)| x.digit(i) == d)
    }

    /// Exact first-return time of the base point of `x`.
    pub fn return_time_of(&self, x: &SymbolicPoint) -> Result<usize> {
        if !self.in_base(x) {
            return Err(Error::Precondition("point is not in the tower base".into()));
        }
        let k = self.base_depth();
        // Past the digit prefix the iterates are constant, so a return not
        // seen by then never happens.
        let limit = x.remaining() + 2;
        let mut buf: Vec<u8> = (0..k).map(|i| x.digit(i)).collect();
        for n in 1..=limit {
            buf.push(x.digit(n + k - 1));
            if returns_at(self.map, &buf, &self.base_word, n) {
                return Ok(n);
            }
        }
        Err(Error::Precondition("point never returns to the base".into()))
    }

    fn same_atom(&self, a: &SymbolicPoint, b: &SymbolicPoint) -> Result<bool> {
        let (ra, rb) = (self.return_time_of(a)?, self.return_time_of(b)?);
        if a.level >= ra || b.level >= rb {
            return Err(Error::Precondition("level is not below the return time".into()));
        }
        let k = self.base_depth();
        Ok(a.level == b.level && ra == rb && (0..ra + k).all(|i| a.digit(i) == b.digit(i)))
    }

    /// One step of the tower map `F`.
    pub fn step(&self, z: &mut SymbolicPoint) -> Result<()> {
        let r = self.return_time_of(z)?;
        if z.level >= r {
            return Err(Error::Precondition("level is not below the return time".into()));
        }
        if z.level + 1 < r {
            z.level += 1;
        } else {
            z.advance(self.map, r);
            z.level = 0;
        }
        Ok(())
    }

    /// Separation time of two points in the same atom `Δ_{q,j}`.
    pub fn separation_time(&self, z: &SymbolicPoint, z_prime: &SymbolicPoint, horizon: usize) -> Result<Separation> {
        if horizon < 1 {
            return Err(Error::Parameter("horizon must be ≥ 1".into()));
        }
        if !self.same_atom(z, z_prime)? {
            return Err(Error::Precondition("points lie in different atoms of the tower partition".into()));
        }
        let (mut a, mut b) = (z.clone(), z_prime.clone());
        for i in 1..=horizon {
            self.step(&mut a)?;
            self.step(&mut b)?;
            if !self.same_atom(&a, &b)? {
                return Ok(Separation::Exact(i));
            }
        }
        Ok(Separation::AtLeast(horizon))
    }

    /// Exact projection `π(x, q) = f^q(x)` as `numerator / 2^len`.
    fn projection(&self, z: &SymbolicPoint) -> (BigUint, usize) {
        let mut p = z.clone();
        p.advance(self.map, z.level);
        p.exact_value()
    }

    /// Draws `pairs` base pairs `ỹ, ỹ′` in a common atom, a lag
    /// `q < s(ỹ, ỹ′)`, and checks `d(π(Fᵠỹ), π(Fᵠỹ′)) ≤ 2^{-min(q, s(Fᵠỹ, Fᵠỹ′))}`
    /// in exact arithmetic.
    pub fn backward_contraction_check(&self, pairs: usize, seed: u64) -> Result<ContractionCheck> {
        const PREFIX: usize = 128;
        const HORIZON: usize = 256;
        let k = self.base_depth();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut done = 0;
        let mut violations = 0;
        let mut worst = 0.0f64;
        let mut attempts = 0usize;
        while done < pairs {
            attempts += 1;
            if attempts > 100 * pairs + 1000 {
                return Err(Error::Sampling { discarded: attempts - done, total: attempts });
            }
            let mut d: Vec<u8> = self.base_word.clone();
            d.extend((0..PREFIX).map(|_| rng.random_range(0..2u8)));
            let shared = rng.random_range(k + 1..k + 64);
            let mut d2 = d[..shared].to_vec();
            d2.push(1 - d[shared]);
            d2.extend((shared + 1..d.len()).map(|_| rng.random_range(0..2u8)));
            let y0 = SymbolicPoint::new(d, rng.random_range(0..2u8), 0)?;
            let y1 = SymbolicPoint::new(d2, rng.random_range(0..2u8), 0)?;
            if !self.same_atom(&y0, &y1)? {
                continue;
            }
            let s = match self.separation_time(&y0, &y1, HORIZON)? {
                Separation::Exact(s) => s,
                Separation::AtLeast(_) => continue,
            };
            let q = rng.random_range(0..s);
            let (mut a, mut b) = (y0, y1);
            for _ in 0..q {
                self.step(&mut a)?;
                self.step(&mut b)?;
            }
            let s_ab = match self.separation_time(&a, &b, HORIZON)? {
                Separation::Exact(s) => s,
                Separation::AtLeast(h) => h,
            };
            let m = q.min(s_ab);
            let (na, la) = self.projection(&a);
            let (nb, lb) = self.projection(&b);
            let l = la.max(lb);
            let (na, nb) = (na << (l - la), nb << (l - lb));
            let diff = if na >= nb { na - nb } else { nb - na };
            let scaled = diff << m;
            let bound = BigUint::from(1u32) << l;
            if scaled > bound {
                violations += 1;
            }
            worst = worst.max(ratio(&scaled, l));
            done += 1;
        }
        Ok(ContractionCheck { pairs, violations, worst_ratio: worst })
    }

    /// Ulam matrix of the tower map on `(level, bin)` cells, each base bin
    /// being `1/bins_per_level` of `Λ`. Mass truncated above `q_max` is sent
    /// back to the base uniformly.
    pub fn tower_ulam(&self, bins_per_level: usize) -> Result<UlamOperator> {
        if bins_per_level == 0 {
            return Err(Error::Parameter("bins_per_level must be ≥ 1".into()));
        }
        self.require_small_tail()?;
        let grid = Grid::new(self, bins_per_level);
        let b = bins_per_level;
        let index: BTreeMap<(usize, usize), usize> =
            grid.cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let rows: Vec<Vec<(usize, f64)>> = grid
            .cells
            .par_iter()
            .map(|&(q, bin)| {
                let mut row = Vec::new();
                let mut up = 0.0;
                let mut truncated = 0.0;
                for piece in &grid.bins[bin] {
                    let c = &grid.cylinders[piece.cyl];
                    match c.return_time {
                        Some(r) if r <= q => {}
                        Some(r) if r == q + 1 => {
                            let (t0, t1) = c.relative(piece.lo, piece.hi);
                            let (t0, t1) = if c.increasing { (t0, t1) } else { (1.0 - t1, 1.0 - t0) };
                            spread(t0, t1, piece.hi - piece.lo, b, |j, m| row.push((index[&(0, j)], m)));
                        }
                        None if q + 1 == self.q_max => truncated += piece.hi - piece.lo,
                        _ => up += piece.hi - piece.lo,
                    }
                }
                if up > 0.0 {
                    row.push((index[&(q + 1, bin)], up));
                }
                if truncated > 0.0 {
                    row.extend((0..b).map(|j| (index[&(0, j)], truncated / b as f64)));
                }
                row
            })
            .collect();
        Ok(UlamOperator::from_parts(
            self.system,
            StochasticMatrix::from_rows(rows)?,
            Layout::Tower { cells: grid.cells, bins_per_level },
        ))
    }

    /// Stationary mass per tower level.
    pub fn level_masses(&self, op: &UlamOperator, stationary: &Stationary) -> Result<Vec<f64>> {
        let cells = tower_cells(op)?;
        let levels = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
        let mut out = vec![0.0; levels];
        for (&(q, _), m) in cells.iter().zip(&stationary.masses) {
            out[q] += m;
        }
        Ok(out)
    }

    /// Pushes a tower stationary vector down to `bins` equal bins of
    /// `[0, 1)` through `π(x, q) = f^q(x)`.
    pub fn project_to_interval(&self, op: &UlamOperator, stationary: &Stationary, bins: usize) -> Result<Vec<f64>> {
        if bins == 0 {
            return Err(Error::Parameter("bins must be ≥ 1".into()));
        }
        let cells = tower_cells(op)?;
        let Layout::Tower { bins_per_level, .. } = op.layout() else { unreachable!() };
        let grid = Grid::new(self, *bins_per_level);
        let mut out = vec![0.0; bins];
        for (&(q, bin), &mass) in cells.iter().zip(&stationary.masses) {
            let live: Vec<&Piece> = grid.bins[bin]
                .iter()
                .filter(|p| grid.cylinders[p.cyl].return_time.is_none_or(|r| r > q))
                .collect();
            let total: f64 = live.iter().map(|p| p.hi - p.lo).sum();
            for p in live {
                let c = &grid.cylinders[p.cyl];
                let (img, increasing) = cylinder_image(self.map, &c.word, q);
                let lo = word_value(&img).to_f64();
                let len = 2f64.powi(-(img.len() as i32));
                let (t0, t1) = c.relative(p.lo, p.hi);
                let (t0, t1) = if increasing { (t0, t1) } else { (1.0 - t1, 1.0 - t0) };
                let share = mass * (p.hi - p.lo) / total;
                spread(lo + t0 * len, lo + t1 * len, share, bins, |j, m| out[j] += m);
            }
        }
        Ok(out)
    }
}

fn ratio(scaled: &BigUint, l: usize) -> f64 {
    // Both sides shifted so the quotient fits an f64.
    let shift = l.saturating_sub(60);
    let num = (scaled >> shift).to_string().parse::<f64>().unwrap_or(f64::INFINITY);
    num / 2f64.powi((l - shift) as i32)
}

fn tower_cells(op: &UlamOperator) -> Result<&[(usize, usize)]> {
    match op.layout() {
        Layout::Tower { cells, .. } => Ok(cells),
        Layout::Interval { .. } => Err(Error::Parameter("operator was not built on a tower".into())),
    }
}

/// Distributes `mass`, spread uniformly over `[a, b] ⊂ [0, 1]`, onto `n`
/// equal bins.
fn spread(a: f64, b: f64, mass: f64, n: usize, mut put: impl FnMut(usize, f64)) {
    if mass <= 0.0 {
        return;
    }
    let nf = n as f64;
    if b <= a {
        put(((a * nf) as usize).min(n - 1), mass);
        return;
    }
    let first = ((a * nf).floor() as usize).min(n - 1);
    let last = ((b * nf).ceil() as usize).clamp(first + 1, n);
    for j in first..last {
        let overlap = b.min((j + 1) as f64 / nf) - a.max(j as f64 / nf);
        if overlap > 0.0 {
            put(j, mass * overlap / (b - a));
        }
    }
}

struct Cylinder {
    left: f64,
    len: f64,
    word: Vec<u8>,
    /// `None` for cylinders that survive past `q_max`.
    return_time: Option<usize>,
    increasing: bool,
}

impl Cylinder {
    /// Positions in `[0, 1]` of absolute points inside the cylinder.
    fn relative(&self, lo: f64, hi: f64) -> (f64, f64) {
        ((lo - self.left) / self.len, (hi - self.left) / self.len)
    }
}

struct Piece {
    cyl: usize,
    lo: f64,
    hi: f64,
}

/// Geometry of tower cells: base bins and the cylinder pieces inside them.
struct Grid {
    cylinders: Vec<Cylinder>,
    bins: Vec<Vec<Piece>>,
    cells: Vec<(usize, usize)>,
}

impl Grid {
    fn new(tower: &TowerModel, b: usize) -> Self {
        let mut cylinders: Vec<Cylinder> = tower
            .branches
            .iter()
            .map(|br| Cylinder {
                left: br.left.to_f64(),
                len: br.measure().to_f64(),
                word: br.word.clone(),
                return_time: Some(br.return_time),
                increasing: br.increasing,
            })
            .collect();
        cylinders.extend(tower.survivors.iter().map(|w| Cylinder {
            left: word_value(w).to_f64(),
            len: 2f64.powi(-(w.len() as i32)),
            word: w.clone(),
            return_time: None,
            increasing: true,
        }));
        let base_lo = tower.base_left.to_f64();
        let width = tower.base_measure().to_f64();
        let edge = |j: usize| base_lo + width * j as f64 / b as f64;
        let mut bins: Vec<Vec<Piece>> = (0..b).map(|_| Vec::new()).collect();
        for (i, c) in cylinders.iter().enumerate() {
            let t0 = (c.left - base_lo) / width * b as f64;
            let t1 = (c.left + c.len - base_lo) / width * b as f64;
            let first = (t0.floor() as usize).min(b - 1);
            let last = (t1.ceil() as usize).clamp(first + 1, b);
            for (j, bin) in bins.iter_mut().enumerate().take(last).skip(first) {
                let lo = c.left.max(edge(j));
                let hi = (c.left + c.len).min(edge(j + 1));
                if hi > lo {
                    bin.push(Piece { cyl: i, lo, hi });
                }
            }
        }
        let mut cells = Vec::new();
        for q in 0..tower.q_max {
            for (j, bin) in bins.iter().enumerate() {
                if bin.iter().any(|p| cylinders[p.cyl].return_time.is_none_or(|r| r > q)) {
                    cells.push((q, j));
                }
            }
        }
        Grid { cylinders, bins, cells }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half(q_max: usize) -> TowerModel {
        let (l, r) = parse_base("0/1..1/2").unwrap();
        build_first_return_tower(&DynamicalSystem::doubling(), l, r, q_max).unwrap()
    }

    #[test]
    fn dyadic_parsing_and_display() {
        assert_eq!("3/8".parse::<Dyadic>().unwrap(), Dyadic::new(3, 3));
        assert_eq!("6/2^4".parse::<Dyadic>().unwrap(), Dyadic::new(3, 3));
        assert_eq!("1".parse::<Dyadic>().unwrap(), Dyadic::ONE);
        assert!(matches!("1/3".parse::<Dyadic>(), Err(Error::Capability(_))));
        assert!(matches!("x".parse::<Dyadic>(), Err(Error::Parameter(_))));
        assert_eq!(Dyadic::new(1, 2).display_with_exp(4), "4/2^4");
        assert!(Dyadic::new(1, 2) < Dyadic::new(3, 3));
    }

    #[test]
    fn geometric_return_law() {
        let t = half(20);
        for n in 1..=20 {
            assert_eq!(t.return_probability(n).unwrap(), Dyadic::half_pow(n as u32));
            assert_eq!(t.branch_count_with_return(n), 1);
        }
        assert_eq!(t.return_tail_exact(5).unwrap(), Dyadic::new(1, 4));
        assert_eq!(t.return_tail(1).unwrap(), 1.0);
        assert!((t.fitted_log_theta().unwrap() + std::f64::consts::LN_2).abs() < 1e-9);
        assert!(matches!(t.return_tail(21), Err(Error::Truncation(_))));
        assert_eq!(t.tail_remainder(), Dyadic::half_pow(20));
    }

    #[test]
    fn whole_interval_base() {
        let t = build_first_return_tower(&DynamicalSystem::doubling(), Dyadic::ZERO, Dyadic::ONE, 5).unwrap();
        assert!(t.branches().iter().all(|b| b.return_time == 1));
        assert_eq!(t.return_probability(1).unwrap(), Dyadic::ONE);
        assert_eq!(t.kac_check().unwrap(), 1.0);
        assert_eq!(t.fitted_log_theta(), None);
    }

    #[test]
    fn kac_product_on_half() {
        let t = half(30);
        let k = t.kac_check().unwrap();
        assert!((k - 1.0).abs() <= 30.0 * t.tail_remainder().to_f64());
        assert!(matches!(half(10).kac_check(), Err(Error::Truncation(_))));
    }

    #[test]
    fn build_errors() {
        let sys = DynamicalSystem::doubling();
        let (l, r) = parse_base("0/1..1/2").unwrap();
        assert!(matches!(build_first_return_tower(&sys, l, r, 0), Err(Error::Parameter(_))));
        let logistic = DynamicalSystem::logistic(4.0).unwrap();
        assert!(matches!(build_first_return_tower(&logistic, l, r, 5), Err(Error::Capability(_))));
        let (l, r) = parse_base("1/4..3/4").unwrap();
        assert!(matches!(build_first_return_tower(&sys, l, r, 5), Err(Error::Capability(_))));
    }

    #[test]
    fn tent_tower_is_consistent() {
        let (l, r) = parse_base("1/4..1/2").unwrap();
        let t = build_first_return_tower(&DynamicalSystem::tent(), l, r, 12).unwrap();
        let total = t
            .branches()
            .iter()
            .fold(Dyadic::ZERO, |a, b| a.add(b.measure()))
            .add(t.tail_remainder().mul(t.base_measure()));
        assert_eq!(total, t.base_measure());
        for n in 1..12 {
            assert!(t.level_measure(n).unwrap() <= t.level_measure(n - 1).unwrap());
        }
        let (l, r) = parse_base("0..1/2").unwrap();
        let t = build_first_return_tower(&DynamicalSystem::tent(), l, r, 30).unwrap();
        let k = t.kac_check().unwrap();
        assert!((k - 1.0).abs() <= 30.0 * t.tail_remainder().to_f64(), "kac {k}");
    }

    #[test]
    fn separation_examples() {
        let t = half(20);
        let z = SymbolicPoint::new(vec![0], 0, 0).unwrap();
        assert_eq!(t.separation_time(&z, &z, 50).unwrap(), Separation::AtLeast(50));
        let z2 = SymbolicPoint::new(vec![0, 0, 1], 0, 0).unwrap();
        assert_eq!(t.separation_time(&z, &z2, 50).unwrap(), Separation::Exact(1));
        let far = SymbolicPoint::new(vec![0, 1, 0], 0, 0).unwrap();
        assert!(matches!(t.separation_time(&z, &far, 5), Err(Error::Precondition(_))));
    }

    #[test]
    fn contraction_has_no_violations() {
        let c = half(30).backward_contraction_check(300, 1).unwrap();
        assert_eq!(c.violations, 0);
        assert!(c.worst_ratio <= 1.0);
    }

    #[test]
    fn tower_ulam_level_masses() {
        let t = half(30);
        let op = t.tower_ulam(1).unwrap();
        assert!(op.matrix().row_sums().iter().all(|s| (s - 1.0).abs() < 1e-12));
        let st = op.stationary_density().unwrap();
        let levels = t.level_masses(&op, &st).unwrap();
        for (q, m) in levels.iter().enumerate() {
            assert!((m - 0.5f64.powi(q as i32 + 1)).abs() < 1e-9, "level {q}: {m}");
        }
        let gap = op.spectral_gap(&st).unwrap();
        // Every subdominant eigenvalue of this renewal chain has modulus 1/2.
        assert!((gap.lambda2 - 0.5).abs() < 1e-3, "{gap:?}");
    }

    #[test]
    fn projection_is_uniform() {
        let t = half(30);
        let op = t.tower_ulam(8).unwrap();
        let st = op.stationary_density().unwrap();
        let dens = t.project_to_interval(&op, &st, 8).unwrap();
        let l1: f64 = dens.iter().map(|m| (m - 1.0 / 8.0).abs()).sum();
        assert!(l1 < 1.0 / 8.0, "{dens:?}");
    }

    #[test]
    fn branch_csv_has_exact_endpoints() {
        let mut buf = Vec::new();
        half(3).write_branch_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "branch_index,left,right,return_time\n0,0/2^2,1/2^2,1\n1,2/2^3,3/2^3,2\n2,6/2^4,7/2^4,3\n"
        );
    }
}
