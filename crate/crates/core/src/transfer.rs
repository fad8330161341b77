//! Ulam discretization of the transfer operator of a one-dimensional map.
//!
//! Row `i` of the matrix holds `m(B_i ∩ f⁻¹B_j) / m(B_i)` for equal-width
//! bins `B_i`, computed from exact preimages of bin endpoints under each
//! monotone branch. The left fixed vector is the discrete invariant density
//! and the modulus of the second eigenvalue is the contraction rate on
//! densities of mass zero.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::maps::DynamicalSystem;
use crate::observables::SiteFunction;

/// Iteration cap shared by both eigen-iterations.
pub const ITERATION_CAP: usize = 100_000;
/// Residual at which the eigen-iterations stop.
pub const RESIDUAL_TOLERANCE: f64 = 1e-12;

/// Row-stochastic matrix in compressed row storage.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl StochasticMatrix {
    /// Assembles from per-row `(column, value)` lists. Duplicate columns
    /// are summed and each row is normalized to unit mass.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let dim = rows.len();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            let start = cols.len();
            for (c, v) in row {
                if c >= dim {
                    return Err(Error::Bounds(format!("column {c} out of range in row {i}")));
                }
                if cols.len() > start && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else if v != 0.0 {
                    cols.push(c);
                    vals.push(v);
                }
            }
            let total: f64 = vals[start..].iter().sum();
            if !(total > 0.0) {
                return Err(Error::Parameter(format!("row {i} carries no mass")));
            }
            for v in &mut vals[start..] {
                *v /= total;
            }
            row_ptr.push(cols.len());
        }
        Ok(StochasticMatrix { dim, row_ptr, cols, vals })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.dim]; self.dim];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        out
    }

    /// `(row, col, value)` for every stored entry, row-major.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.dim).flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v))).collect()
    }

    /// `out = v · P` (push a measure forward).
    pub fn left_mul(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (j, p) in self.row(i) {
                out[j] += vi * p;
            }
        }
    }

    /// `out = P · g` (pull a function back).
    pub fn right_mul(&self, g: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).map(|(j, p)| p * g[j]).sum();
        }
    }

    /// Row sums of `P^k`, computed as `P^k · 1`.
    pub fn power_row_sums(&self, k: usize) -> Vec<f64> {
        let mut g = vec![1.0; self.dim];
        let mut tmp = vec![0.0; self.dim];
        for _ in 0..k {
            self.right_mul(&g, &mut tmp);
            std::mem::swap(&mut g, &mut tmp);
        }
        g
    }
}

/// Discrete invariant probability vector with its convergence record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stationary {
    pub masses: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Second eigenvalue data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpectralGap {
    pub lambda2: f64,
    pub gap: f64,
    pub iterations: usize,
}

/// What the states of an Ulam matrix stand for.
#[derive(Clone, Debug, PartialEq)]
pub enum Layout {
    /// Equal-width bins of `[0, 1]`.
    Interval { bins: usize },
    /// `(level, bin)` cells of a truncated tower; bins subdivide the base.
    Tower { cells: Vec<(usize, usize)>, bins_per_level: usize },
}

#[derive(Clone, Debug)]
pub struct UlamOperator {
    pub system: DynamicalSystem,
    matrix: StochasticMatrix,
    layout: Layout,
}

impl UlamOperator {
    /// Exact-preimage Ulam matrix on `bins` equal-width bins.
    pub fn build(system: &DynamicalSystem, bins: usize) -> Result<Self> {
        let branches = system.monotone_branches().ok_or_else(|| {
            Error::Capability(format!(
                "Ulam assembly needs a piecewise monotone interval map; {} is {}-dimensional",
                system.name(),
                system.dim()
            ))
        })?;
        if bins == 0 {
            return Err(Error::Parameter("N must be ≥ 1".into()));
        }
        let n = bins as f64;
        let rows: Vec<Vec<(usize, f64)>> = (0..bins)
            .into_par_iter()
            .map(|i| {
                let (lo, hi) = (i as f64 / n, (i + 1) as f64 / n);
                let mut row = Vec::new();
                for (b, br) in branches.iter().enumerate() {
                    let (a, c) = (lo.max(br.lo), hi.min(br.hi));
                    if c <= a {
                        continue;
                    }
                    let (fa, fc) = (system.branch_image(b, a), system.branch_image(b, c));
                    let (ylo, yhi) = (fa.min(fc).max(0.0), fa.max(fc).min(1.0));
                    let first = ((ylo * n).floor() as usize).min(bins - 1);
                    let last = ((yhi * n).ceil() as usize).clamp(first + 1, bins);
                    for j in first..last {
                        let u = ylo.max(j as f64 / n);
                        let v = yhi.min((j + 1) as f64 / n);
                        if v <= u {
                            continue;
                        }
                        let (pu, pv) = (system.branch_preimage(b, u), system.branch_preimage(b, v));
                        let mass = (pv - pu).abs().min(c - a);
                        if mass > 0.0 {
                            row.push((j, mass * n));
                        }
                    }
                }
                row
            })
            .collect();
        Ok(UlamOperator {
            system: *system,
            matrix: StochasticMatrix::from_rows(rows)?,
            layout: Layout::Interval { bins },
        })
    }

    pub(crate) fn from_parts(system: DynamicalSystem, matrix: StochasticMatrix, layout: Layout) -> Self {
        UlamOperator { system, matrix, layout }
    }

    pub fn matrix(&self) -> &StochasticMatrix {
        &self.matrix
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim
    }

    /// Left fixed probability vector by power iteration, to an L1 residual
    /// `‖πP − π‖₁ ≤ 1e-12`.
    pub fn stationary_density(&self) -> Result<Stationary> {
        let dim = self.dim();
        let mut v = vec![1.0 / dim as f64; dim];
        let mut w = vec![0.0; dim];
        let mut residual = f64::INFINITY;
        for it in 1..=ITERATION_CAP {
            self.matrix.left_mul(&v, &mut w);
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= total);
            residual = v.iter().zip(&w).map(|(a, b)| (a - b).abs()).sum();
            std::mem::swap(&mut v, &mut w);
            if residual <= RESIDUAL_TOLERANCE {
                return Ok(Stationary { masses: v, iterations: it, residual });
            }
        }
        Err(Error::Convergence { iterations: ITERATION_CAP, residual })
    }

    /// Modulus of the second eigenvalue, by power iteration on mass-zero
    /// vectors (the complement of the fixed vector). Each step fits the newest
    /// iterate against the previous one, and if that fails against the two
    /// previous ones, so a complex conjugate pair is resolved by the roots of
    /// the fitted two-term recurrence.
    pub fn spectral_gap(&self, stationary: &Stationary) -> Result<SpectralGap> {
        let dim = self.dim();
        let done = |lambda2: f64, iterations| {
            let lambda2 = lambda2.clamp(0.0, 1.0);
            Ok(SpectralGap { lambda2, gap: 1.0 - lambda2, iterations })
        };
        if dim == 1 {
            return done(0.0, 0);
        }
        let pi = &stationary.masses;
        let project = |v: &mut [f64]| {
            let s: f64 = v.iter().sum();
            v.iter_mut().zip(pi).for_each(|(x, p)| *x -= s * p);
        };
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

        // Deterministic, irregular start vector.
        let mut x0: Vec<f64> = (0..dim)
            .map(|i| ((i as f64 + 1.0) * 0.754_877_666_246_692_7).fract() - 0.5)
            .collect();
        project(&mut x0);
        let n0 = norm(&x0);
        if n0 == 0.0 {
            return done(0.0, 0);
        }
        x0.iter_mut().for_each(|x| *x /= n0);
        let mut x1 = vec![0.0; dim];
        self.matrix.left_mul(&x0, &mut x1);
        project(&mut x1);
        let mut x2 = vec![0.0; dim];
        let mut residual = f64::INFINITY;
        // Below this, iterates are rounding noise: |λ2| is under resolution.
        let floor = 1e-13;
        let mut log_growth = 0.0;
        let mut log_growth_half = 0.0;
        for it in 1..=ITERATION_CAP {
            let n1 = norm(&x1);
            if n1 <= floor {
                return done(n1, it);
            }
            log_growth += n1.ln();
            if it == ITERATION_CAP / 2 {
                log_growth_half = log_growth;
            }
            self.matrix.left_mul(&x1, &mut x2);
            project(&mut x2);
            let n2 = norm(&x2);
            if n2 <= floor * n1 {
                return done(n2 / n1, it);
            }

            // Real dominant eigenvalue: x1 ≈ λ x0.
            let lambda = dot(&x0, &x1);
            let r1 = x1
                .iter()
                .zip(&x0)
                .map(|(a, b)| (a - lambda * b).powi(2))
                .sum::<f64>()
                .sqrt()
                / n1;
            if r1 <= RESIDUAL_TOLERANCE {
                return done(lambda.abs(), it);
            }

            // Complex pair: x2 ≈ α x1 + β x0.
            let (g11, g10, g00) = (dot(&x1, &x1), dot(&x1, &x0), dot(&x0, &x0));
            let det = g11 * g00 - g10 * g10;
            if det > 1e-14 * g11 * g00 {
                let (b1, b0) = (dot(&x1, &x2), dot(&x0, &x2));
                let alpha = (b1 * g00 - b0 * g10) / det;
                let beta = (g11 * b0 - g10 * b1) / det;
                let r2 = x2
                    .iter()
                    .zip(x1.iter().zip(&x0))
                    .map(|(c, (a, b))| (c - alpha * a - beta * b).powi(2))
                    .sum::<f64>()
                    .sqrt()
                    / n2;
                if r2 <= RESIDUAL_TOLERANCE {
                    let disc = alpha * alpha + 4.0 * beta;
                    let modulus = if disc < 0.0 {
                        (-beta).sqrt()
                    } else {
                        let s = disc.sqrt();
                        (0.5 * (alpha + s)).abs().max((0.5 * (alpha - s)).abs())
                    };
                    return done(modulus, it);
                }
                residual = r1.min(r2);
            } else {
                residual = r1;
            }

            // Advance: x0 <- x1/|x1|, x1 <- x2/|x1|.
            std::mem::swap(&mut x0, &mut x1);
            std::mem::swap(&mut x1, &mut x2);
            x0.iter_mut().for_each(|x| *x /= n1);
            x1.iter_mut().for_each(|x| *x /= n1);
        }
        // Several eigenvalues share the top modulus, so neither fit settles;
        // the mean growth rate over the second half still converges to it.
        let rate = ((log_growth - log_growth_half) / (ITERATION_CAP - ITERATION_CAP / 2) as f64).exp();
        if rate.is_finite() {
            return done(rate, ITERATION_CAP);
        }
        Err(Error::Convergence { iterations: ITERATION_CAP, residual })
    }

    /// `C(k) = ⟨ψ-density · P^k, bin-averaged φ⟩ − mean(φ)·mean(ψ)` under the
    /// stationary vector, for `k = 0 … max_lag`. Interval layouts only.
    pub fn operator_correlation(
        &self,
        stationary: &Stationary,
        phi: &SiteFunction,
        psi: &SiteFunction,
        max_lag: usize,
    ) -> Result<Vec<f64>> {
        let bins = match self.layout {
            Layout::Interval { bins } => bins,
            Layout::Tower { .. } => {
                return Err(Error::Capability("operator correlations need an interval layout".into()))
            }
        };
        let n = bins as f64;
        let avg = |f: &SiteFunction| -> Vec<f64> {
            (0..bins).map(|i| f.bin_average(i as f64 / n, (i + 1) as f64 / n)).collect()
        };
        let (phi_bar, psi_bar) = (avg(phi), avg(psi));
        let pi = &stationary.masses;
        let mean = |f: &[f64]| f.iter().zip(pi).map(|(a, b)| a * b).sum::<f64>();
        let (m_phi, m_psi) = (mean(&phi_bar), mean(&psi_bar));
        // Centering ψ first keeps C(k) exactly zero for constant functions.
        let mut nu: Vec<f64> = psi_bar.iter().zip(pi).map(|(s, p)| (s - m_psi) * p).collect();
        let centered_phi: Vec<f64> = phi_bar.iter().map(|f| f - m_phi).collect();
        let mut next = vec![0.0; bins];
        let mut out = Vec::with_capacity(max_lag + 1);
        for k in 0..=max_lag {
            if k > 0 {
                self.matrix.left_mul(&nu, &mut next);
                std::mem::swap(&mut nu, &mut next);
            }
            out.push(nu.iter().zip(&centered_phi).map(|(a, b)| a * b).sum());
        }
        Ok(out)
    }

    /// L1 distance between the stationary bin masses and the binned
    /// closed-form invariant density, where the system has one.
    pub fn stationary_l1_error(&self, stationary: &Stationary) -> Option<f64> {
        let cdf = self.system.invariant_cdf()?;
        let bins = match self.layout {
            Layout::Interval { bins } => bins,
            Layout::Tower { .. } => return None,
        };
        let n = bins as f64;
        Some(
            stationary
                .masses
                .iter()
                .enumerate()
                .map(|(i, m)| (m - (cdf((i + 1) as f64 / n) - cdf(i as f64 / n))).abs())
                .sum(),
        )
    }
}

/// JSON summary of a spectrum computation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumSummary {
    #[serde(rename = "N")]
    pub n: usize,
    pub lambda2: f64,
    pub gap: f64,
    pub stationary_l1_error: Option<f64>,
}

/// L1 distance between two piecewise-constant densities on nested uniform
/// grids, `coarse` with N bins and `fine` with a multiple of N.
pub fn refinement_distance(coarse: &[f64], fine: &[f64]) -> f64 {
    let ratio = fine.len() / coarse.len();
    fine.iter()
        .enumerate()
        .map(|(i, m)| (coarse[i / ratio] / ratio as f64 - m).abs())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn doubling_two_bins_is_rank_one() {
        let op = UlamOperator::build(&DynamicalSystem::doubling(), 2).unwrap();
        assert_eq!(op.matrix().to_dense(), vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let st = op.stationary_density().unwrap();
        assert_eq!(st.masses, vec![0.5, 0.5]);
        assert_eq!(op.spectral_gap(&st).unwrap().lambda2, 0.0);
    }

    #[test]
    fn doubling_four_bins() {
        let op = UlamOperator::build(&DynamicalSystem::doubling(), 4).unwrap();
        let d = op.matrix().to_dense();
        assert_eq!(d[0], vec![0.5, 0.5, 0.0, 0.0]);
        assert_eq!(d[1], vec![0.0, 0.0, 0.5, 0.5]);
        assert_eq!(d[2], vec![0.5, 0.5, 0.0, 0.0]);
        assert_eq!(d[3], vec![0.0, 0.0, 0.5, 0.5]);
        let st = op.stationary_density().unwrap();
        let g = op.spectral_gap(&st).unwrap();
        assert!(g.lambda2.abs() <= 1e-12);
        assert_eq!(g.gap, 1.0 - g.lambda2);
    }

    #[test]
    fn rows_sum_to_one() {
        for sys in [DynamicalSystem::doubling(), DynamicalSystem::tent(), DynamicalSystem::logistic(4.0).unwrap(), DynamicalSystem::logistic(3.8).unwrap()] {
            for n in [1, 3, 7, 64, 250] {
                let op = UlamOperator::build(&sys, n).unwrap();
                for s in op.matrix().row_sums() {
                    assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn tent_is_uniform() {
        let op = UlamOperator::build(&DynamicalSystem::tent(), 64).unwrap();
        let st = op.stationary_density().unwrap();
        for m in &st.masses {
            assert_abs_diff_eq!(*m, 1.0 / 64.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn build_errors() {
        let h = DynamicalSystem::henon(1.4, 0.3).unwrap();
        assert!(matches!(UlamOperator::build(&h, 10), Err(Error::Capability(_))));
        assert!(matches!(UlamOperator::build(&DynamicalSystem::doubling(), 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn constant_function_has_no_correlation() {
        let op = UlamOperator::build(&DynamicalSystem::logistic(4.0).unwrap(), 200).unwrap();
        let st = op.stationary_density().unwrap();
        let c = op
            .operator_correlation(&st, &SiteFunction::constant(2.0), &SiteFunction::cos2pi(), 5)
            .unwrap();
        assert!(c.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn lag_zero_is_binned_variance() {
        let op = UlamOperator::build(&DynamicalSystem::logistic(4.0).unwrap(), 300).unwrap();
        let st = op.stationary_density().unwrap();
        let f = SiteFunction::identity();
        let c = op.operator_correlation(&st, &f, &f, 0).unwrap();
        let bar: Vec<f64> = (0..300).map(|i| f.bin_average(i as f64 / 300.0, (i + 1) as f64 / 300.0)).collect();
        let m: f64 = bar.iter().zip(&st.masses).map(|(a, p)| a * p).sum();
        let v: f64 = bar.iter().zip(&st.masses).map(|(a, p)| p * (a - m).powi(2)).sum();
        assert_abs_diff_eq!(c[0], v, epsilon = 1e-15);
    }

    #[test]
    fn complex_pair_modulus() {
        // A rotation among three states mixed with a uniform jump has
        // eigenvalues 1 and (1-t)·e^{±2πi/3}.
        let t = 0.3;
        let rows = (0..3)
            .map(|i| {
                let mut r: Vec<(usize, f64)> = (0..3).map(|j| (j, t / 3.0)).collect();
                r.push(((i + 1) % 3, 1.0 - t));
                r
            })
            .collect();
        let m = StochasticMatrix::from_rows(rows).unwrap();
        let op = UlamOperator::from_parts(DynamicalSystem::doubling(), m, Layout::Interval { bins: 3 });
        let st = op.stationary_density().unwrap();
        let g = op.spectral_gap(&st).unwrap();
        assert_abs_diff_eq!(g.lambda2, 1.0 - t, epsilon = 1e-10);
    }

    #[test]
    fn real_second_eigenvalue() {
        // Two-state chain with flip probabilities p, q: λ2 = 1 - p - q.
        let (p, q) = (0.2, 0.1);
        let rows = vec![vec![(0, 1.0 - p), (1, p)], vec![(0, q), (1, 1.0 - q)]];
        let m = StochasticMatrix::from_rows(rows).unwrap();
        let op = UlamOperator::from_parts(DynamicalSystem::doubling(), m, Layout::Interval { bins: 2 });
        let st = op.stationary_density().unwrap();
        assert_abs_diff_eq!(st.masses[0], q / (p + q), epsilon = 1e-12);
        let g = op.spectral_gap(&st).unwrap();
        assert_abs_diff_eq!(g.lambda2, 1.0 - p - q, epsilon = 1e-12);
    }
}
