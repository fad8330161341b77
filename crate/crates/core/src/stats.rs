//! Order-fixed summary statistics over sample vectors.

/// Neumaier-compensated sum, accumulated in slice order.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean computed about the first sample, so that a constant sample returns
/// its value exactly.
pub(crate) fn mean(values: &[f64]) -> f64 {
    let Some(&shift) = values.first() else {
        return f64::NAN;
    };
    shift + compensated_sum(values.iter().map(|v| v - shift)) / values.len() as f64
}

pub(crate) struct Moments {
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Fourth central moment (divided by N).
    pub m4: f64,
}

/// Two-pass central moments.
pub(crate) fn moments(values: &[f64]) -> Moments {
    let n = values.len() as f64;
    let m = mean(values);
    let ss = compensated_sum(values.iter().map(|v| (v - m) * (v - m)));
    let q = compensated_sum(values.iter().map(|v| (v - m).powi(4)));
    Moments {
        mean: m,
        variance: if values.len() > 1 { ss / (n - 1.0) } else { 0.0 },
        m4: q / n,
    }
}

/// Standard error of the sample mean.
pub(crate) fn mean_standard_error(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    (moments(values).variance / values.len() as f64).sqrt()
}

/// Delta-method standard error of the unbiased sample variance:
/// `Var(s²) ≈ (μ₄ − σ⁴ (N−3)/(N−1)) / N`.
pub(crate) fn variance_standard_error(m: &Moments, n: usize) -> f64 {
    if n < 4 {
        return 0.0;
    }
    let nf = n as f64;
    let v = (m.m4 - m.variance * m.variance * (nf - 3.0) / (nf - 1.0)) / nf;
    v.max(0.0).sqrt()
}

/// Ordinary least-squares slope and coefficient of determination.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples_are_exact() {
        let v = vec![0.1; 1001];
        assert_eq!(mean(&v), 0.1);
        let m = moments(&v);
        assert_eq!(m.variance, 0.0);
        assert_eq!(variance_standard_error(&m, v.len()), 0.0);
    }

    #[test]
    fn compensation_recovers_small_terms() {
        let mut v = vec![1e16, 1.0, -1e16];
        v.extend(std::iter::repeat_n(1.0, 10));
        assert_eq!(compensated_sum(v), 11.0);
    }

    #[test]
    fn fit_exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let (s, r2) = linear_fit(&xs, &ys);
        assert!((s + 0.5).abs() < 1e-15);
        assert!((r2 - 1.0).abs() < 1e-15);
    }
}
