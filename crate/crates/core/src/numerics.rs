//! Quadrature, bootstrap and least-squares helpers shared by the checks.

use crate::paths::StreamKey;

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub evaluations: u32,
}

/// Integrate `f` over `[a, b]` with the double-exponential rule, bisecting
/// until every piece meets its share of `tol` or `max_depth` is reached.
/// Non-finite integrand values are treated as zero.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, max_depth: u32) -> Quadrature {
    let out = quadrature::integrate(f, a, b, tol);
    if out.error_estimate <= tol || max_depth == 0 {
        return Quadrature {
            value: out.integral,
            error: out.error_estimate,
            evaluations: out.num_function_evaluations,
        };
    }
    let mid = 0.5 * (a + b);
    let left = integrate(f, a, mid, 0.5 * tol, max_depth - 1);
    let right = integrate(f, mid, b, 0.5 * tol, max_depth - 1);
    Quadrature {
        value: left.value + right.value,
        error: left.error + right.error,
        evaluations: out.num_function_evaluations + left.evaluations + right.evaluations,
    }
}

/// Sum of [`integrate`] over consecutive pieces `[breaks[i], breaks[i+1]]`.
pub fn integrate_pieces<F: Fn(f64) -> f64>(f: &F, breaks: &[f64], tol: f64, max_depth: u32) -> Quadrature {
    let mut acc = Quadrature { value: 0.0, error: 0.0, evaluations: 0 };
    let share = tol / breaks.len().saturating_sub(1).max(1) as f64;
    for w in breaks.windows(2) {
        let q = integrate(f, w[0], w[1], share, max_depth);
        acc.value += q.value;
        acc.error += q.error;
        acc.evaluations += q.evaluations;
    }
    acc
}

/// Point estimate with a bootstrap standard error and 95% percentile interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, se: 0.0, lo: value, hi: value }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

pub const DEFAULT_RESAMPLES: usize = 200;

/// Bootstrap replicates of `stat` evaluated on resampled index sets of size `n`.
pub fn bootstrap_replicates<S>(n: usize, resamples: usize, key: StreamKey, mut stat: S) -> Vec<f64>
where
    S: FnMut(&[usize]) -> f64,
{
    let mut u = key.uniforms();
    let mut idx = vec![0usize; n];
    (0..resamples)
        .map(|_| {
            for i in idx.iter_mut() {
                *i = u.next_index(n);
            }
            stat(&idx)
        })
        .collect()
}

/// Summarize a point estimate and its bootstrap replicates.
pub fn summarize(value: f64, replicates: &[f64]) -> Estimate {
    let b = replicates.len();
    if b < 2 {
        return Estimate::exact(value);
    }
    let mean = replicates.iter().sum::<f64>() / b as f64;
    let var = replicates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
    let mut sorted = replicates.to_vec();
    sorted.sort_by(f64::total_cmp);
    Estimate { value, se: var.sqrt(), lo: quantile_sorted(&sorted, 0.025), hi: quantile_sorted(&sorted, 0.975) }
}

/// Bootstrap estimate of a sample mean.
pub fn bootstrap_mean(values: &[f64], resamples: usize, key: StreamKey) -> Estimate {
    let n = values.len();
    if n == 0 {
        return Estimate::exact(f64::NAN);
    }
    let value = values.iter().sum::<f64>() / n as f64;
    let reps = bootstrap_replicates(n, resamples, key, |idx| {
        idx.iter().map(|&i| values[i]).sum::<f64>() / n as f64
    });
    summarize(value, &reps)
}

/// Bootstrap estimate of the ratio `sum(num) / sum(den)` over paired samples.
pub fn bootstrap_ratio(num: &[f64], den: &[f64], resamples: usize, key: StreamKey) -> Estimate {
    assert_eq!(num.len(), den.len());
    let n = num.len();
    let value = num.iter().sum::<f64>() / den.iter().sum::<f64>();
    let reps = bootstrap_replicates(n, resamples, key, |idx| {
        let (mut a, mut b) = (0.0, 0.0);
        for &i in idx {
            a += num[i];
            b += den[i];
        }
        a / b
    });
    summarize(value, &reps)
}

/// Linear interpolation quantile of sorted data, `q` in `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample mean and its standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// Ordinary least squares fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_se = if n > 2.0 { (rss / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    LinearFit { slope, intercept, slope_se }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomial_and_endpoint_singularity() {
        let q = integrate(&|x: f64| x * x, 0.0, 3.0, 1e-12, 8);
        assert!((q.value - 9.0).abs() < 1e-10);
        let q = integrate(&|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, 1e-10, 8);
        // the rule maps abscissas that round onto the pole to zero, losing ~1e-8
        assert!((q.value - 2.0).abs() < 1e-7, "{q:?}");
    }

    #[test]
    fn pieces_add_up() {
        let q = integrate_pieces(&|x: f64| x.exp(), &[0.0, 0.5, 1.0, 2.0], 1e-12, 6);
        assert!((q.value - (2f64.exp() - 1.0)).abs() < 1e-10);
    }

    #[test]
    fn bootstrap_se_matches_analytic() {
        let values: Vec<f64> = (0..2000).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
        let est = bootstrap_mean(&values, 400, StreamKey::new(3, 0, 2));
        let (_, se) = mean_se(&values);
        assert!((est.se / se - 1.0).abs() < 0.15, "{} vs {}", est.se, se);
        assert!(est.lo < est.value && est.value < est.hi);
    }

    #[test]
    fn fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let f = linear_fit(&x, &y);
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!(f.slope_se < 1e-12);
    }

    #[test]
    fn quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&s, 0.5), 3.0);
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 5.0);
    }
}
