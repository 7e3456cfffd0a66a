//! Power Harnack inequality `|P_t f(y)|^p <= exp(c + c |x - y|^2 / t) P_t |f|^p(x)`.

use std::sync::Arc;

use rayon::prelude::*;

use super::{cloud_estimate, gaussian_expectation, ou_oracle, terminal_cloud, McConfig};
use crate::error::{invalid, Result};
use crate::metrics::{transport, DiscreteMeasure};
use crate::model_zoo::ModelSpec;
use crate::numerics::Estimate;
use crate::particle::ParticleCloud;
use crate::paths::{inverse_normal_cdf, StreamKey};

/// Bounded test function of the first coordinate.
#[derive(Clone)]
pub struct TestFunction {
    pub name: &'static str,
    pub f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name)
    }
}

impl TestFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x[0])
    }
}

/// Indicator of a half line, a smooth step and `tanh`.
pub fn standard_functions() -> Vec<TestFunction> {
    vec![
        TestFunction { name: "indicator", f: Arc::new(|z| if z >= 0.0 { 1.0 } else { 0.0 }) },
        TestFunction { name: "smooth_step", f: Arc::new(|z| 0.5 * (1.0 + (2.0 * z).tanh())) },
        TestFunction { name: "tanh", f: Arc::new(|z: f64| z.tanh()) },
    ]
}

/// Symmetric endpoints `x = -delta/2 e_1`, `y = +delta/2 e_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct HarnackEndpoints {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl HarnackEndpoints {
    pub fn symmetric(dim: usize, delta: f64) -> Self {
        let mut x = vec![0.0; dim];
        let mut y = vec![0.0; dim];
        x[0] = -0.5 * delta;
        y[0] = 0.5 * delta;
        Self { x, y }
    }

    pub fn distance(&self) -> f64 {
        self.x.iter().zip(&self.y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnackConfig {
    pub mc: McConfig,
    pub powers: Vec<f64>,
}

impl Default for HarnackConfig {
    fn default() -> Self {
        Self { mc: McConfig::default(), powers: vec![2.0, 4.0] }
    }
}

/// One `(model, x, y, t, f, p)` case.
#[derive(Debug, Clone, PartialEq)]
pub struct HarnackReport {
    pub model: String,
    pub t: f64,
    pub distance: f64,
    pub function: &'static str,
    pub p: f64,
    /// `|P_t f(y)|^p` (or `|P_t f(nu)|^p`) with its interval.
    pub lhs: Estimate,
    /// `P_t |f|^p(x)` (or from `mu`), before the exponential factor.
    pub rhs: Estimate,
    /// Smallest `c >= 0` with `lhs <= exp(c (1 + |x - y|^2 / t)) rhs` at the point estimates.
    pub c_needed: f64,
    /// The interval for `P_t f(y)` contains 0, so the power is not resolved.
    pub inconclusive: bool,
    /// Closed-form `(lhs, rhs)` when the model is OU.
    pub oracle: Option<(f64, f64)>,
}

impl HarnackReport {
    pub fn exponent(&self) -> f64 {
        1.0 + self.distance * self.distance / self.t
    }

    /// Inequality holds with constant `c` up to the Monte Carlo intervals.
    pub fn holds_with(&self, c: f64) -> bool {
        self.lhs.lo <= self.rhs.hi * (c * self.exponent()).exp()
    }

    /// MC estimates agree with the oracle within `k` standard errors.
    pub fn oracle_agrees(&self, k: f64) -> Option<bool> {
        self.oracle.map(|(l, r)| {
            let within = |e: &Estimate, x: f64| (e.value - x).abs() <= k * e.se.max(1e-15) || e.contains(x);
            within(&self.lhs, l) && within(&self.rhs, r)
        })
    }
}

fn power_interval(e: &Estimate, p: f64) -> (Estimate, bool) {
    let pw = |v: f64| v.abs().powf(p);
    let spans_zero = e.lo < 0.0 && e.hi > 0.0;
    let (lo, hi) = if spans_zero {
        (0.0, pw(e.lo).max(pw(e.hi)))
    } else {
        let (a, b) = (pw(e.lo), pw(e.hi));
        (a.min(b), a.max(b))
    };
    // delta method for the standard error
    let se = p * e.value.abs().powf(p - 1.0) * e.se;
    (Estimate { value: pw(e.value), se, lo, hi }, spans_zero)
}

fn c_needed(lhs: f64, rhs: f64, exponent: f64) -> f64 {
    if lhs <= 0.0 {
        0.0
    } else if rhs <= 0.0 {
        f64::INFINITY
    } else {
        ((lhs / rhs).ln() / exponent).max(0.0)
    }
}

fn reports_from_clouds(
    model: &ModelSpec,
    at_y: &ParticleCloud,
    at_x: &ParticleCloud,
    t: f64,
    distance: f64,
    factor: f64,
    fs: &[TestFunction],
    cfg: &HarnackConfig,
    seed: u64,
    oracle_points: Option<(f64, f64)>,
) -> Vec<HarnackReport> {
    let mut out = Vec::new();
    for (fi, f) in fs.iter().enumerate() {
        let boot = StreamKey::derive_seed(seed, 100 + fi as u64);
        let py = cloud_estimate(at_y, &|z| f.eval(z), cfg.mc.resamples, boot);
        for (pi, &p) in cfg.powers.iter().enumerate() {
            let (lhs, inconclusive) = power_interval(&py, p);
            let boot = StreamKey::derive_seed(seed, 1000 + 10 * fi as u64 + pi as u64);
            let base = cloud_estimate(at_x, &|z| f.eval(z).abs().powf(p), cfg.mc.resamples, boot);
            let rhs = Estimate { value: base.value * factor, se: base.se * factor, lo: base.lo * factor, hi: base.hi * factor };
            let oracle = match (model.ou_parameters, oracle_points) {
                (Some((theta, s)), Some((x, y))) => {
                    let (my, vy) = ou_oracle(theta, s, t, y);
                    let (mx, vx) = ou_oracle(theta, s, t, x);
                    let l = gaussian_expectation(&|z| (f.f)(z), my, vy).abs().powf(p);
                    let r = gaussian_expectation(&|z| (f.f)(z).abs().powf(p), mx, vx) * factor;
                    Some((l, r))
                }
                _ => None,
            };
            let mut rep = HarnackReport {
                model: model.id.clone(),
                t,
                distance,
                function: f.name,
                p,
                lhs,
                rhs,
                c_needed: 0.0,
                inconclusive,
                oracle,
            };
            rep.c_needed = c_needed(rep.lhs.value, rep.rhs.value, rep.exponent());
            out.push(rep);
        }
    }
    out
}

/// Estimate both sides for every `(f, p)` from one simulation at each endpoint.
pub fn harnack_check(
    model: &ModelSpec,
    ends: &HarnackEndpoints,
    t: f64,
    fs: &[TestFunction],
    cfg: &HarnackConfig,
    seed: u64,
) -> Result<Vec<HarnackReport>> {
    if cfg.powers.iter().any(|&p| !(p > 1.0 && p.is_finite())) {
        return Err(invalid("Harnack powers must lie in (1, inf)"));
    }
    if ends.x.len() != model.dim || ends.y.len() != model.dim {
        return Err(invalid("Harnack endpoints have the wrong dimension"));
    }
    let n = cfg.mc.n;
    let sy = StreamKey::derive_seed(seed, 1);
    let sx = StreamKey::derive_seed(seed, 2);
    let at_y = terminal_cloud(model, &ParticleCloud::dirac(&ends.y, n)?, t, &cfg.mc, sy)?.terminal;
    let at_x = terminal_cloud(model, &ParticleCloud::dirac(&ends.x, n)?, t, &cfg.mc, sx)?.terminal;
    let oracle_points = (model.dim == 1).then(|| (ends.x[0], ends.y[0]));
    Ok(reports_from_clouds(model, &at_y, &at_x, t, ends.distance(), 1.0, fs, cfg, seed, oracle_points))
}

/// `inf over couplings pi of integral exp(c + c |x - y|^2 / t) d pi`, or
/// `+inf` when any cost entry overflows.
pub fn coupling_cost_factor(mu: &DiscreteMeasure, nu: &DiscreteMeasure, c: f64, t: f64) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(invalid("measures live in different dimensions"));
    }
    let mut cost = Vec::with_capacity(mu.len() * nu.len());
    for i in 0..mu.len() {
        for j in 0..nu.len() {
            let d2: f64 = mu.atom(i).iter().zip(nu.atom(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            let v = (c + c * d2 / t).exp();
            if !v.is_finite() {
                return Ok(f64::INFINITY);
            }
            cost.push(v);
        }
    }
    Ok(transport(mu.masses(), nu.masses(), &cost)?.cost)
}

/// Distribution version: `|P_t f(nu)|^p` against `P_t |f|^p(mu)` times the
/// exponential coupling cost between `mu` and `nu` at constant `c`.
#[allow(clippy::too_many_arguments)]
pub fn harnack_distribution_check(
    model: &ModelSpec,
    mu: &ParticleCloud,
    nu: &ParticleCloud,
    t: f64,
    c: f64,
    fs: &[TestFunction],
    cfg: &HarnackConfig,
    seed: u64,
) -> Result<Vec<HarnackReport>> {
    let factor = coupling_cost_factor(&mu.to_measure(), &nu.to_measure(), c, t)?;
    let at_nu = terminal_cloud(model, nu, t, &cfg.mc, StreamKey::derive_seed(seed, 1))?.terminal;
    let at_mu = terminal_cloud(model, mu, t, &cfg.mc, StreamKey::derive_seed(seed, 2))?.terminal;
    let mut reps = reports_from_clouds(model, &at_nu, &at_mu, t, 0.0, factor, fs, cfg, seed, None);
    // the distance already sits inside the factor
    for r in &mut reps {
        r.c_needed = if r.holds_with(0.0) { 0.0 } else { f64::INFINITY };
    }
    Ok(reps)
}

/// Constant fitted on a training battery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarnackFit {
    pub c: f64,
    pub training_cases: usize,
}

impl HarnackFit {
    /// Largest `c_needed` over conclusive training cases.
    pub fn fit(training: &[HarnackReport]) -> Self {
        let c = training.iter().filter(|r| !r.inconclusive).map(|r| r.c_needed).fold(0.0, f64::max);
        Self { c, training_cases: training.len() }
    }
}

/// Result of a train/validate Harnack battery.
#[derive(Debug, Clone, PartialEq)]
pub struct HarnackBattery {
    pub fit: HarnackFit,
    pub training: Vec<HarnackReport>,
    pub held_out: Vec<HarnackReport>,
    /// Fraction of conclusive held-out cases that hold with the fitted `c`.
    pub pass_rate: f64,
    /// Held-out cases whose point estimates were not resolved.
    pub inconclusive: usize,
    /// Every OU case agrees with the Gaussian oracle within `oracle_z` SE, and
    /// the oracle values satisfy the held-out inequalities with the fitted `c`.
    pub oracle_consistent: bool,
    /// Family-wise threshold: the two-sided 3-sigma level split over the
    /// independently simulated OU clouds.
    pub oracle_z: f64,
}

/// Two-sided z threshold keeping the family-wise error of `families`
/// comparisons at the single-comparison 3-sigma level.
pub fn family_wise_z(families: usize) -> f64 {
    let alpha = 2.0 * (1.0 - 0.5 * statrs::function::erf::erfc(-3.0 / std::f64::consts::SQRT_2));
    -inverse_normal_cdf(alpha / (2.0 * families.max(1) as f64))
}

/// Fit `c` on endpoints at distances `train_distances` and times `times`,
/// then validate on `held_out_distance` for the same times.
pub fn harnack_battery(
    models: &[ModelSpec],
    train_distances: &[f64],
    held_out_distance: f64,
    times: &[f64],
    fs: &[TestFunction],
    cfg: &HarnackConfig,
    seed: u64,
) -> Result<HarnackBattery> {
    let mut jobs = Vec::new();
    for (mi, m) in models.iter().enumerate() {
        for (ti, &t) in times.iter().enumerate() {
            for (di, &d) in train_distances.iter().chain(std::iter::once(&held_out_distance)).enumerate() {
                let held = di == train_distances.len();
                let tag = ((mi * 16 + ti) * 16 + di) as u64;
                jobs.push((m, t, d, held, StreamKey::derive_seed(seed, tag)));
            }
        }
    }
    let results: Vec<Result<(bool, Vec<HarnackReport>)>> = jobs
        .par_iter()
        .map(|&(m, t, d, held, s)| Ok((held, harnack_check(m, &HarnackEndpoints::symmetric(m.dim, d), t, fs, cfg, s)?)))
        .collect();
    let mut training = Vec::new();
    let mut held_out = Vec::new();
    for r in results {
        let (held, reps) = r?;
        if held {
            held_out.extend(reps);
        } else {
            training.extend(reps);
        }
    }
    let fit = HarnackFit::fit(&training);
    let conclusive: Vec<&HarnackReport> = held_out.iter().filter(|r| !r.inconclusive).collect();
    let passed = conclusive.iter().filter(|r| r.holds_with(fit.c)).count();
    let pass_rate = if conclusive.is_empty() { 0.0 } else { passed as f64 / conclusive.len() as f64 };
    let ou_clouds = 2 * jobs.iter().filter(|j| j.0.ou_parameters.is_some()).count();
    let oracle_z = family_wise_z(ou_clouds);
    let oracle_consistent = training.iter().chain(&held_out).all(|r| r.oracle_agrees(oracle_z).unwrap_or(true))
        && held_out.iter().all(|r| r.oracle.map(|(l, rr)| l <= rr * (fit.c * r.exponent()).exp()).unwrap_or(true));
    Ok(HarnackBattery {
        fit,
        inconclusive: held_out.len() - conclusive.len(),
        training,
        held_out,
        pass_rate,
        oracle_consistent,
        oracle_z,
    })
}
