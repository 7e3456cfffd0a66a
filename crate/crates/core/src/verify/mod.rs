//! Empirical checks of moment, stability, Harnack and TV-Wasserstein estimates,
//! with the closed-form Ornstein-Uhlenbeck law as ground truth.

pub mod grr;
pub mod harnack;
pub mod moment;
pub mod stability;

use statrs::function::erf::erfc;

use crate::error::{invalid, Result};
use crate::model_zoo::ModelSpec;
use crate::numerics::{bootstrap_mean, integrate, Estimate, DEFAULT_RESAMPLES};
use crate::particle::{simulate_terminal, EngineOutcome, InitLaw, ParticleCloud, SimOptions};
use crate::paths::{substream, StreamKey, TimeGrid};

pub use grr::{grr_check, GrrCase, GrrConfig, GrrReport};
pub use harnack::{
    coupling_cost_factor, harnack_battery, harnack_check, harnack_distribution_check, standard_functions, HarnackBattery, HarnackConfig,
    HarnackEndpoints, HarnackFit, HarnackReport, TestFunction, family_wise_z,
};
pub use moment::{moment_check, moment_stability, AtomMoment, MomentConfig, MomentReport, MomentStability};
pub use stability::{stability_check, StabilityConfig, StabilityMode, StabilityReport};

/// Mean and variance of the OU transition law from `x` after time `t` for
/// `dX = -theta X dt + s dW`.
pub fn ou_oracle(theta: f64, s: f64, t: f64, x: f64) -> (f64, f64) {
    let mean = (-theta * t).exp() * x;
    // (1 - e^{-2 theta t}) / (2 theta), continuous through theta = 0
    let var = if theta.abs() * t < 1e-8 { s * s * t * (1.0 - theta * t) } else { s * s * -(-2.0 * theta * t).exp_m1() / (2.0 * theta) };
    (mean, var)
}

/// `P(N(mean, var) >= 0)`.
pub fn gaussian_upper_tail(mean: f64, var: f64) -> f64 {
    0.5 * erfc(-mean / (2.0 * var).sqrt())
}

/// `E f(Z)` for `Z ~ N(mean, var)` by quadrature over `mean +- 12 sd`.
pub fn gaussian_expectation(f: &dyn Fn(f64) -> f64, mean: f64, var: f64) -> f64 {
    let sd = var.sqrt();
    let density = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
    // split at the origin where indicator-type functions jump
    let z0 = (-mean / sd).clamp(-12.0, 12.0);
    let g = |u: f64| f(mean + sd * u) * density(u);
    integrate(&g, -12.0, z0, 1e-13, 12).value + integrate(&g, z0, 12.0, 1e-13, 12).value
}

/// Monte Carlo settings shared by the semigroup-based checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub n: usize,
    pub dt: f64,
    pub resamples: usize,
    pub sim: SimOptions,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { n: 10_000, dt: 1e-3, resamples: DEFAULT_RESAMPLES, sim: SimOptions::default() }
    }
}

/// `n` samples of `init`: the cloud itself when it already has `n` points,
/// otherwise a resample.
pub fn initial_cloud(init: &ParticleCloud, n: usize, seed: u64) -> Result<ParticleCloud> {
    if init.len() == n {
        Ok(init.clone())
    } else {
        InitLaw::Resample(init.to_measure()).sample(n, seed)
    }
}

/// Terminal cloud at time `t` from `init`, interacting when the model depends on the law.
pub fn terminal_cloud(model: &ModelSpec, init: &ParticleCloud, t: f64, mc: &McConfig, seed: u64) -> Result<EngineOutcome> {
    if !(t > 0.0) {
        return Err(invalid("semigroup time must be positive"));
    }
    let grid = TimeGrid::with_step(0.0, t, mc.dt)?;
    let start = initial_cloud(init, mc.n, seed)?;
    simulate_terminal(model, &start, &grid, seed, &mc.sim)
}

/// Bootstrap estimate of `cloud(f)` for an equally weighted cloud.
pub fn cloud_estimate(cloud: &ParticleCloud, f: &dyn Fn(&[f64]) -> f64, resamples: usize, seed: u64) -> Estimate {
    let values: Vec<f64> = cloud.points().chunks_exact(cloud.dim()).map(f).collect();
    bootstrap_mean(&values, resamples, StreamKey::new(seed, 0, substream::BOOTSTRAP))
}

/// Monte Carlo estimate of `P_t f(init)` with a bootstrap interval.
pub fn mc_semigroup(
    model: &ModelSpec,
    init: &ParticleCloud,
    t: f64,
    f: &dyn Fn(&[f64]) -> f64,
    mc: &McConfig,
    seed: u64,
) -> Result<Estimate> {
    let out = terminal_cloud(model, init, t, mc, seed)?;
    Ok(cloud_estimate(&out.terminal, f, mc.resamples, seed))
}

/// Weak error `E X_t^2 - E Y_t^2` of Euler-Maruyama for OU from `x0`, where
/// `Y` is the exact AR(1) transition driven by the same normals. Returns
/// the mean difference and its standard error.
pub fn ou_weak_error(theta: f64, s: f64, x0: f64, t: f64, dt: f64, n: usize, seed: u64) -> Result<(f64, f64)> {
    let model = crate::model_zoo::ou(theta, s)?;
    let grid = TimeGrid::with_step(0.0, t, dt)?;
    let init = ParticleCloud::dirac(&[x0], n)?;
    let euler = simulate_terminal(&model, &init, &grid, seed, &SimOptions::default())?.terminal;
    let h = grid.step();
    let a = (-theta * h).exp();
    let (_, var) = ou_oracle(theta, s, h, 0.0);
    let b = var.sqrt();
    let diffs: Vec<f64> = (0..n)
        .map(|i| {
            let mut z = StreamKey::noise(seed, i as u64).normals();
            let mut y = x0;
            for _ in 0..grid.n_steps() {
                y = a * y + b * z.next_standard();
            }
            let x = euler.point(i)[0];
            x * x - y * y
        })
        .collect();
    Ok(crate::numerics::mean_se(&diffs))
}
