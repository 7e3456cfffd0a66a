//! Total variation of time-`t` laws against `W_2` of the initial laws for
//! models with a bounded weight: `TV^2 <= c (1/t - log(1 ^ W_2)) W_2^2`.

use super::McConfig;
use crate::error::{invalid, Error, Result};
use crate::metrics::histogram_distance;
use crate::model_zoo::ModelSpec;
use crate::numerics::{linear_fit, mean_se, Estimate};
use crate::particle::{simulate_terminal, ParticleCloud};
use crate::paths::{StreamKey, TimeGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct GrrConfig {
    pub mc: McConfig,
    pub times: Vec<f64>,
    /// Initial gaps `2^{-k}`.
    pub ks: Vec<u32>,
    /// The first `train` gaps fit the constant; the rest validate it.
    pub train: usize,
    /// Histogram cells per axis for the total variation.
    pub resolution: usize,
    /// Independent seeds; the spread of the fitted slopes gives its error.
    pub replicates: usize,
}

impl Default for GrrConfig {
    fn default() -> Self {
        Self {
            mc: McConfig { n: 1_000_000, dt: 1e-2, ..Default::default() },
            times: vec![0.5],
            ks: (1..=6).collect(),
            train: 3,
            resolution: 32,
            replicates: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrrCase {
    pub k: u32,
    pub t: f64,
    /// `W_2` of the two initial Dirac laws.
    pub w2: f64,
    /// Total variation of the terminal histograms, over replicates.
    pub tv: Estimate,
    /// `(1/t - log(1 ^ W_2)) W_2^2`.
    pub shape: f64,
    pub held_out: bool,
}

impl GrrCase {
    pub fn ratio(&self) -> f64 {
        self.tv.value * self.tv.value / self.shape
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrrReport {
    pub cases: Vec<GrrCase>,
    /// Slope of `log(TV^2 / W_2^2)` against `log(1/t - log(1 ^ W_2))`, over replicates.
    pub slope: Estimate,
    /// Largest ratio on the training gaps.
    pub c: f64,
    pub held_out_ok: bool,
    /// Slope not significantly above 1 (mean - 3 SE <= 1).
    pub slope_ok: bool,
    pub pass: bool,
}

fn replicate_estimate(values: &[f64]) -> Estimate {
    let (m, se) = mean_se(values);
    Estimate { value: m, se, lo: m - 3.0 * se, hi: m + 3.0 * se }
}

/// Start from `delta_{x}` and `delta_{x + 2^{-k} e_1}` with common random
/// numbers and compare terminal histograms.
pub fn grr_check(model: &ModelSpec, x: &[f64], cfg: &GrrConfig, seed: u64) -> Result<GrrReport> {
    if model.weight_bound.is_none() {
        return Err(Error::Precondition("the TV-Wasserstein check needs a bounded weight".into()));
    }
    if x.len() != model.dim || cfg.ks.is_empty() || cfg.times.is_empty() || cfg.train == 0 || cfg.train > cfg.ks.len() {
        return Err(invalid("TV-Wasserstein check needs a start point, gaps, times and 1 <= train <= gaps"));
    }
    if cfg.replicates < 2 {
        return Err(invalid("TV-Wasserstein check needs at least two replicates"));
    }
    let d = model.dim;
    let one = |_: &[f64]| 1.0;
    let n = cfg.mc.n;
    // tv[r][case]
    let mut tv = vec![Vec::new(); cfg.replicates];
    for (r, row) in tv.iter_mut().enumerate() {
        let s = StreamKey::derive_seed(seed, r as u64);
        for &t in &cfg.times {
            let grid = TimeGrid::with_step(0.0, t, cfg.mc.dt)?;
            let base = simulate_terminal(model, &ParticleCloud::dirac(x, n)?, &grid, s, &cfg.mc.sim)?.terminal;
            for &k in &cfg.ks {
                let mut y = x.to_vec();
                y[0] += 0.5f64.powi(k as i32);
                let moved = simulate_terminal(model, &ParticleCloud::dirac(&y, n)?, &grid, s, &cfg.mc.sim)?.terminal;
                let dist = histogram_distance(d, (base.points(), base.weights()), (moved.points(), moved.weights()), cfg.resolution, &one)?;
                row.push(dist);
            }
        }
    }
    let mut cases = Vec::new();
    let mut idx = 0;
    for &t in &cfg.times {
        for (j, &k) in cfg.ks.iter().enumerate() {
            let w2 = 0.5f64.powi(k as i32);
            let vals: Vec<f64> = tv.iter().map(|row| row[idx]).collect();
            cases.push(GrrCase {
                k,
                t,
                w2,
                tv: replicate_estimate(&vals),
                shape: (1.0 / t - w2.min(1.0).ln()) * w2 * w2,
                held_out: j >= cfg.train,
            });
            idx += 1;
        }
    }
    let lx: Vec<f64> = cases.iter().map(|c| (1.0 / c.t - c.w2.min(1.0).ln()).ln()).collect();
    let slopes: Vec<f64> = tv
        .iter()
        .map(|row| {
            let ly: Vec<f64> = row.iter().zip(&cases).map(|(v, c)| (v * v / (c.w2 * c.w2)).ln()).collect();
            linear_fit(&lx, &ly).slope
        })
        .collect();
    let slope = replicate_estimate(&slopes);
    let c = cases.iter().filter(|c| !c.held_out).map(GrrCase::ratio).fold(0.0, f64::max);
    let held_out_ok = cases
        .iter()
        .filter(|c| c.held_out)
        .all(|case| case.tv.lo.max(0.0).powi(2) <= c * case.shape);
    let slope_ok = slope.lo <= 1.0;
    Ok(GrrReport { cases, slope, c, held_out_ok, slope_ok, pass: held_out_ok && slope_ok && slope.value.is_finite() })
}
