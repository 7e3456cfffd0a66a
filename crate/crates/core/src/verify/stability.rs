//! Continuity of `mu -> P_t^* mu`: distances from the time-`t` laws of a
//! sequence `mu_n` to that of the limit `mu`, against a same-law noise floor.

use super::{initial_cloud, McConfig};
use crate::error::{invalid, Error, Result};
use crate::metrics::histogram_distance;
use crate::model_zoo::ModelSpec;
use crate::particle::{simulate_terminal, ParticleCloud};
use crate::paths::{StreamKey, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityMode {
    /// `||.||_V`
    Weighted,
    /// Plain total variation.
    Variation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityConfig {
    pub mc: McConfig,
    pub t: f64,
    pub mode: StabilityMode,
    pub resolution: usize,
    /// Declared `p > 1` and bound for `sup_n mu_n(V^p)`.
    pub p: f64,
    pub moment_bound: f64,
    /// Allowed rise between consecutive distances, in units of the noise floor.
    pub monotone_slack: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            mc: McConfig { n: 10_000, dt: 1e-2, ..Default::default() },
            t: 0.5,
            mode: StabilityMode::Weighted,
            resolution: crate::metrics::DEFAULT_RESOLUTION,
            p: 2.0,
            moment_bound: 1e3,
            monotone_slack: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub distances: Vec<f64>,
    pub noise_floor: f64,
    pub sup_moment: f64,
    pub monotone: bool,
    /// Last distance below twice the noise floor.
    pub reaches_floor: bool,
    pub pass: bool,
}

/// Terminal laws of `sequence[i]` and `limit` share the noise seed, so the
/// distances isolate the effect of the initial law. The floor compares two
/// runs from `limit` with independent seeds.
pub fn stability_check(
    model: &ModelSpec,
    sequence: &[ParticleCloud],
    limit: &ParticleCloud,
    cfg: &StabilityConfig,
    seed: u64,
) -> Result<StabilityReport> {
    if sequence.is_empty() {
        return Err(invalid("stability check needs a nonempty sequence"));
    }
    if !(cfg.p > 1.0) {
        return Err(invalid("stability check needs p > 1"));
    }
    let v = model.lyapunov.value.clone();
    let mut sup_moment: f64 = 0.0;
    for mu in sequence {
        let m = mu.integral(&|x| v(x).powf(cfg.p))?;
        sup_moment = sup_moment.max(m);
    }
    if !(sup_moment <= cfg.moment_bound) {
        return Err(Error::Precondition(format!(
            "sup_n mu_n(V^{}) = {sup_moment} exceeds the declared bound {}",
            cfg.p, cfg.moment_bound
        )));
    }
    let d = model.dim;
    let weight: Box<dyn Fn(&[f64]) -> f64 + Sync> = match cfg.mode {
        StabilityMode::Weighted => Box::new(move |x: &[f64]| v(x)),
        StabilityMode::Variation => Box::new(|_: &[f64]| 1.0),
    };
    let grid = TimeGrid::with_step(0.0, cfg.t, cfg.mc.dt)?;
    let n = cfg.mc.n;
    let run = |init: &ParticleCloud, s: u64| -> Result<ParticleCloud> {
        Ok(simulate_terminal(model, &initial_cloud(init, n, s)?, &grid, s, &cfg.mc.sim)?.terminal)
    };
    let dist = |a: &ParticleCloud, b: &ParticleCloud| {
        histogram_distance(d, (a.points(), a.weights()), (b.points(), b.weights()), cfg.resolution, weight.as_ref())
    };
    let reference = run(limit, seed)?;
    let twin = run(limit, StreamKey::derive_seed(seed, 1))?;
    let noise_floor = dist(&reference, &twin)?;
    let distances = sequence
        .iter()
        .map(|mu| dist(&run(mu, seed)?, &reference))
        .collect::<Result<Vec<f64>>>()?;
    let monotone = distances.windows(2).all(|w| w[1] <= w[0] + cfg.monotone_slack * noise_floor);
    let reaches_floor = *distances.last().expect("nonempty") < 2.0 * noise_floor;
    Ok(StabilityReport { distances, noise_floor, sup_moment, monotone, reaches_floor, pass: monotone && reaches_floor })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_zoo;

    #[test]
    fn constant_sequence_sits_below_floor() {
        let m = model_zoo::ou(1.0, 1.0).unwrap();
        let mu = ParticleCloud::dirac(&[0.3], 2000).unwrap();
        let cfg = StabilityConfig { mc: McConfig { n: 2000, dt: 1e-2, ..Default::default() }, ..Default::default() };
        let r = stability_check(&m, &[mu.clone(), mu.clone()], &mu, &cfg, 5).unwrap();
        assert!(r.distances.iter().all(|&d| d == 0.0));
        assert!(r.pass);
    }

    #[test]
    fn unbounded_moments_are_rejected() {
        let m = model_zoo::ou(1.0, 1.0).unwrap();
        let far = ParticleCloud::dirac(&[1e30], 10).unwrap();
        let cfg = StabilityConfig { moment_bound: 10.0, ..Default::default() };
        assert!(matches!(stability_check(&m, &[far.clone()], &far, &cfg, 1), Err(Error::Precondition(_))));
    }
}
