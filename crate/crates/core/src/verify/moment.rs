//! Conditional sup-moment bound
//! `E[sup_t V(X_t)^n | X_0] <= c(n) ((E V(X_0))^n + V(X_0)^n)`.

use super::McConfig;
use crate::error::{invalid, Result};
use crate::model_zoo::ModelSpec;
use crate::particle::{run_engine, MeasureArg, ParticleCloud};
use crate::paths::TimeGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct MomentConfig {
    pub mc: McConfig,
    pub t: f64,
    pub powers: Vec<u32>,
    /// Truncated fraction above which a report is flagged unreliable.
    pub max_truncated: f64,
}

impl Default for MomentConfig {
    fn default() -> Self {
        Self { mc: McConfig { n: 10_000, dt: 1e-2, ..Default::default() }, t: 1.0, powers: vec![1, 2], max_truncated: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomMoment {
    pub atom: Vec<f64>,
    /// Mean of `sup_k V(X_{t_k})^n` over particles started at the atom.
    pub lhs: f64,
    pub denominator: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub power: u32,
    /// `max over atoms of lhs / denominator`.
    pub c: f64,
    pub atoms: Vec<AtomMoment>,
    pub truncated_fraction: f64,
    pub unreliable: bool,
}

/// Initial law uniform on `atoms`; particle `i` starts at atom `i mod atoms`.
/// The sup over time is the max over grid nodes.
pub fn moment_check(model: &ModelSpec, atoms: &[Vec<f64>], cfg: &MomentConfig, seed: u64) -> Result<Vec<MomentReport>> {
    if atoms.is_empty() || atoms.iter().any(|a| a.len() != model.dim) {
        return Err(invalid("moment check needs atoms of the model's dimension"));
    }
    if cfg.powers.iter().any(|&p| !(1..=3).contains(&p)) {
        return Err(invalid("moment powers must lie in {1, 2, 3}"));
    }
    let n = cfg.mc.n;
    if n < atoms.len() {
        return Err(invalid("fewer particles than atoms"));
    }
    let d = model.dim;
    let pts: Vec<f64> = (0..n).flat_map(|i| atoms[i % atoms.len()].iter().copied()).collect();
    let init = ParticleCloud::uniform(d, pts)?;
    let grid = TimeGrid::with_step(0.0, cfg.t, cfg.mc.dt)?;
    let v = model.lyapunov.value.clone();
    let mut sup = vec![f64::NEG_INFINITY; n];
    let out = run_engine(model, &init, &grid, seed, &cfg.mc.sim, MeasureArg::SelfConsistent, |_, state| {
        for (s, x) in sup.iter_mut().zip(state.chunks_exact(d)) {
            *s = s.max(v(x));
        }
    })?;
    let truncated_fraction = out.frozen_fraction();
    let v0: Vec<f64> = atoms.iter().map(|a| v(a)).collect();
    let mean_v0 = v0.iter().sum::<f64>() / atoms.len() as f64;
    let mut reports = Vec::new();
    for &p in &cfg.powers {
        let mut per_atom = Vec::new();
        for (j, atom) in atoms.iter().enumerate() {
            let (mut acc, mut count) = (0.0, 0usize);
            for s in sup.iter().skip(j).step_by(atoms.len()) {
                acc += s.powi(p as i32);
                count += 1;
            }
            let denominator = mean_v0.powi(p as i32) + v0[j].powi(p as i32);
            per_atom.push(AtomMoment { atom: atom.clone(), lhs: acc / count as f64, denominator });
        }
        let c = per_atom.iter().map(|a| a.lhs / a.denominator).fold(0.0, f64::max);
        reports.push(MomentReport {
            power: p,
            c,
            atoms: per_atom,
            truncated_fraction,
            unreliable: truncated_fraction > cfg.max_truncated,
        });
    }
    Ok(reports)
}

/// Fitted constants under particle doubling and step halving.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentStability {
    pub base: Vec<MomentReport>,
    pub doubled_n: Vec<MomentReport>,
    pub halved_dt: Vec<MomentReport>,
    /// Largest relative change of `c(n)` over both refinements.
    pub max_relative_change: f64,
    pub max_truncated_fraction: f64,
}

pub fn moment_stability(model: &ModelSpec, atoms: &[Vec<f64>], cfg: &MomentConfig, seed: u64) -> Result<MomentStability> {
    let base = moment_check(model, atoms, cfg, seed)?;
    let mut c2 = cfg.clone();
    c2.mc.n *= 2;
    let doubled_n = moment_check(model, atoms, &c2, seed)?;
    let mut c3 = cfg.clone();
    c3.mc.dt *= 0.5;
    let halved_dt = moment_check(model, atoms, &c3, seed)?;
    let mut max_relative_change: f64 = 0.0;
    for other in [&doubled_n, &halved_dt] {
        for (a, b) in base.iter().zip(other.iter()) {
            max_relative_change = max_relative_change.max((b.c - a.c).abs() / a.c);
        }
    }
    let max_truncated_fraction =
        base.iter().chain(&doubled_n).chain(&halved_dt).map(|r| r.truncated_fraction).fold(0.0, f64::max);
    Ok(MomentStability { base, doubled_n, halved_dt, max_relative_change, max_truncated_fraction })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_zoo;
    use std::sync::Arc;

    #[test]
    fn still_model_has_constant_at_most_one() {
        let mut m = model_zoo::ou(1.0, 1.0).unwrap();
        m.drift_regular = Arc::new(|_t, _x, _mf, out: &mut [f64]| out[0] = 0.0);
        m.sigma = Arc::new(|_t, _x, out: &mut [f64]| out[0] = 0.0);
        let cfg = MomentConfig { mc: McConfig { n: 30, dt: 0.1, ..Default::default() }, ..Default::default() };
        for r in moment_check(&m, &[vec![-2.0], vec![0.0], vec![3.0]], &cfg, 1).unwrap() {
            assert!(r.c <= 1.0, "{r:?}");
            assert_eq!(r.truncated_fraction, 0.0);
        }
    }
}
