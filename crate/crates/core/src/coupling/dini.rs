use std::sync::Arc;

use super::gamma::gamma_schedule;
use crate::error::{invalid, Error, Result};
use crate::numerics::integrate_pieces;

/// Continuity modulus `phi: [0, inf) -> [0, inf)`.
pub type Modulus = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Radii on which `psi` must be strictly increasing.
pub const PSI_RANGE: (f64, f64) = (1e-12, 1e3);
const PSI_SAMPLES: usize = 301;
const BISECTION_STEPS: usize = 80;

/// Breakpoints in `w = ln(t / (t - s))`. The tail `w > 650` (gaps below
/// `t * 1e-282`) is dropped.
const W_BREAKS: [f64; 7] = [0.0, 1.0, 4.0, 16.0, 64.0, 256.0, 650.0];

/// `psi(r) = r^2 / phi(r)^2`.
pub fn psi(phi: &dyn Fn(f64) -> f64, r: f64) -> f64 {
    let p = phi(r);
    (r * r) / (p * p)
}

/// Inverse of an increasing `psi`: brackets the root between consecutive
/// powers of two, then bisects 80 times.
pub fn psi_inverse(phi: &dyn Fn(f64) -> f64, s: f64) -> Result<f64> {
    if !(s >= 0.0) || s.is_infinite() {
        return Err(invalid(format!("psi inverse needs a finite s >= 0, got {s}")));
    }
    if s == 0.0 {
        return Ok(0.0);
    }
    let mut hi = 1.0f64;
    let mut lo = 1.0f64;
    if psi(phi, hi) < s {
        while psi(phi, hi) < s {
            lo = hi;
            hi *= 2.0;
            if hi > 1e300 {
                return Err(Error::HypothesisViolation(format!("psi stays below {s} on [0, 1e300]")));
            }
        }
    } else {
        loop {
            lo *= 0.5;
            if lo < f64::MIN_POSITIVE {
                return Ok(0.0);
            }
            if psi(phi, lo) < s {
                break;
            }
            hi = lo;
        }
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if psi(phi, mid) < s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Largest drop `psi(r_i) - psi(r_{i+1})` on a log-spaced grid over
/// [`PSI_RANGE`], with the radius where it occurs. Strictly increasing `psi`
/// gives a negative value.
pub fn psi_monotonicity(phi: &dyn Fn(f64) -> f64) -> (f64, f64) {
    let (a, b) = (PSI_RANGE.0.ln(), PSI_RANGE.1.ln());
    let mut worst = f64::NEG_INFINITY;
    let mut at = PSI_RANGE.0;
    let mut prev = psi(phi, PSI_RANGE.0);
    for i in 1..PSI_SAMPLES {
        let r = (a + (b - a) * i as f64 / (PSI_SAMPLES - 1) as f64).exp();
        let cur = psi(phi, r);
        let drop = if cur.is_finite() && prev.is_finite() { prev - cur } else { f64::INFINITY };
        if drop > worst {
            worst = drop;
            at = r;
        }
        prev = cur;
    }
    (worst, at)
}

/// Partial Dini integrals `I_k = int_{10^-k}^1 (phi o psi^-1)^2(s) / s ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiniIntegral {
    /// `(k, I_k)` for k = 2..=12.
    pub partial: Vec<(u32, f64)>,
    /// Fitted `p` in `I_{k+1} - I_k ~ k^{-p}`; the integral converges iff `p > 1`.
    pub decay_exponent: f64,
    /// Set when `p` does not clear [`DINI_DECAY_THRESHOLD`].
    pub divergent: bool,
}

/// Increments must decay faster than `k^{-1.5}` for the integral to count as finite.
pub const DINI_DECAY_THRESHOLD: f64 = 1.5;

pub fn dini_integral(phi: &dyn Fn(f64) -> f64, tol: f64) -> Result<DiniIntegral> {
    let ln10 = std::f64::consts::LN_10;
    let f = |z: f64| {
        let s = (-z).exp();
        match psi_inverse(phi, s) {
            Ok(r) => {
                let p = phi(r);
                p * p
            }
            Err(_) => f64::NAN,
        }
    };
    let mut increments = Vec::with_capacity(12);
    for k in 0..12 {
        let a = k as f64 * ln10;
        let q = integrate_pieces(&f, &[a, a + ln10], tol, 6);
        if !q.value.is_finite() {
            return Err(Error::ModelEvaluation { what: "Dini integrand", location: format!("s in [1e-{}, 1e-{k}]", k + 1) });
        }
        increments.push(q.value);
    }
    let mut partial = Vec::with_capacity(11);
    let mut acc: f64 = increments[..2].iter().sum();
    partial.push((2, acc));
    for k in 2..12 {
        acc += increments[k];
        partial.push((k as u32 + 1, acc));
    }
    let tail: Vec<(f64, f64)> = (6..12)
        .filter(|&k| increments[k] > 0.0)
        .map(|k| (((k as f64) + 0.5).ln(), increments[k].ln()))
        .collect();
    let decay_exponent = if tail.len() < 2 {
        f64::INFINITY
    } else {
        let (x, y): (Vec<f64>, Vec<f64>) = tail.into_iter().unzip();
        -crate::numerics::linear_fit(&x, &y).slope
    };
    Ok(DiniIntegral { partial, decay_exponent, divergent: !(decay_exponent > DINI_DECAY_THRESHOLD) })
}

/// The gate `g_t(s) = K (phi o psi^-1)^2(2 K gamma_s) / gamma_s` and its integral.
#[derive(Clone)]
pub struct DiniGate {
    phi: Modulus,
    k: f64,
    t: f64,
    /// `sup` over sampled `t' <= t` of `int_0^{t'} g_{t'}(s) ds`.
    pub c1: f64,
    /// `int_0^t g_t` at successively tighter quadrature tolerances.
    pub refinements: Vec<f64>,
}

impl std::fmt::Debug for DiniGate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiniGate")
            .field("k", &self.k)
            .field("t", &self.t)
            .field("c1", &self.c1)
            .field("refinements", &self.refinements)
            .finish()
    }
}

/// Build the gate for modulus `phi`, checking that `psi` is strictly increasing.
pub fn dini_gate(phi: Modulus, k: f64, t: f64, quad_tol: f64) -> Result<DiniGate> {
    gamma_schedule(k, t)?;
    if !(quad_tol > 0.0) {
        return Err(invalid("quadrature tolerance must be positive"));
    }
    if phi(0.0) != 0.0 {
        return Err(Error::HypothesisViolation(format!("modulus at 0 is {}, expected 0", phi(0.0))));
    }
    let (drop, at) = psi_monotonicity(phi.as_ref());
    if !(drop < 0.0) {
        return Err(Error::HypothesisViolation(format!(
            "psi(r) = r^2/phi(r)^2 is not strictly increasing near r = {at:e}"
        )));
    }
    let mut gate = DiniGate { phi, k, t, c1: 0.0, refinements: Vec::new() };
    for level in 0..3 {
        let tol = quad_tol * 100f64.powi(2 - level);
        gate.refinements.push(gate.integral(t, tol)?);
    }
    let mut c1: f64 = 0.0;
    for frac in [0.125, 0.25, 0.5, 1.0] {
        c1 = c1.max(gate.integral(t * frac, quad_tol)?);
    }
    gate.c1 = c1;
    Ok(gate)
}

impl DiniGate {
    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn psi(&self, r: f64) -> f64 {
        psi(self.phi.as_ref(), r)
    }

    pub fn psi_inverse(&self, s: f64) -> Result<f64> {
        psi_inverse(self.phi.as_ref(), s)
    }

    /// `g_t(s)` for `0 <= s < t`.
    pub fn g(&self, t: f64, s: f64) -> Result<f64> {
        let gs = gamma_schedule(self.k, t)?;
        self.g_of_gamma(gs.gamma(s))
    }

    fn g_of_gamma(&self, gamma: f64) -> Result<f64> {
        let r = self.psi_inverse(2.0 * self.k * gamma)?;
        let p = (self.phi)(r);
        Ok(self.k * p * p / gamma)
    }

    /// `int_0^t g_t(s) ds`, integrated in `w = ln(t / (t - s))` where the
    /// integrand stays bounded.
    pub fn integral(&self, t: f64, tol: f64) -> Result<f64> {
        let k = self.k;
        let integrand = |w: f64| {
            let u = t * (-w).exp();
            let gamma = -(-k * u).exp_m1() / k;
            match self.g_of_gamma(gamma) {
                Ok(g) => g * u,
                Err(_) => f64::NAN,
            }
        };
        let q = integrate_pieces(&integrand, &W_BREAKS, tol, 8);
        if !q.value.is_finite() {
            return Err(Error::ModelEvaluation { what: "Dini gate integrand", location: format!("t = {t}") });
        }
        Ok(q.value)
    }

    /// Largest relative change between consecutive refinement levels.
    pub fn refinement_change(&self) -> f64 {
        self.refinements
            .windows(2)
            .map(|w| ((w[1] - w[0]) / w[1]).abs())
            .fold(0.0, f64::max)
    }
}

/// `log^{-theta}(e + 1/r)`, with value 0 at `r = 0`.
pub fn log_modulus(theta: f64, scale: f64) -> Modulus {
    Arc::new(move |r: f64| {
        if r <= 0.0 {
            0.0
        } else {
            scale * (std::f64::consts::E + 1.0 / r).ln().powf(-theta)
        }
    })
}

/// `r^alpha`.
pub fn power_modulus(alpha: f64) -> Modulus {
    Arc::new(move |r: f64| if r <= 0.0 { 0.0 } else { r.powf(alpha) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psi_of_square_root_modulus_is_identity() {
        let phi = power_modulus(0.5);
        for r in [1e-9, 0.3, 7.0] {
            assert!((psi(phi.as_ref(), r) - r).abs() <= 1e-15 * r.max(1.0));
            let back = psi_inverse(phi.as_ref(), r).unwrap();
            assert!(((back - r) / r).abs() < 1e-12);
        }
    }

    #[test]
    fn lipschitz_modulus_is_rejected() {
        match dini_gate(power_modulus(1.0), 1.0, 1.0, 1e-10) {
            Err(Error::HypothesisViolation(_)) => {}
            other => panic!("expected hypothesis violation, got {other:?}"),
        }
    }

    #[test]
    fn square_root_gate_integral_matches_closed_form() {
        for (k, t) in [(1.0, 1.0), (2.0, 0.5), (0.7, 3.0)] {
            let gate = dini_gate(power_modulus(0.5), k, t, 1e-12).unwrap();
            let want = 2.0 * k * k * t;
            assert!(((gate.integral(t, 1e-12).unwrap() - want) / want).abs() < 1e-8);
            assert!(((gate.c1 - want) / want).abs() < 1e-8);
        }
    }

    #[test]
    fn gate_is_constant_for_square_root_modulus() {
        let gate = dini_gate(power_modulus(0.5), 1.5, 1.0, 1e-10).unwrap();
        for s in [0.0, 0.4, 0.99] {
            assert!((gate.g(1.0, s).unwrap() - 2.0 * 1.5 * 1.5).abs() < 1e-9);
        }
    }

    #[test]
    fn log_modulus_dini_behaviour() {
        let conv = dini_integral(log_modulus(1.5, 1.0).as_ref(), 1e-12).unwrap();
        assert!(!conv.divergent, "exponent {}", conv.decay_exponent);
        let div = dini_integral(log_modulus(0.5, 1.0).as_ref(), 1e-12).unwrap();
        assert!(div.divergent, "exponent {}", div.decay_exponent);
        let last = div.partial.len() - 1;
        assert!(div.partial.windows(2).all(|w| w[1].1 > w[0].1));
        assert!(div.partial[last].1 > 2.0 * div.partial[0].1);
    }
}
