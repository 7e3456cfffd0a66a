use crate::error::{invalid, Result};

/// The schedule `gamma_s = (1 - e^{K(s-t)}) / K` on `[0, t]`, which vanishes
/// at `s = t` and satisfies `K gamma - 2 - gamma' = -1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaSchedule {
    k: f64,
    t: f64,
}

pub fn gamma_schedule(k: f64, t: f64) -> Result<GammaSchedule> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(invalid(format!("gamma schedule needs K > 0, got {k}")));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(format!("gamma schedule needs t > 0, got {t}")));
    }
    Ok(GammaSchedule { k, t })
}

impl GammaSchedule {
    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn gamma(&self, s: f64) -> f64 {
        -(self.k * (s - self.t)).exp_m1() / self.k
    }

    pub fn gamma_prime(&self, s: f64) -> f64 {
        -(self.k * (s - self.t)).exp()
    }

    /// `K gamma_s - 2 - gamma'_s + 1`, zero up to rounding.
    pub fn identity_residual(&self, s: f64) -> f64 {
        self.k * self.gamma(s) - 2.0 - self.gamma_prime(s) + 1.0
    }

    /// A constant `K1` with `(t - s) / K1 <= gamma_s <= K1 (t - s)` on `[0, t]`.
    pub fn k1(&self) -> f64 {
        (self.k * self.t).exp().max(1.0) * 1.01
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vanishes_at_terminal_time() {
        let g = gamma_schedule(1.3, 0.7).unwrap();
        assert_eq!(g.gamma(0.7), 0.0);
        assert!(g.gamma(0.0) > 0.0);
    }

    #[test]
    fn unit_example() {
        let g = gamma_schedule(1.0, 1.0).unwrap();
        assert!((g.gamma(0.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((g.gamma(0.0) - 0.632_120_558_828_557_7).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(gamma_schedule(0.0, 1.0).is_err());
        assert!(gamma_schedule(1.0, -1.0).is_err());
    }
}
