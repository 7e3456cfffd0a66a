use mvlab_core::model_zoo;
use mvlab_core::particle::ParticleCloud;
use mvlab_core::verify::{
    gaussian_expectation, grr_check, harnack_check, harnack_distribution_check, moment_stability, ou_oracle, stability_check,
    standard_functions, GrrConfig, HarnackConfig, HarnackEndpoints, McConfig, MomentConfig, StabilityConfig,
};

/// For OU the Harnack exponent is `p |e^{-theta t}(x - y)|^2 / (2 (p - 1) var_t)`.
fn ou_exponent(theta: f64, s: f64, t: f64, delta: f64, p: f64) -> f64 {
    let (_, var) = ou_oracle(theta, s, t, 0.0);
    p * (delta * (-theta * t).exp()).powi(2) / (2.0 * (p - 1.0) * var)
}

#[test]
fn gaussian_oracle_respects_the_ou_harnack_exponent() {
    for f in standard_functions() {
        for (t, delta, p) in [(0.25, 0.5, 2.0), (1.0, 1.0, 2.0), (1.0, 2.0, 4.0), (0.25, 2.0, 4.0)] {
            let (my, vy) = ou_oracle(1.0, 1.0, t, 0.5 * delta);
            let (mx, vx) = ou_oracle(1.0, 1.0, t, -0.5 * delta);
            let lhs = gaussian_expectation(&|z| (f.f)(z), my, vy).abs().powf(p);
            let rhs = gaussian_expectation(&|z| (f.f)(z).abs().powf(p), mx, vx);
            assert!(lhs <= rhs * ou_exponent(1.0, 1.0, t, delta, p).exp() * (1.0 + 1e-10), "{} t {t} d {delta} p {p}", f.name);
        }
    }
}

#[test]
fn monte_carlo_ou_cases_stay_under_the_exact_exponent() {
    let m = model_zoo::ou(1.0, 1.0).unwrap();
    let cfg = HarnackConfig { mc: McConfig { n: 4000, dt: 1e-2, ..Default::default() }, ..Default::default() };
    for (t, delta) in [(0.25, 1.0), (1.0, 2.0)] {
        let reps = harnack_check(&m, &HarnackEndpoints::symmetric(1, delta), t, &standard_functions(), &cfg, 4).unwrap();
        assert_eq!(reps.len(), 6);
        for r in reps.iter().filter(|r| !r.inconclusive) {
            assert!(r.lhs.lo <= r.rhs.hi * ou_exponent(1.0, 1.0, t, delta, r.p).exp(), "{r:?}");
            assert!(r.oracle_agrees(4.0).unwrap(), "{r:?}");
        }
    }
}

#[test]
fn distribution_form_with_equal_laws_holds_at_zero_constant() {
    let m = model_zoo::dini_sigma(1.5, 0.5).unwrap();
    let mu = ParticleCloud::uniform(1, vec![-0.5, 0.0, 0.5]).unwrap();
    let cfg = HarnackConfig { mc: McConfig { n: 3000, dt: 1e-2, ..Default::default() }, ..Default::default() };
    let reps = harnack_distribution_check(&m, &mu, &mu, 0.5, 0.0, &standard_functions(), &cfg, 2).unwrap();
    assert!(reps.iter().all(|r| r.holds_with(0.0)), "{reps:?}");
}

#[test]
fn moment_constants_are_stable_on_ou() {
    let m = model_zoo::ou(1.0, 1.0).unwrap();
    let atoms = vec![vec![-2.0], vec![0.0], vec![2.0]];
    let cfg = MomentConfig { mc: McConfig { n: 3000, dt: 2e-2, ..Default::default() }, ..Default::default() };
    let s = moment_stability(&m, &atoms, &cfg, 6).unwrap();
    assert!(s.max_relative_change < 0.1, "{s:?}");
    assert_eq!(s.max_truncated_fraction, 0.0);
    assert!(s.base.iter().all(|r| r.c.is_finite() && r.c > 0.0));
}

#[test]
fn dirac_sequence_reaches_the_noise_floor() {
    let m = model_zoo::ou(1.0, 1.0).unwrap();
    let seq: Vec<ParticleCloud> = [1, 2, 4, 8, 16, 32].iter().map(|&n| ParticleCloud::dirac(&[1.0 / n as f64], 1).unwrap()).collect();
    let limit = ParticleCloud::dirac(&[0.0], 1).unwrap();
    let cfg = StabilityConfig { mc: McConfig { n: 4000, dt: 1e-2, ..Default::default() }, resolution: 64, ..Default::default() };
    let r = stability_check(&m, &seq, &limit, &cfg, 3).unwrap();
    assert!(r.pass, "{r:?}");
    assert!(r.distances[0] > r.noise_floor);
}

#[test]
fn small_tv_wasserstein_battery_runs() {
    let m = model_zoo::bounded_mean_field(0.5).unwrap();
    let cfg = GrrConfig {
        mc: McConfig { n: 50_000, dt: 2e-2, ..Default::default() },
        ks: vec![1, 2, 3, 4],
        train: 2,
        replicates: 2,
        ..Default::default()
    };
    let r = grr_check(&m, &[0.0], &cfg, 1).unwrap();
    assert_eq!(r.cases.len(), 4);
    assert!(r.slope.value.is_finite() && r.c > 0.0, "{r:?}");
    // larger initial gaps give larger total variation
    assert!(r.cases[0].tv.value > r.cases[3].tv.value);
}
