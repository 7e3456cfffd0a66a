use mvlab_core::coupling::{coupled_batch, coupled_simulate, coupling_success, gamma::gamma_schedule, CouplingSetup};
use mvlab_core::model_zoo::{self, ModelSpec};
use mvlab_core::numerics::{integrate, mean_se};
use mvlab_core::particle::SimOptions;
use mvlab_core::verify::ou_oracle;
use mvlab_core::TimeGrid;

fn setup<'a>(m: &'a ModelSpec, grid: &'a TimeGrid, x: f64, y: f64) -> CouplingSetup<'a> {
    CouplingSetup { model: m, x: vec![x], y: vec![y], t: grid.t1(), grid, flow: None, opts: SimOptions::default() }
}

#[test]
fn girsanov_weight_has_mean_one() {
    let grid = TimeGrid::with_step(0.0, 1.0, 1e-2).unwrap();
    for m in [model_zoo::ou(1.0, 1.0).unwrap(), model_zoo::dini_sigma(1.5, 0.5).unwrap()] {
        let b = coupled_batch(&setup(&m, &grid, 0.0, 1.0), 4000, 21).unwrap();
        let (mean, se) = mean_se(&b.weights());
        assert!((mean - 1.0).abs() < 3.0 * se, "{}: {mean} +- {se}", m.id);
    }
}

#[test]
fn reweighted_y_has_the_law_started_at_y() {
    let m = model_zoo::ou(1.0, 1.0).unwrap();
    let grid = TimeGrid::with_step(0.0, 1.0, 1e-2).unwrap();
    let b = coupled_batch(&setup(&m, &grid, 0.0, 0.5), 20_000, 8).unwrap();
    let w = b.weights();
    let total: f64 = w.iter().sum();
    let ess = total * total / w.iter().map(|v| v * v).sum::<f64>();
    let (mean, var) = ou_oracle(1.0, 1.0, b.stop_time, 0.5);
    let wmean = w.iter().zip(&b.y_end).map(|(w, y)| w * y).sum::<f64>() / total;
    assert!((wmean - mean).abs() < 4.0 * (var / ess).sqrt(), "{wmean} vs {mean}, ess {ess}");
    let wvar = w.iter().zip(&b.y_end).map(|(w, y)| w * (y - mean).powi(2)).sum::<f64>() / total;
    assert!((wvar - var).abs() < 4.0 * var * (2.0 / ess).sqrt(), "{wvar} vs {var}");
}

/// `int_0^t g^2 / gamma^2` for the OU gap `g' = -theta g - g / gamma`, `g(0) = delta`.
fn ou_gap_energy(theta: f64, k: f64, t: f64, delta: f64) -> f64 {
    let sched = gamma_schedule(k, t).unwrap();
    // int 1/gamma = log(a / (1 - a)) with a = e^{K(r - t)}
    let primitive = |r: f64| {
        let a = (k * (r - t)).exp();
        (a / -(k * (r - t)).exp_m1()).ln()
    };
    let g = |s: f64| delta * (-theta * s - (primitive(s) - primitive(0.0))).exp();
    integrate(&|s: f64| (g(s) / sched.gamma(s)).powi(2), 0.0, t * (1.0 - 1e-9), 1e-12, 20).value
}

#[test]
fn ou_gap_energy_matches_its_ode() {
    let m = model_zoo::ou(1.0, 1.0).unwrap();
    let exact = ou_gap_energy(1.0, m.constants.k, 1.0, 1.0);
    let mut errs = Vec::new();
    for dt in [1e-2, 1e-3, 1e-4] {
        let grid = TimeGrid::with_step(0.0, 1.0, dt).unwrap();
        let run = coupled_simulate(&setup(&m, &grid, 0.0, 1.0), 1).unwrap();
        errs.push((run.summary.gap_energy - exact).abs() / exact);
    }
    assert!(errs[2] < 1e-2, "{errs:?}");
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
}

#[test]
fn exponential_moment_grows_with_the_gap() {
    let m = model_zoo::dini_sigma(1.5, 0.5).unwrap();
    let grid = TimeGrid::with_step(0.0, 1.0, 1e-3).unwrap();
    let mut last = 1.0;
    for y in [0.25, 0.5, 1.0] {
        let b = coupled_batch(&setup(&m, &grid, 0.0, y), 500, 2).unwrap();
        let s = coupling_success(&b.runs, m.constants.k, 1e-2).unwrap();
        assert!(s.exp_moment.is_finite() && s.exp_moment > last, "{y}: {s:?}");
        assert!(!s.any_truncated);
        last = s.exp_moment;
    }
}
