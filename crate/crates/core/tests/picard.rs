use mvlab_core::model_zoo;
use mvlab_core::particle::{simulate_interacting, InitLaw, MeasureFlow, SimOptions};
use mvlab_core::picard::{node_boxes, picard_solve, rho_lambda, Binning, PicardConfig};
use mvlab_core::TimeGrid;
use proptest::prelude::*;

fn quadratic(x: &[f64]) -> f64 {
    1.0 + x[0] * x[0]
}

fn flow(seed: u64, mean: f64, n: usize) -> MeasureFlow {
    let m = model_zoo::linear_mean_field(0.5).unwrap();
    let grid = TimeGrid::uniform(0.0, 0.5, 10).unwrap();
    simulate_interacting(&m, n, &InitLaw::Gaussian { mean: vec![mean], sd: 0.5 }, &grid, seed, &SimOptions::default())
        .unwrap()
        .flow
}

#[test]
fn contraction_ratio_shrinks_with_lambda() {
    let m = model_zoo::linear_mean_field(0.5).unwrap();
    let grid = TimeGrid::with_step(0.0, 1.0, 2e-2).unwrap();
    let init = InitLaw::Gaussian { mean: vec![1.0], sd: 0.5 }.sample(3000, 2).unwrap();
    let mut worst = Vec::new();
    for lambda in [1.0, 5.0, 20.0] {
        let cfg = PicardConfig { lambda, tol: 1e-12, max_iter: 4, ..Default::default() };
        let (_, diag) = picard_solve(&m, &init, &grid, &cfg, 7).unwrap();
        let r = diag.ratios.iter().flatten().copied().fold(0.0, f64::max);
        assert!(r < 1.0, "lambda {lambda}: {diag:?}");
        worst.push(r);
    }
    assert!(worst.windows(2).all(|w| w[1] < w[0]), "{worst:?}");
}

#[test]
fn fixed_point_mean_follows_its_ode() {
    // m' = (kappa - 1) m for the linear attraction to the mean
    let kappa = 0.5;
    let m = model_zoo::linear_mean_field(kappa).unwrap();
    let grid = TimeGrid::with_step(0.0, 1.0, 1e-2).unwrap();
    let init = InitLaw::Dirac(vec![1.0]).sample(4000, 3).unwrap();
    let (fixed, diag) = picard_solve(&m, &init, &grid, &PicardConfig::default(), 3).unwrap();
    assert!(diag.converged, "{diag:?}");
    let pts = fixed.terminal().points();
    let (mean, se) = mvlab_core::numerics::mean_se(pts);
    let exact = (kappa - 1.0f64).exp();
    assert!((mean - exact).abs() < 4.0 * se + 1e-2, "{mean} +- {se} vs {exact}");
}

#[test]
fn diagnostics_csv_leaves_first_ratio_blank() {
    let m = model_zoo::linear_mean_field(0.5).unwrap();
    let grid = TimeGrid::uniform(0.0, 0.5, 10).unwrap();
    let init = InitLaw::Dirac(vec![0.5]).sample(200, 1).unwrap();
    let cfg = PicardConfig { tol: 1e-12, max_iter: 3, ..Default::default() };
    let (_, diag) = picard_solve(&m, &init, &grid, &cfg, 1).unwrap();
    let mut buf = Vec::new();
    diag.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iteration,rho_lambda,ratio");
    assert!(lines[1].ends_with(','));
    assert_eq!(lines.len(), 1 + diag.iterations);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn rho_lambda_is_a_metric_on_shared_boxes(s in 0u64..1000, shift in -1.0f64..1.0, lambda in 0.0f64..10.0) {
        let a = flow(s, 0.0, 300);
        let b = flow(s + 1, shift, 300);
        let c = flow(s + 2, -shift, 300);
        let bins = Binning::Fixed(node_boxes(&[&a, &b, &c], 32).unwrap());
        let d = |x: &MeasureFlow, y: &MeasureFlow| rho_lambda(x, y, lambda, &quadratic, &bins).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
    }

    #[test]
    fn rho_lambda_is_nonincreasing_in_lambda(s in 0u64..1000, l1 in 0.0f64..10.0, dl in 0.0f64..10.0) {
        let a = flow(s, 0.0, 200);
        let b = flow(s + 1, 0.3, 200);
        let bins = Binning::Pooled { resolution: 32 };
        let lo = rho_lambda(&a, &b, l1 + dl, &quadratic, &bins).unwrap();
        let hi = rho_lambda(&a, &b, l1, &quadratic, &bins).unwrap();
        prop_assert!(lo <= hi);
    }
}
