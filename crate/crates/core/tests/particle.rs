use std::sync::Arc;

use mvlab_core::model_zoo::{self, ModelSpec};
use mvlab_core::numerics::{bootstrap_mean, linear_fit, mean_se, DEFAULT_RESAMPLES};
use mvlab_core::particle::{
    simulate_frozen, simulate_interacting, simulate_interacting_from, InitLaw, MeasureFlow, ParticleCloud, SimOptions,
};
use mvlab_core::{StreamKey, TimeGrid};
use proptest::prelude::*;

#[test]
fn ou_mean_decays_like_exp() {
    let m = model_zoo::ou(1.0, 1.0).unwrap();
    let grid = TimeGrid::with_step(0.0, 1.0, 1e-3).unwrap();
    let run = simulate_interacting(&m, 10_000, &InitLaw::Dirac(vec![1.0]), &grid, 11, &SimOptions::default()).unwrap();
    let est = bootstrap_mean(run.flow.terminal().points(), DEFAULT_RESAMPLES, StreamKey::new(11, 0, 2));
    let exact = (-1f64).exp();
    assert!((est.value - exact).abs() < 3.0 * est.se, "{est:?} vs {exact}");
}

#[test]
fn mean_reverting_interaction_conserves_the_mean() {
    let mut m = model_zoo::linear_mean_field(1.0).unwrap();
    m.drift_regular = Arc::new(|_t, x, mf, out: &mut [f64]| out[0] = -(x[0] - mf[0]));
    m.sigma = Arc::new(|_t, _x, out: &mut [f64]| out[0] = 0.0);
    let pts: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() * 3.0 + i as f64 * 0.01).collect();
    let init = ParticleCloud::uniform(1, pts).unwrap();
    let grid = TimeGrid::uniform(0.0, 2.0, 200).unwrap();
    let run = simulate_interacting_from(&m, &init, &grid, 1, &SimOptions::default()).unwrap();
    let m0 = init.mean()[0];
    for c in run.flow.clouds() {
        let direct: f64 = c.points().iter().sum::<f64>() / c.len() as f64;
        assert!((direct - m0).abs() < 1e-10, "{direct} vs {m0}");
    }
}

#[test]
fn two_still_particles_stay_put() {
    let mut m = model_zoo::ou(1.0, 1.0).unwrap();
    m.drift_regular = Arc::new(|_t, _x, _mf, out: &mut [f64]| out[0] = 0.0);
    m.sigma = Arc::new(|_t, _x, out: &mut [f64]| out[0] = 0.0);
    let init = ParticleCloud::uniform(1, vec![-0.5, 0.25]).unwrap();
    let grid = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
    let run = simulate_interacting_from(&m, &init, &grid, 1, &SimOptions::default()).unwrap();
    assert!(run.flow.clouds().iter().all(|c| c == &init));
}

#[test]
fn frozen_replay_of_interacting_flow_is_identical() {
    for model in [model_zoo::mean_field(0.5).unwrap(), model_zoo::linear_mean_field(0.5).unwrap()] {
        let grid = TimeGrid::with_step(0.0, 1.0, 1e-2).unwrap();
        let init = InitLaw::Gaussian { mean: vec![0.5], sd: 1.0 }.sample(500, 4).unwrap();
        let run = simulate_interacting_from(&model, &init, &grid, 4, &SimOptions::default()).unwrap();
        let ens = simulate_frozen(&model, &run.flow, &init, &grid, 4, &SimOptions::default()).unwrap();
        for (k, cloud) in run.flow.clouds().iter().enumerate() {
            for i in 0..cloud.len() {
                assert!((ens.state(i, k)[0] - cloud.point(i)[0]).abs() <= 1e-12);
            }
        }
    }
}

/// Exact OU transition driven by the same normals as the Euler scheme.
fn exact_ou_second_moment_bias(theta: f64, x0: f64, dt: f64, n: usize, seed: u64) -> (f64, f64) {
    let m: ModelSpec = model_zoo::ou(theta, 1.0).unwrap();
    let grid = TimeGrid::with_step(0.0, 1.0, dt).unwrap();
    let init = ParticleCloud::dirac(&[x0], n).unwrap();
    let flow = MeasureFlow::constant(grid.clone(), init.clone());
    let ens = simulate_frozen(&m, &flow, &init, &grid, seed, &SimOptions::default()).unwrap();
    let a = (-theta * dt).exp();
    let b = ((1.0 - a * a) / (2.0 * theta)).sqrt();
    let diffs: Vec<f64> = (0..n)
        .map(|i| {
            let mut z = StreamKey::noise(seed, i as u64).normals();
            let mut y = x0;
            for _ in 0..grid.n_steps() {
                y = a * y + b * z.next_standard();
            }
            let x = ens.state(i, grid.n_steps())[0];
            x * x - y * y
        })
        .collect();
    mean_se(&diffs)
}

#[test]
fn euler_second_moment_has_weak_order_one() {
    let dts = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for &dt in &dts {
        let (bias, se) = exact_ou_second_moment_bias(1.0, 1.0, dt, 4000, 21);
        assert!(bias.abs() > 3.0 * se, "bias {bias} not resolved at dt {dt} (se {se})");
        lx.push(dt.ln());
        ly.push(bias.abs().ln());
    }
    let fit = linear_fit(&lx, &ly);
    assert!((fit.slope - 1.0).abs() <= 0.3, "slope {}", fit.slope);
}

#[test]
fn result_independent_of_thread_count() {
    let m = model_zoo::mean_field(0.5).unwrap();
    let grid = TimeGrid::with_step(0.0, 0.5, 1e-2).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            simulate_interacting(&m, 2000, &InitLaw::Gaussian { mean: vec![0.0], sd: 1.0 }, &grid, 5, &SimOptions::default())
                .unwrap()
        })
    };
    assert_eq!(run(1).flow, run(4).flow);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn uniform_clouds_are_normalized(pts in prop::collection::vec(-1e3f64..1e3, 1..500)) {
        let c = ParticleCloud::uniform(1, pts).unwrap();
        prop_assert!((c.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!((c.integral(&|_: &[f64]| 1.0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn same_seed_same_paths(seed in 0u64..1000, x0 in -3.0f64..3.0) {
        let m = model_zoo::dini_sigma(1.5, 0.5).unwrap();
        let grid = TimeGrid::uniform(0.0, 0.2, 20).unwrap();
        let init = ParticleCloud::dirac(&[x0], 8).unwrap();
        let flow = MeasureFlow::constant(grid.clone(), init.clone());
        let a = simulate_frozen(&m, &flow, &init, &grid, seed, &SimOptions::default()).unwrap();
        let b = simulate_frozen(&m, &flow, &init, &grid, seed, &SimOptions::default()).unwrap();
        prop_assert_eq!(a, b);
    }
}
