use mvlab_core::metrics::{
    hungarian, transport, wasserstein_1d, wasserstein_lp, wasserstein_sorted, weighted_variation_discrete, DiscreteMeasure,
};
use proptest::prelude::*;

fn cloud() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, 12)
}

fn v(x: &[f64]) -> f64 {
    1.0 + x[0] * x[0]
}

/// `||mu - nu||_V` as transport with cost `(V(x) + V(y)) 1{x != y}`.
fn variation_by_transport(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    let (n, m) = (mu.len(), nu.len());
    let cost: Vec<f64> = (0..n * m)
        .map(|c| {
            let (a, b) = (mu.atom(c / m), nu.atom(c % m));
            if a == b {
                0.0
            } else {
                v(a) + v(b)
            }
        })
        .collect();
    transport(mu.masses(), nu.masses(), &cost).unwrap().cost
}

#[test]
fn two_atom_variation_matches_closed_form_and_lp() {
    for x in [0.3, -1.0, 2.5, 10.0] {
        let mu = DiscreteMeasure::dirac(&[0.0]);
        let nu = DiscreteMeasure::dirac(&[x]);
        let closed = v(&[0.0]) + v(&[x]);
        let got = weighted_variation_discrete(&mu, &nu, &v).unwrap();
        assert!((got - closed).abs() < 1e-9);
        assert!((variation_by_transport(&mu, &nu) - closed).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sorted_matching_agrees_with_lp(a in cloud(), b in cloud()) {
        let mu = DiscreteMeasure::uniform(1, a.clone()).unwrap();
        let nu = DiscreteMeasure::uniform(1, b.clone()).unwrap();
        let lp = wasserstein_lp(&mu, &nu, 2.0, 1 << 20).unwrap();
        prop_assert!((wasserstein_sorted(&a, &b, 2.0).unwrap() - lp).abs() < 1e-9);
        prop_assert!((wasserstein_1d(&mu, &nu, 2.0).unwrap() - lp).abs() < 1e-9);
    }

    #[test]
    fn hungarian_agrees_with_lp(a in cloud(), b in cloud()) {
        let n = a.len();
        let cost: Vec<f64> = (0..n * n).map(|c| (a[c / n] - b[c % n]).abs()).collect();
        let (assign, total) = hungarian(n, &cost);
        let w = vec![1.0 / n as f64; n];
        let lp = transport(&w, &w, &cost).unwrap().cost;
        prop_assert!((total / n as f64 - lp).abs() < 1e-9);
        let mut seen = assign.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn wasserstein_metric_axioms(a in cloud(), b in cloud(), c in cloud(), k in 1.0f64..3.0) {
        let w = |x: &[f64], y: &[f64]| wasserstein_sorted(x, y, k).unwrap();
        prop_assert_eq!(w(&a, &a), 0.0);
        prop_assert_eq!(w(&a, &b), w(&b, &a));
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-9);
    }

    #[test]
    fn weighted_variation_matches_transport(
        a in prop::collection::vec(-3i32..3, 1..6),
        b in prop::collection::vec(-3i32..3, 1..6),
    ) {
        // integer atoms so coinciding atoms are exact
        let mu = DiscreteMeasure::uniform(1, a.iter().map(|&x| x as f64).collect()).unwrap();
        let nu = DiscreteMeasure::uniform(1, b.iter().map(|&x| x as f64).collect()).unwrap();
        let got = weighted_variation_discrete(&mu, &nu, &v).unwrap();
        prop_assert!((got - variation_by_transport(&mu, &nu)).abs() < 1e-9);
        prop_assert!(got >= weighted_variation_discrete(&mu, &nu, &|_| 1.0).unwrap() - 1e-12);
    }
}
