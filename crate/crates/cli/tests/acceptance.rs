//! Acceptance criteria, one test each. Every test prints a single
//! `criterion N ... PASS|FAIL` line to stderr (uncaptured) with its metrics.
//! A mutex serializes them so runtimes are measured without contention.

use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use mvlab_cli::{run_experiment, CheckOutcome, ExperimentConfig};

static SERIAL: Mutex<()> = Mutex::new(());

struct Run {
    outcome: CheckOutcome,
    elapsed: Duration,
}

fn run_one(config: &str) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::parse(config).unwrap();
    cfg.out = dir.path().to_path_buf();
    let start = Instant::now();
    let mut report = run_experiment(&cfg, false).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(report.outcomes.len(), 1);
    Run { outcome: report.outcomes.remove(0), elapsed }
}

fn metric(r: &Run, name: &str) -> f64 {
    *r.outcome.metrics.get(name).unwrap_or(&f64::NAN)
}

/// Print the criterion line and fail the test when it does not hold.
fn report(number: u32, title: &str, pass: bool, elapsed: Duration, limit: Option<Duration>, detail: String) {
    let in_time = limit.is_none_or(|l| elapsed < l);
    let verdict = if pass && in_time { "PASS" } else { "FAIL" };
    let budget = limit.map(|l| format!(" (limit {:.0}s)", l.as_secs_f64())).unwrap_or_default();
    let line = format!("criterion {number:>2} {title}: {verdict} in {:.2}s{budget}; {detail}", elapsed.as_secs_f64());
    writeln!(std::io::stderr().lock(), "{line}").unwrap();
    assert!(pass && in_time, "{line}");
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn guard() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

#[test]
fn criterion_01_gamma_identity() {
    let _g = guard();
    let r = run_one("checks = gamma_identity\ngamma_identity.samples = 1000\ngamma_identity.tol = 1e-12\n");
    let detail = format!("max residual {:e}", metric(&r, "max_residual"));
    report(1, "gamma identity", r.outcome.pass, r.elapsed, secs(1), detail);
}

#[test]
fn criterion_02_dini_gate() {
    let _g = guard();
    let r = run_one("checks = dini_gate\n");
    let detail = format!(
        "sqrt modulus rel err {:e}, theta 1.5 refinement change {:e}, decay exponents 1.5 -> {:.3}, 0.5 -> {:.3}",
        metric(&r, "sqrt_relative_error"),
        metric(&r, "log_refinement_change"),
        metric(&r, "decay_exponent_theta_1.5"),
        metric(&r, "decay_exponent_theta_0.5"),
    );
    report(2, "Dini gate", r.outcome.pass, r.elapsed, secs(5), detail);
}

#[test]
fn criterion_03_wasserstein() {
    let _g = guard();
    let r = run_one("checks = wasserstein\nwasserstein.pairs = 100\nwasserstein.n = 64\nwasserstein.tol = 1e-9\n");
    let detail = format!(
        "max |sorted - LP| {:e}, symmetry violations {}, max triangle excess {:e}",
        metric(&r, "max_sorted_lp_gap"),
        metric(&r, "symmetry_violations"),
        metric(&r, "max_triangle_excess"),
    );
    report(3, "Wasserstein correctness", r.outcome.pass, r.elapsed, secs(30), detail);
}

#[test]
fn criterion_04_weighted_variation() {
    let _g = guard();
    let r = run_one("checks = weighted_variation\nweighted_variation.tol = 1e-9\n");
    let detail = format!("max error {:e}", metric(&r, "max_error"));
    report(4, "weighted-variation duality", r.outcome.pass, r.elapsed, None, detail);
}

#[test]
fn criterion_05_ou_oracle() {
    let _g = guard();
    let r = run_one("checks = ou_oracle\nou_oracle.n = 10000\nou_oracle.dt = 1e-3\nou_oracle.t = 1\nou_oracle.weak_dts = 1e-1, 1e-2, 1e-3\n");
    let detail = format!(
        "mean z {:.2}, variance z {:.2}, weak order slope {:.3}",
        metric(&r, "mean_z"),
        metric(&r, "variance_z"),
        metric(&r, "weak_order_slope"),
    );
    report(5, "OU oracle gate", r.outcome.pass, r.elapsed, secs(120), detail);
}

#[test]
fn criterion_06_picard() {
    let _g = guard();
    let r = run_one("checks = picard\npicard.lambda = 20\npicard.t = 1\npicard.n = 10000\n");
    let detail = format!(
        "iterations {}, max ratio from iteration 2 {:.3}, terminal W2 {:.4} vs 3 x null scale {:.4}",
        metric(&r, "iterations"),
        metric(&r, "max_ratio"),
        metric(&r, "terminal_w2"),
        3.0 * metric(&r, "w2_null_scale"),
    );
    report(6, "Picard contraction", r.outcome.pass, r.elapsed, secs(300), detail);
}

#[test]
fn criterion_07_girsanov() {
    let _g = guard();
    let r = run_one("checks = girsanov\ngirsanov.runs = 10000\n");
    let detail = format!(
        "mean R: ou {:.4} +- {:.4}, dini_sigma {:.4} +- {:.4}",
        metric(&r, "ou_mean_R"),
        metric(&r, "ou_se"),
        metric(&r, "dini_sigma_mean_R"),
        metric(&r, "dini_sigma_se"),
    );
    report(7, "Girsanov martingale", r.outcome.pass, r.elapsed, secs(180), detail);
}

#[test]
fn criterion_08_coupling_trend() {
    let _g = guard();
    let r = run_one("checks = coupling_trend\ncoupling_trend.runs = 10000\ncoupling_trend.dts = 1e-2, 1e-3, 1e-4\ncoupling_trend.delta = 1e-2\n");
    let mut parts = Vec::new();
    for m in ["ou", "dini_sigma"] {
        let miss: Vec<String> = ["1e-2", "1e-3", "1e-4"].iter().map(|h| format!("{}", metric(&r, &format!("{m}_miss_dt_{h}")))).collect();
        let gap: Vec<String> = ["1e-2", "1e-3", "1e-4"].iter().map(|h| format!("{:.1e}", metric(&r, &format!("{m}_max_gap_dt_{h}")))).collect();
        parts.push(format!("{m} miss [{}] max gap [{}]", miss.join(", "), gap.join(", ")));
    }
    report(8, "coupling meeting trend", r.outcome.pass, r.elapsed, secs(600), parts.join("; "));
}

#[test]
fn criterion_09_harnack() {
    let _g = guard();
    let r = run_one("checks = harnack\nharnack.n = 10000\nharnack.dt = 1e-3\n");
    let detail = format!(
        "fitted c {:.3}, held-out pass rate {:.3}, inconclusive {}, oracle consistent {} (z {:.2})",
        metric(&r, "c"),
        metric(&r, "pass_rate"),
        metric(&r, "inconclusive"),
        metric(&r, "oracle_consistent"),
        metric(&r, "oracle_z"),
    );
    report(9, "power Harnack", r.outcome.pass, r.elapsed, secs(600), detail);
}

#[test]
fn criterion_10_grr() {
    let _g = guard();
    let r = run_one("checks = grr\ngrr.ks = 1, 2, 3, 4, 5, 6\n");
    let detail = format!(
        "slope {:.3} +- {:.3}, fitted c {:.3}, held out within bound {}",
        metric(&r, "slope"),
        metric(&r, "slope_se"),
        metric(&r, "c"),
        metric(&r, "held_out_within_bound"),
    );
    report(10, "TV-W2 scaling", r.outcome.pass, r.elapsed, secs(600), detail);
}

#[test]
fn criterion_11_moment() {
    let _g = guard();
    let r = run_one("checks = moment\nmoment.powers = 1, 2\nmoment.n = 10000\n");
    let detail = format!(
        "max relative change ou {:.4}, cubic {:.4}; truncated ou {}, cubic {}",
        metric(&r, "ou_max_relative_change"),
        metric(&r, "cubic_max_relative_change"),
        metric(&r, "ou_max_truncated_fraction"),
        metric(&r, "cubic_max_truncated_fraction"),
    );
    report(11, "moment bound", r.outcome.pass, r.elapsed, None, detail);
}

#[test]
fn criterion_12_stability() {
    let _g = guard();
    let r = run_one("checks = stability\nstability.n = 10000\nstability.max_n = 32\n");
    let detail = format!("final distance {:.4}, noise floor {:.4}", metric(&r, "final_distance"), metric(&r, "noise_floor"));
    report(12, "stability", r.outcome.pass, r.elapsed, None, detail);
}

#[test]
fn criterion_13_reproducibility() {
    let _g = guard();
    // every check; the two heaviest run at reduced size
    let config = "checks = gamma_identity, dini_gate, wasserstein, weighted_variation, ou_oracle, picard, girsanov, \
                  coupling_trend, harnack, grr, moment, stability, hypotheses\n\
                  coupling_trend.runs = 2000\ncoupling_trend.dts = 1e-2, 1e-3\ngrr.n = 100000\n";
    let start = Instant::now();
    let mut bodies = Vec::new();
    for threads in [1, 4, 4] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::parse(config).unwrap();
        cfg.out = dir.path().to_path_buf();
        cfg.threads = Some(threads);
        run_experiment(&cfg, false).unwrap();
        bodies.push(std::fs::read(dir.path().join("results.csv")).unwrap());
    }
    let rows = bodies[0].iter().filter(|&&b| b == b'\n').count() - 1;
    let same_threads = bodies[1] == bodies[2];
    let across = bodies[0] == bodies[1];
    let detail = format!("{rows} rows; 1 vs 4 threads identical {across}; rerun identical {same_threads}");
    report(13, "reproducibility", across && same_threads && rows > 0, start.elapsed(), None, detail);
}
