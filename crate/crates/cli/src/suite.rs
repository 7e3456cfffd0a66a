//! Named checks. Each turns the experiment config into result rows, summary
//! metrics and a pass/fail verdict.

use std::collections::BTreeMap;

use mvlab_core::coupling::{
    coupled_batch, coupling_success, dini::log_modulus, dini::power_modulus, dini_gate, dini_integral, gamma_schedule,
    CouplingSetup,
};
use mvlab_core::metrics::{
    transport, wasserstein, wasserstein_lp, wasserstein_null_scale, wasserstein_sorted, weighted_variation_discrete,
    DiscreteMeasure,
};
use mvlab_core::model_zoo::{self, verify_hypotheses, HypothesisGrid, ModelSpec};
use mvlab_core::numerics::{bootstrap_mean, bootstrap_replicates, linear_fit, mean_se, summarize, DEFAULT_RESAMPLES};
use mvlab_core::particle::{simulate_interacting, simulate_interacting_from, InitLaw, MeasureFlow, ParticleCloud};
use mvlab_core::paths::substream;
use mvlab_core::picard::{picard_solve, PicardConfig};
use mvlab_core::verify::{
    grr_check, harnack_battery, moment_stability, ou_oracle, ou_weak_error, stability_check, standard_functions,
    terminal_cloud, GrrConfig, HarnackConfig, McConfig, MomentConfig, StabilityConfig,
};
use mvlab_core::{Error, StreamKey, TimeGrid};

use crate::config::{ExperimentConfig, Kind, Value};
use crate::error::Result;

/// One CSV line. Every row carries the seed, step size and ensemble size it
/// was produced with; the latter two are blank for checks that do not simulate.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub check: &'static str,
    pub case: String,
    pub param: Option<f64>,
    pub value: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub seed: u64,
    pub dt: Option<f64>,
    pub n: Option<usize>,
}

impl ResultRow {
    pub const HEADER: [&'static str; 9] = ["check", "case", "param", "value", "lo", "hi", "seed", "dt", "n"];

    pub fn record(&self) -> [String; 9] {
        let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
        [
            self.check.to_string(),
            self.case.clone(),
            opt(self.param),
            fmt_float(self.value),
            opt(self.lo),
            opt(self.hi),
            self.seed.to_string(),
            opt(self.dt),
            self.n.map(|n| n.to_string()).unwrap_or_default(),
        ]
    }

    fn at(mut self, param: f64) -> Self {
        self.param = Some(param);
        self
    }

    fn band(mut self, lo: f64, hi: f64) -> Self {
        self.lo = Some(lo);
        self.hi = Some(hi);
        self
    }
}

pub fn fmt_float(v: f64) -> String {
    format!("{v:e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub pass: bool,
    pub metrics: BTreeMap<String, f64>,
    pub rows: Vec<ResultRow>,
    /// Set when the check could not run to completion.
    pub error: Option<String>,
}

struct Outcome {
    pass: bool,
    metrics: BTreeMap<String, f64>,
    rows: Vec<ResultRow>,
}

impl Outcome {
    fn new() -> Self {
        Self { pass: true, metrics: BTreeMap::new(), rows: Vec::new() }
    }

    fn metric(&mut self, name: impl Into<String>, v: f64) {
        self.metrics.insert(name.into(), v);
    }

    fn require(&mut self, name: &str, ok: bool) {
        self.metric(name, if ok { 1.0 } else { 0.0 });
        self.pass &= ok;
    }
}

pub struct CheckDef {
    pub name: &'static str,
    pub description: &'static str,
    params: &'static [(&'static str, Kind)],
    run: fn(&Ctx<'_>) -> Result<Outcome>,
}

impl CheckDef {
    pub fn param_kind(&self, name: &str) -> Option<Kind> {
        self.params.iter().find(|(n, _)| *n == name).map(|p| p.1)
    }

    pub fn params(&self) -> impl Iterator<Item = &'static str> {
        self.params.iter().map(|p| p.0)
    }
}

use Kind::{Count, CountList, Float, FloatList, PositiveFloat};

pub static CHECKS: &[CheckDef] = &[
    CheckDef {
        name: "gamma_identity",
        description: "K gamma_s - 2 - gamma'_s = -1 at random (K, t, s)",
        params: &[("samples", Count), ("tol", PositiveFloat)],
        run: gamma_identity,
    },
    CheckDef {
        name: "dini_gate",
        description: "gate integral closed form, quadrature refinement and Dini divergence flag",
        params: &[("k", PositiveFloat), ("t", PositiveFloat), ("tol", PositiveFloat)],
        run: dini_gate_check,
    },
    CheckDef {
        name: "wasserstein",
        description: "sorted matching against the transport LP, and metric axioms",
        params: &[("pairs", Count), ("n", Count), ("tol", PositiveFloat)],
        run: wasserstein_check,
    },
    CheckDef {
        name: "weighted_variation",
        description: "two-atom ||.||_V against its closed form and a transport oracle",
        params: &[("atoms", FloatList), ("tol", PositiveFloat)],
        run: weighted_variation_check,
    },
    CheckDef {
        name: "ou_oracle",
        description: "OU ensemble moments against the closed form, and weak order of the scheme",
        params: &[
            ("n", Count),
            ("dt", PositiveFloat),
            ("t", PositiveFloat),
            ("x0", Float),
            ("weak_dts", FloatList),
            ("slope_tol", PositiveFloat),
        ],
        run: ou_oracle_check,
    },
    CheckDef {
        name: "picard",
        description: "contraction of the Picard map in rho_lambda and agreement with the particle system",
        params: &[
            ("lambda", Float),
            ("tol", PositiveFloat),
            ("max_iter", Count),
            ("resolution", Count),
            ("n", Count),
            ("dt", PositiveFloat),
            ("t", PositiveFloat),
            ("init_mean", Float),
            ("init_sd", PositiveFloat),
        ],
        run: picard_check,
    },
    CheckDef {
        name: "girsanov",
        description: "mean of the coupling density R over independent runs",
        params: &[("runs", Count), ("dt", PositiveFloat), ("t", PositiveFloat), ("x", Float), ("y", Float)],
        run: girsanov_check,
    },
    CheckDef {
        name: "coupling_trend",
        description: "reweighted miss probability of the coupling as the step shrinks",
        params: &[
            ("runs", Count),
            ("dts", FloatList),
            ("delta", PositiveFloat),
            ("bound", PositiveFloat),
            ("t", PositiveFloat),
            ("x", Float),
            ("y", Float),
        ],
        run: coupling_trend_check,
    },
    CheckDef {
        name: "harnack",
        description: "power Harnack constant fitted on training gaps and validated on a held-out gap",
        params: &[
            ("n", Count),
            ("dt", PositiveFloat),
            ("train_distances", FloatList),
            ("held_out_distance", PositiveFloat),
            ("times", FloatList),
            ("powers", FloatList),
            ("min_pass_rate", PositiveFloat),
        ],
        run: harnack_check,
    },
    CheckDef {
        name: "grr",
        description: "growth of TV^2 / W_2^2 against 1/t - log W_2 for a bounded weight",
        params: &[
            ("n", Count),
            ("dt", PositiveFloat),
            ("times", FloatList),
            ("ks", CountList),
            ("train", Count),
            ("resolution", Count),
            ("replicates", Count),
            ("x", Float),
        ],
        run: grr_check_def,
    },
    CheckDef {
        name: "moment",
        description: "sup-moment constants under particle doubling and step halving",
        params: &[
            ("n", Count),
            ("dt", PositiveFloat),
            ("t", PositiveFloat),
            ("atoms", FloatList),
            ("powers", CountList),
            ("max_change", PositiveFloat),
            ("max_truncated", PositiveFloat),
        ],
        run: moment_check_def,
    },
    CheckDef {
        name: "stability",
        description: "distance of the time-t laws from delta_{x/n} to that from delta_0 against a noise floor",
        params: &[
            ("n", Count),
            ("dt", PositiveFloat),
            ("t", PositiveFloat),
            ("max_n", Count),
            ("x", Float),
            ("resolution", Count),
        ],
        run: stability_check_def,
    },
    CheckDef {
        name: "hypotheses",
        description: "grid check of the structural conditions on each model",
        params: &[("t", PositiveFloat)],
        run: hypotheses_check,
    },
];

pub fn find(name: &str) -> Option<&'static CheckDef> {
    CHECKS.iter().find(|c| c.name == name)
}

pub fn names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.name).collect()
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    check: &'static str,
    seed: u64,
}

impl Ctx<'_> {
    fn value(&self, key: &str) -> Option<&Value> {
        self.cfg.param(self.check, key)
    }

    fn float(&self, key: &str, default: f64) -> f64 {
        match self.value(key) {
            Some(Value::Float(v)) => *v,
            _ => default,
        }
    }

    fn count(&self, key: &str, default: usize) -> usize {
        match self.value(key) {
            Some(Value::Count(v)) => *v,
            _ => default,
        }
    }

    fn floats(&self, key: &str, default: &[f64]) -> Vec<f64> {
        match self.value(key) {
            Some(Value::FloatList(v)) => v.clone(),
            _ => default.to_vec(),
        }
    }

    fn counts(&self, key: &str, default: &[usize]) -> Vec<usize> {
        match self.value(key) {
            Some(Value::CountList(v)) => v.clone(),
            _ => default.to_vec(),
        }
    }

    /// Check key `n`, then `ensemble.n`.
    fn particles(&self, default: usize) -> usize {
        self.value("n").map(|_| self.count("n", default)).or(self.cfg.particles).unwrap_or(default)
    }

    /// Check key `runs`, then `ensemble.runs`.
    fn runs(&self, default: usize) -> usize {
        self.value("runs").map(|_| self.count("runs", default)).or(self.cfg.runs).unwrap_or(default)
    }

    /// Check key `t`, then `grid.t`.
    fn horizon(&self, default: f64) -> f64 {
        self.value("t").map(|_| self.float("t", default)).or(self.cfg.horizon).unwrap_or(default)
    }

    /// Check key `dt`, then `horizon / grid.n_steps`.
    fn dt(&self, horizon: f64, default: f64) -> f64 {
        if self.value("dt").is_some() {
            return self.float("dt", default);
        }
        self.cfg.n_steps.map(|n| horizon / n as f64).unwrap_or(default)
    }

    /// The configured model, or the check's defaults.
    fn models(&self, defaults: &[&str]) -> Result<Vec<ModelSpec>> {
        match &self.cfg.model {
            Some(id) => Ok(vec![model_zoo::builtin_with(id, &self.cfg.model_params)?]),
            None => Ok(defaults.iter().map(|id| model_zoo::builtin(id)).collect::<mvlab_core::Result<_>>()?),
        }
    }

    fn sub_seed(&self, tag: u64) -> u64 {
        StreamKey::derive_seed(self.seed, tag)
    }

    fn row(&self, case: impl Into<String>, value: f64, dt: Option<f64>, n: Option<usize>) -> ResultRow {
        ResultRow { check: self.check, case: case.into(), param: None, value, lo: None, hi: None, seed: self.cfg.seed, dt, n }
    }
}

/// Run one check; failures to complete are reported as a failed outcome.
pub fn run_check(def: &'static CheckDef, cfg: &ExperimentConfig) -> CheckOutcome {
    let tag = CHECKS.iter().position(|c| c.name == def.name).expect("registered") as u64;
    let ctx = Ctx { cfg, check: def.name, seed: StreamKey::derive_seed(cfg.seed, tag) };
    match (def.run)(&ctx) {
        Ok(o) => CheckOutcome { name: def.name, pass: o.pass, metrics: o.metrics, rows: o.rows, error: None },
        Err(e) => CheckOutcome { name: def.name, pass: false, metrics: BTreeMap::new(), rows: Vec::new(), error: Some(e.to_string()) },
    }
}

fn start_point(model: &ModelSpec, x: f64) -> Vec<f64> {
    let mut p = vec![0.0; model.dim];
    p[0] = x;
    p
}

fn gamma_identity(c: &Ctx<'_>) -> Result<Outcome> {
    let samples = c.count("samples", 1000);
    let tol = c.float("tol", 1e-12);
    let mut u = StreamKey::new(c.seed, 0, substream::BATTERY).uniforms();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let k = 0.1 + 9.9 * u.next_f64();
        let t = 0.01 + 9.99 * u.next_f64();
        let s = t * u.next_f64();
        worst = worst.max(gamma_schedule(k, t)?.identity_residual(s).abs());
    }
    let mut o = Outcome::new();
    o.rows.push(c.row("max_residual", worst, None, Some(samples)));
    o.metric("max_residual", worst);
    o.require("residual_below_tol", worst < tol);
    Ok(o)
}

fn dini_gate_check(c: &Ctx<'_>) -> Result<Outcome> {
    let k = c.float("k", 2.0);
    let t = c.float("t", 1.0);
    let tol = c.float("tol", 1e-12);
    let mut o = Outcome::new();
    let sqrt_gate = dini_gate(power_modulus(0.5), k, t, tol)?;
    let want = 2.0 * k * k * t;
    let rel = ((sqrt_gate.integral(t, tol)? - want) / want).abs();
    o.rows.push(c.row("sqrt_modulus_relative_error", rel, None, None));
    o.metric("sqrt_relative_error", rel);
    o.require("sqrt_matches_closed_form", rel < 1e-8);

    let log_gate = dini_gate(log_modulus(1.5, 1.0), k, t, tol)?;
    for (level, v) in log_gate.refinements.iter().enumerate() {
        o.rows.push(c.row("log_modulus_1.5_integral", *v, None, None).at(level as f64));
    }
    let change = log_gate.refinement_change();
    o.metric("log_refinement_change", change);
    o.require("log_refinement_stable", change < 0.01);

    for theta in [1.5, 0.5] {
        let d = dini_integral(log_modulus(theta, 1.0).as_ref(), tol)?;
        o.rows.push(c.row(format!("log_modulus_{theta}_decay_exponent"), d.decay_exponent, None, None).at(theta));
        o.metric(format!("decay_exponent_theta_{theta}"), d.decay_exponent);
        if theta < 1.0 {
            o.require("weak_modulus_flagged_divergent", d.divergent);
        } else {
            o.require("strong_modulus_finite", !d.divergent);
        }
    }
    Ok(o)
}

fn wasserstein_check(c: &Ctx<'_>) -> Result<Outcome> {
    let pairs = c.count("pairs", 100);
    let n = c.count("n", 64);
    let tol = c.float("tol", 1e-9);
    let mut z = StreamKey::new(c.seed, 0, substream::BATTERY).normals();
    let mut cloud = |shift: f64, scale: f64| -> Vec<f64> { (0..n).map(|_| shift + scale * z.next_standard()).collect() };
    let mut lp_gap: f64 = 0.0;
    for i in 0..pairs {
        let a = cloud(0.0, 1.0);
        let b = cloud((i % 5) as f64 * 0.5, 1.0 + (i % 3) as f64);
        let mu = DiscreteMeasure::uniform(1, a.clone())?;
        let nu = DiscreteMeasure::uniform(1, b.clone())?;
        let lp = wasserstein_lp(&mu, &nu, 2.0, usize::MAX)?;
        lp_gap = lp_gap.max((wasserstein_sorted(&a, &b, 2.0)? - lp).abs());
    }
    let (mut asym, mut excess) = (0usize, f64::NEG_INFINITY);
    for i in 0..pairs {
        let ms: Vec<DiscreteMeasure> =
            (0..3).map(|j| DiscreteMeasure::uniform(1, cloud(j as f64 * (i % 4) as f64 * 0.3, 1.0))).collect::<mvlab_core::Result<_>>()?;
        let w = |a: usize, b: usize| wasserstein(&ms[a], &ms[b], 2.0);
        if w(0, 1)? != w(1, 0)? {
            asym += 1;
        }
        excess = excess.max(w(0, 2)? - w(0, 1)? - w(1, 2)?);
    }
    let mut o = Outcome::new();
    o.rows.push(c.row("max_sorted_lp_gap", lp_gap, None, Some(n)));
    o.rows.push(c.row("symmetry_violations", asym as f64, None, Some(n)));
    o.rows.push(c.row("max_triangle_excess", excess, None, Some(n)));
    o.metric("max_sorted_lp_gap", lp_gap);
    o.metric("symmetry_violations", asym as f64);
    o.metric("max_triangle_excess", excess);
    o.require("sorted_matches_lp", lp_gap < tol);
    o.require("symmetric", asym == 0);
    o.require("triangle", excess <= tol);
    Ok(o)
}

fn weighted_variation_check(c: &Ctx<'_>) -> Result<Outcome> {
    let atoms = c.floats("atoms", &[0.5, 1.0, 2.0, 5.0, -3.0]);
    let tol = c.float("tol", 1e-9);
    let model = c.models(&["linear_mean_field"])?.remove(0);
    let v = model.lyapunov.value.clone();
    let origin = start_point(&model, 0.0);
    let mut o = Outcome::new();
    let mut worst: f64 = 0.0;
    for &x in &atoms {
        let p = start_point(&model, x);
        let mu = DiscreteMeasure::dirac(&origin);
        let nu = DiscreteMeasure::dirac(&p);
        let closed = if x == 0.0 { 0.0 } else { v(&origin) + v(&p) };
        let direct = weighted_variation_discrete(&mu, &nu, v.as_ref())?;
        // coupling cost (V(a) + V(b)) 1{a != b}
        let cost = if x == 0.0 { 0.0 } else { v(&origin) + v(&p) };
        let lp = transport(&[1.0], &[1.0], &[cost])?.cost;
        let err = (direct - closed).abs().max((lp - closed).abs());
        worst = worst.max(err);
        o.rows.push(c.row("closed_form", closed, None, None).at(x));
        o.rows.push(c.row("computed", direct, None, None).at(x));
        o.rows.push(c.row("transport", lp, None, None).at(x));
    }
    o.metric("max_error", worst);
    o.require("matches_closed_form", worst < tol);
    Ok(o)
}

fn ou_oracle_check(c: &Ctx<'_>) -> Result<Outcome> {
    let model = c.models(&["ou"])?.remove(0);
    let (theta, s) = model
        .ou_parameters
        .ok_or_else(|| Error::Precondition(format!("model '{}' has no closed-form OU law", model.id)))?;
    let n = c.particles(10_000);
    let t = c.horizon(1.0);
    let dt = c.dt(t, 1e-3);
    let x0 = c.float("x0", 1.0);
    let mc = McConfig { n, dt, ..Default::default() };
    let cloud = terminal_cloud(&model, &ParticleCloud::dirac(&[x0], 1)?, t, &mc, c.sub_seed(1))?.terminal;
    let xs = cloud.points().to_vec();
    let (mean_exact, var_exact) = ou_oracle(theta, s, t, x0);
    let mean = bootstrap_mean(&xs, DEFAULT_RESAMPLES, StreamKey::new(c.sub_seed(2), 0, substream::BOOTSTRAP));
    let variance = |idx: &[usize]| {
        let m = idx.iter().map(|&i| xs[i]).sum::<f64>() / idx.len() as f64;
        idx.iter().map(|&i| (xs[i] - m).powi(2)).sum::<f64>() / (idx.len() - 1) as f64
    };
    let all: Vec<usize> = (0..xs.len()).collect();
    let reps = bootstrap_replicates(xs.len(), DEFAULT_RESAMPLES, StreamKey::new(c.sub_seed(3), 0, substream::BOOTSTRAP), variance);
    let var = summarize(variance(&all), &reps);
    let mut o = Outcome::new();
    o.rows.push(c.row("mean", mean.value, Some(dt), Some(n)).band(mean.lo, mean.hi));
    o.rows.push(c.row("mean_exact", mean_exact, Some(dt), Some(n)));
    o.rows.push(c.row("variance", var.value, Some(dt), Some(n)).band(var.lo, var.hi));
    o.rows.push(c.row("variance_exact", var_exact, Some(dt), Some(n)));
    let zm = (mean.value - mean_exact).abs() / mean.se;
    let zv = (var.value - var_exact).abs() / var.se;
    o.metric("mean_z", zm);
    o.metric("variance_z", zv);
    o.require("mean_within_3se", zm <= 3.0);
    o.require("variance_within_3se", zv <= 3.0);

    let dts = c.floats("weak_dts", &[1e-1, 1e-2, 1e-3]);
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for (i, &h) in dts.iter().enumerate() {
        let (bias, se) = ou_weak_error(theta, s, x0, t, h, n, c.sub_seed(10 + i as u64))?;
        o.rows.push(c.row("weak_error", bias, Some(h), Some(n)).at(h).band(bias - 3.0 * se, bias + 3.0 * se));
        lx.push(h.ln());
        ly.push(bias.abs().ln());
    }
    let slope = linear_fit(&lx, &ly).slope;
    let slope_tol = c.float("slope_tol", 0.3);
    o.rows.push(c.row("weak_order_slope", slope, None, Some(n)));
    o.metric("weak_order_slope", slope);
    o.require("weak_order_one", (slope - 1.0).abs() <= slope_tol);
    Ok(o)
}

fn picard_check(c: &Ctx<'_>) -> Result<Outcome> {
    let model = c.models(&["linear_mean_field"])?.remove(0);
    if model.dim != 1 {
        return Err(Error::Precondition("the particle-system comparison uses the one-dimensional W_2".into()).into());
    }
    let n = c.particles(10_000);
    let t = c.horizon(1.0);
    let dt = c.dt(t, 1e-2);
    let cfg = PicardConfig {
        lambda: c.float("lambda", 20.0),
        tol: c.float("tol", 1e-3),
        max_iter: c.count("max_iter", 8),
        resolution: c.count("resolution", mvlab_core::metrics::DEFAULT_RESOLUTION),
        ..Default::default()
    };
    let law = InitLaw::Gaussian { mean: vec![c.float("init_mean", 1.0)], sd: c.float("init_sd", 0.5) };
    let grid = TimeGrid::with_step(0.0, t, dt)?;
    let init = law.sample(n, c.sub_seed(1))?;
    let (fixed, diag) = picard_solve(&model, &init, &grid, &cfg, c.sub_seed(2))?;
    // independent initial sample and noise for the particle system
    let particles = simulate_interacting(&model, n, &law, &grid, c.sub_seed(3), &cfg.sim)?;
    let a = fixed.terminal().points();
    let b = particles.flow.terminal().points();
    let w2 = wasserstein_sorted(a, b, 2.0)?;
    let scale = wasserstein_null_scale(a, b, 2.0, DEFAULT_RESAMPLES, StreamKey::new(c.sub_seed(4), 0, substream::BOOTSTRAP))?;
    let mut o = Outcome::new();
    for (i, (d, r)) in diag.distances.iter().zip(&diag.ratios).enumerate() {
        o.rows.push(c.row("rho_lambda", *d, Some(dt), Some(n)).at((i + 1) as f64));
        if let Some(r) = r {
            o.rows.push(c.row("ratio", *r, Some(dt), Some(n)).at((i + 1) as f64));
        }
    }
    o.rows.push(c.row("terminal_w2", w2, Some(dt), Some(n)).band(0.0, 3.0 * scale));
    let later = &diag.ratios[1.min(diag.ratios.len())..];
    let contracting = !later.is_empty() && later.iter().all(|r| matches!(r, Some(r) if *r < 1.0));
    let worst = later.iter().flatten().copied().fold(0.0, f64::max);
    o.metric("iterations", diag.iterations as f64);
    o.metric("max_ratio", worst);
    o.metric("terminal_w2", w2);
    o.metric("w2_null_scale", scale);
    o.metric("frozen_fraction", diag.frozen_fraction);
    o.require("ratios_below_one", contracting);
    o.require("matches_particle_system", w2 < 3.0 * scale);
    Ok(o)
}

/// Law argument for coupling a measure-dependent model: the particle flow from `delta_x`.
fn coupling_flow(model: &ModelSpec, x: &[f64], runs: usize, grid: &TimeGrid, seed: u64) -> Result<Option<MeasureFlow>> {
    if !model.measure_dependent() {
        return Ok(None);
    }
    let init = ParticleCloud::dirac(x, runs)?;
    Ok(Some(simulate_interacting_from(model, &init, grid, seed, &Default::default())?.flow))
}

fn girsanov_check(c: &Ctx<'_>) -> Result<Outcome> {
    let runs = c.runs(10_000);
    let t = c.horizon(1.0);
    let dt = c.dt(t, 1e-3);
    let grid = TimeGrid::with_step(0.0, t, dt)?;
    let mut o = Outcome::new();
    for (mi, model) in c.models(&["ou", "dini_sigma"])?.iter().enumerate() {
        let x = start_point(model, c.float("x", 0.0));
        let y = start_point(model, c.float("y", 1.0));
        let flow = coupling_flow(model, &x, runs, &grid, c.sub_seed(100 + mi as u64))?;
        let setup = CouplingSetup { model, x, y, t, grid: &grid, flow: flow.as_ref(), opts: Default::default() };
        let batch = coupled_batch(&setup, runs, c.sub_seed(mi as u64))?;
        let (mean, se) = mean_se(&batch.weights());
        o.rows.push(c.row(format!("{}/mean_R", model.id), mean, Some(dt), Some(runs)).band(mean - 3.0 * se, mean + 3.0 * se));
        o.metric(format!("{}_mean_R", model.id), mean);
        o.metric(format!("{}_se", model.id), se);
        o.require(&format!("{}_within_3se", model.id), (mean - 1.0).abs() <= 3.0 * se);
    }
    Ok(o)
}

fn coupling_trend_check(c: &Ctx<'_>) -> Result<Outcome> {
    let runs = c.runs(10_000);
    let t = c.horizon(1.0);
    let dts = c.floats("dts", &[1e-2, 1e-3, 1e-4]);
    let delta = c.float("delta", 1e-2);
    let bound = c.float("bound", 0.05);
    let mut o = Outcome::new();
    for (mi, model) in c.models(&["ou", "dini_sigma"])?.iter().enumerate() {
        let x = start_point(model, c.float("x", 0.0));
        let y = start_point(model, c.float("y", 1.0));
        let mut misses = Vec::new();
        for (di, &dt) in dts.iter().enumerate() {
            let grid = TimeGrid::with_step(0.0, t, dt)?;
            let tag = (mi * 16 + di) as u64;
            let flow = coupling_flow(model, &x, runs, &grid, c.sub_seed(1000 + tag))?;
            let setup = CouplingSetup { model, x: x.clone(), y: y.clone(), t, grid: &grid, flow: flow.as_ref(), opts: Default::default() };
            let batch = coupled_batch(&setup, runs, c.sub_seed(tag))?;
            let s = coupling_success(&batch.runs, model.constants.k, delta)?;
            let max_gap = batch.runs.iter().map(|r| r.gap).fold(0.0, f64::max);
            o.rows.push(c.row(format!("{}/miss_probability", model.id), s.miss_probability, Some(dt), Some(runs)).at(dt));
            o.rows.push(c.row(format!("{}/max_gap", model.id), max_gap, Some(dt), Some(runs)).at(dt));
            o.metric(format!("{}_miss_dt_{dt:e}", model.id), s.miss_probability);
            o.metric(format!("{}_max_gap_dt_{dt:e}", model.id), max_gap);
            misses.push(s.miss_probability);
        }
        let last = *misses.last().ok_or_else(|| Error::InvalidInput("coupling_trend needs at least one step size".into()))?;
        o.require(&format!("{}_miss_below_bound", model.id), last <= bound);
        o.require(&format!("{}_strictly_decreasing", model.id), misses.windows(2).all(|w| w[1] < w[0]));
    }
    Ok(o)
}

fn hypotheses_verified(models: &[ModelSpec], t: f64, seed: u64) -> Result<bool> {
    for m in models {
        if !verify_hypotheses(m, &HypothesisGrid::standard(m.dim, t, seed))?.verified {
            return Ok(false);
        }
    }
    Ok(true)
}

fn harnack_check(c: &Ctx<'_>) -> Result<Outcome> {
    let models = c.models(&["ou", "dini_sigma"])?;
    let n = c.particles(10_000);
    let times = c.floats("times", &[0.25, 1.0]);
    let tmax = times.iter().copied().fold(0.0, f64::max);
    let dt = c.dt(tmax, 1e-3);
    let cfg = HarnackConfig { mc: McConfig { n, dt, ..Default::default() }, powers: c.floats("powers", &[2.0, 4.0]) };
    let train = c.floats("train_distances", &[0.5, 1.0]);
    let held = c.float("held_out_distance", 2.0);
    let battery = harnack_battery(&models, &train, held, &times, &standard_functions(), &cfg, c.sub_seed(1))?;
    let mut o = Outcome::new();
    for (set, reps) in [("train", &battery.training), ("held_out", &battery.held_out)] {
        for r in reps {
            let case = format!("{set}/{}/t={}/{}/p={}", r.model, r.t, r.function, r.p);
            let factor = (battery.fit.c * r.exponent()).exp();
            o.rows.push(c.row(format!("{case}/lhs"), r.lhs.value, Some(dt), Some(n)).at(r.distance).band(r.lhs.lo, r.lhs.hi));
            o.rows.push(
                c.row(format!("{case}/bound"), r.rhs.value * factor, Some(dt), Some(n))
                    .at(r.distance)
                    .band(r.rhs.lo * factor, r.rhs.hi * factor),
            );
        }
    }
    let min_rate = c.float("min_pass_rate", 0.95);
    o.metric("c", battery.fit.c);
    o.metric("pass_rate", battery.pass_rate);
    o.metric("inconclusive", battery.inconclusive as f64);
    o.metric("oracle_z", battery.oracle_z);
    o.require("hypotheses_verified", hypotheses_verified(&models, tmax, c.sub_seed(2))?);
    o.require("held_out_pass_rate", battery.pass_rate >= min_rate);
    o.require("oracle_consistent", battery.oracle_consistent);
    Ok(o)
}

fn grr_check_def(c: &Ctx<'_>) -> Result<Outcome> {
    let model = c.models(&["bounded_mean_field"])?.remove(0);
    let defaults = GrrConfig::default();
    let times = c.floats("times", &defaults.times);
    let tmax = times.iter().copied().fold(0.0, f64::max);
    let n = c.particles(defaults.mc.n);
    let dt = c.dt(tmax, defaults.mc.dt);
    let cfg = GrrConfig {
        mc: McConfig { n, dt, ..defaults.mc },
        times,
        ks: c.counts("ks", &defaults.ks.iter().map(|&k| k as usize).collect::<Vec<_>>()).into_iter().map(|k| k as u32).collect(),
        train: c.count("train", defaults.train),
        resolution: c.count("resolution", defaults.resolution),
        replicates: c.count("replicates", defaults.replicates),
    };
    let x = start_point(&model, c.float("x", 0.0));
    let report = grr_check(&model, &x, &cfg, c.sub_seed(1))?;
    let mut o = Outcome::new();
    for case in &report.cases {
        let tag = if case.held_out { "held_out" } else { "train" };
        o.rows.push(c.row(format!("{tag}/t={}/tv", case.t), case.tv.value, Some(dt), Some(n)).at(case.k as f64).band(case.tv.lo, case.tv.hi));
        o.rows.push(c.row(format!("{tag}/t={}/bound", case.t), (report.c * case.shape).sqrt(), Some(dt), Some(n)).at(case.k as f64));
    }
    o.rows.push(c.row("slope", report.slope.value, Some(dt), Some(n)).band(report.slope.lo, report.slope.hi));
    o.metric("slope", report.slope.value);
    o.metric("slope_se", report.slope.se);
    o.metric("c", report.c);
    o.require("hypotheses_verified", hypotheses_verified(std::slice::from_ref(&model), tmax, c.sub_seed(2))?);
    o.require("held_out_within_bound", report.held_out_ok);
    o.require("slope_at_most_one", report.slope_ok);
    o.pass &= report.pass;
    Ok(o)
}

fn moment_check_def(c: &Ctx<'_>) -> Result<Outcome> {
    let n = c.particles(10_000);
    let t = c.horizon(1.0);
    let dt = c.dt(t, 1e-2);
    let powers: Vec<u32> = c.counts("powers", &[1, 2]).into_iter().map(|p| p as u32).collect();
    let max_change = c.float("max_change", 0.1);
    let cfg = MomentConfig { mc: McConfig { n, dt, ..Default::default() }, t, powers, max_truncated: c.float("max_truncated", 0.01) };
    let mut o = Outcome::new();
    for (mi, model) in c.models(&["ou", "cubic"])?.iter().enumerate() {
        let atoms: Vec<Vec<f64>> = c.floats("atoms", &[-2.0, 0.0, 2.0]).into_iter().map(|a| start_point(model, a)).collect();
        let s = moment_stability(model, &atoms, &cfg, c.sub_seed(mi as u64))?;
        for (label, reps, h, size) in [("base", &s.base, dt, n), ("doubled_n", &s.doubled_n, dt, 2 * n), ("halved_dt", &s.halved_dt, dt / 2.0, n)] {
            for r in reps {
                o.rows.push(c.row(format!("{}/{label}/c", model.id), r.c, Some(h), Some(size)).at(r.power as f64));
            }
        }
        o.metric(format!("{}_max_relative_change", model.id), s.max_relative_change);
        o.metric(format!("{}_max_truncated_fraction", model.id), s.max_truncated_fraction);
        o.require(&format!("{}_stable", model.id), s.max_relative_change < max_change);
        o.require(&format!("{}_truncation_small", model.id), s.max_truncated_fraction < cfg.max_truncated);
    }
    Ok(o)
}

fn stability_check_def(c: &Ctx<'_>) -> Result<Outcome> {
    let model = c.models(&["ou"])?.remove(0);
    let n = c.particles(10_000);
    let t = c.horizon(0.5);
    let dt = c.dt(t, 1e-2);
    let max_n = c.count("max_n", 32).max(1);
    let x = c.float("x", 1.0);
    let ns: Vec<usize> = std::iter::successors(Some(1usize), |k| Some(k * 2)).take_while(|&k| k <= max_n).collect();
    let seq: Vec<ParticleCloud> =
        ns.iter().map(|&k| ParticleCloud::dirac(&start_point(&model, x / k as f64), 1)).collect::<mvlab_core::Result<_>>()?;
    let limit = ParticleCloud::dirac(&start_point(&model, 0.0), 1)?;
    let cfg = StabilityConfig {
        mc: McConfig { n, dt, ..Default::default() },
        t,
        resolution: c.count("resolution", mvlab_core::metrics::DEFAULT_RESOLUTION),
        ..Default::default()
    };
    let r = stability_check(&model, &seq, &limit, &cfg, c.sub_seed(1))?;
    let mut o = Outcome::new();
    for (&k, &d) in ns.iter().zip(&r.distances) {
        o.rows.push(c.row("distance", d, Some(dt), Some(n)).at(k as f64));
    }
    o.rows.push(c.row("noise_floor", r.noise_floor, Some(dt), Some(n)));
    o.metric("noise_floor", r.noise_floor);
    o.metric("final_distance", *r.distances.last().expect("nonempty"));
    o.require("monotone", r.monotone);
    o.require("reaches_floor", r.reaches_floor);
    Ok(o)
}

fn hypotheses_check(c: &Ctx<'_>) -> Result<Outcome> {
    let ids = model_zoo::builtin_ids();
    let models = c.models(&ids)?;
    let t = c.horizon(1.0);
    let mut o = Outcome::new();
    for m in &models {
        let rep = verify_hypotheses(m, &HypothesisGrid::standard(m.dim, t, c.seed))?;
        for cond in rep.conditions.iter().filter(|c| !c.skipped) {
            o.rows.push(c.row(format!("{}/{}", m.id, cond.name), cond.worst_residual, None, None));
        }
        o.require(&format!("{}_verified", m.id), rep.verified);
    }
    Ok(o)
}
