//! Built-in SDE models and grid-based checks of their structural hypotheses.

use std::collections::BTreeMap;
use std::f64::consts::E;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::coupling::dini::{self, Modulus};
use crate::error::{invalid, Error, Result};
use crate::metrics::{weighted_variation_discrete, DiscreteMeasure};
use crate::paths::{substream, StreamKey};

pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// `(t, x, out)`: writes a vector (drift) or a row-major `d x m` matrix (diffusion).
pub type VectorField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(t, x, [mu(h_1), ..., mu(h_r)], out)`.
pub type MeanFieldDrift = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type Radial = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type Gradient = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Lyapunov weight `V >= 1` with its first and second derivatives.
#[derive(Clone)]
pub struct Lyapunov {
    pub value: ScalarField,
    pub gradient: Gradient,
    /// Row-major `d x d` Hessian.
    pub hessian: Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConstants {
    /// Growth constant in the Lyapunov conditions, also the rate of the gamma schedule.
    pub k: f64,
    /// Lipschitz constant of the drift in the measure argument for `||.||_V`.
    pub kappa: f64,
    /// Radius of the balls in the Lyapunov conditions.
    pub epsilon: f64,
    /// Integrability exponents `(p0, q0)` of the singular drift.
    pub p0: f64,
    pub q0: f64,
    /// Declared bounds on the eigenvalues of `sigma sigma^T`.
    pub ellipticity: (f64, f64),
}

/// Coefficients and structural data of one SDE
/// `dX = (b0(t, X) + b1(t, X, law(X))) dt + sigma(t, X) dW`.
#[derive(Clone)]
pub struct ModelSpec {
    pub id: String,
    pub dim: usize,
    pub bm_dim: usize,
    pub drift_singular: Option<VectorField>,
    pub drift_regular: MeanFieldDrift,
    /// Test functions `h_j` with `|h_j| <= V` through which the law enters `b1`.
    pub test_functions: Vec<ScalarField>,
    pub sigma: VectorField,
    pub lyapunov: Lyapunov,
    pub phi_growth: Radial,
    pub dini_modulus: Modulus,
    pub constants: ModelConstants,
    /// `beta` when the singular drift behaves like `|x|^{-beta}` near the origin.
    pub singularity_exponent: Option<f64>,
    /// `sup V` when `V = Phi(|x|^2)` with bounded `Phi`.
    pub weight_bound: Option<f64>,
    /// `(theta, s)` when the model is `dX = -theta X dt + s dW`.
    pub ou_parameters: Option<(f64, f64)>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .field("bm_dim", &self.bm_dim)
            .field("measure_dependent", &self.measure_dependent())
            .field("constants", &self.constants)
            .finish()
    }
}

impl ModelSpec {
    pub fn measure_dependent(&self) -> bool {
        !self.test_functions.is_empty()
    }

    pub fn v(&self, x: &[f64]) -> f64 {
        (self.lyapunov.value)(x)
    }

    /// Full drift `b0 + b1` without taming.
    pub fn drift(&self, t: f64, x: &[f64], mf: &[f64], out: &mut [f64]) {
        (self.drift_regular)(t, x, mf, out);
        if let Some(b0) = &self.drift_singular {
            let mut tmp = vec![0.0; self.dim];
            b0(t, x, &mut tmp);
            for (o, s) in out.iter_mut().zip(&tmp) {
                *o += s;
            }
        }
    }

    /// Values `mu(h_j)` of the test functions under a discrete measure.
    pub fn functionals(&self, mu: &DiscreteMeasure) -> Vec<f64> {
        self.test_functions.iter().map(|h| mu.integral(h.as_ref())).collect()
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum()
}

/// `V(x) = log(e + |x|^2)`.
fn log_weight() -> Lyapunov {
    Lyapunov {
        value: Arc::new(|x: &[f64]| (E + norm2(x)).ln()),
        gradient: Arc::new(|x: &[f64], out: &mut [f64]| {
            let c = 2.0 / (E + norm2(x));
            for (o, a) in out.iter_mut().zip(x) {
                *o = c * a;
            }
        }),
        hessian: Arc::new(|x: &[f64], out: &mut [f64]| {
            let d = x.len();
            let q = E + norm2(x);
            for i in 0..d {
                for j in 0..d {
                    let delta = if i == j { 2.0 / q } else { 0.0 };
                    out[i * d + j] = delta - 4.0 * x[i] * x[j] / (q * q);
                }
            }
        }),
    }
}

/// `V(x) = 1 + |x|^2`.
fn quadratic_weight() -> Lyapunov {
    Lyapunov {
        value: Arc::new(|x: &[f64]| 1.0 + norm2(x)),
        gradient: Arc::new(|x: &[f64], out: &mut [f64]| {
            for (o, a) in out.iter_mut().zip(x) {
                *o = 2.0 * a;
            }
        }),
        hessian: Arc::new(|x: &[f64], out: &mut [f64]| {
            let d = x.len();
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] = if i == j { 2.0 } else { 0.0 };
                }
            }
        }),
    }
}

/// `V(x) = Phi(|x|^2)` with the bounded `Phi(r) = 2 - 1/(1 + r)`.
fn bounded_weight() -> Lyapunov {
    Lyapunov {
        value: Arc::new(|x: &[f64]| 2.0 - 1.0 / (1.0 + norm2(x))),
        gradient: Arc::new(|x: &[f64], out: &mut [f64]| {
            let q = 1.0 + norm2(x);
            for (o, a) in out.iter_mut().zip(x) {
                *o = 2.0 * a / (q * q);
            }
        }),
        hessian: Arc::new(|x: &[f64], out: &mut [f64]| {
            let d = x.len();
            let q = 1.0 + norm2(x);
            for i in 0..d {
                for j in 0..d {
                    let delta = if i == j { 2.0 / (q * q) } else { 0.0 };
                    out[i * d + j] = delta - 8.0 * x[i] * x[j] / (q * q * q);
                }
            }
        }),
    }
}

fn constant_sigma(s: f64) -> VectorField {
    Arc::new(move |_t, _x, out: &mut [f64]| out[0] = s)
}

fn identity_growth() -> Radial {
    Arc::new(|r| r)
}

fn base(id: &str, drift: MeanFieldDrift, sigma: VectorField, lyapunov: Lyapunov, constants: ModelConstants) -> ModelSpec {
    ModelSpec {
        id: id.to_string(),
        dim: 1,
        bm_dim: 1,
        drift_singular: None,
        drift_regular: drift,
        test_functions: Vec::new(),
        sigma,
        lyapunov,
        phi_growth: identity_growth(),
        dini_modulus: dini::power_modulus(0.5),
        constants,
        singularity_exponent: None,
        weight_bound: None,
        ou_parameters: None,
    }
}

fn default_constants(k: f64, s_lo: f64, s_hi: f64) -> ModelConstants {
    ModelConstants { k, kappa: 0.0, epsilon: 0.1, p0: 4.0, q0: 8.0, ellipticity: (s_lo * s_lo, s_hi * s_hi) }
}

/// Ornstein-Uhlenbeck `dX = -theta X dt + s dW`.
pub fn ou(theta: f64, s: f64) -> Result<ModelSpec> {
    if !(theta.is_finite() && s > 0.0 && s.is_finite()) {
        return Err(invalid("ou model needs finite theta and s > 0"));
    }
    let drift: MeanFieldDrift = Arc::new(move |_t, x, _mf, out: &mut [f64]| out[0] = -theta * x[0]);
    let mut m = base("ou", drift, constant_sigma(s), log_weight(), default_constants(2.0f64.max(theta.abs()), s, s));
    m.ou_parameters = Some((theta, s));
    Ok(m)
}

/// Cubic confinement `dX = -X^3 dt + dW`.
pub fn cubic() -> ModelSpec {
    let drift: MeanFieldDrift = Arc::new(|_t, x, _mf, out: &mut [f64]| out[0] = -x[0] * x[0] * x[0]);
    base("cubic", drift, constant_sigma(1.0), log_weight(), default_constants(2.0, 1.0, 1.0))
}

/// Singular kick `b0(x) = 1{0 < |x| <= 1} |x|^{-beta}` on top of `-x`.
pub fn singular_kick(beta: f64) -> Result<ModelSpec> {
    if !(beta > 0.0 && beta < 0.5) {
        return Err(invalid("singular kick needs beta in (0, 1/2)"));
    }
    let drift: MeanFieldDrift = Arc::new(|_t, x, _mf, out: &mut [f64]| out[0] = -x[0]);
    let mut m = base("singular_kick", drift, constant_sigma(1.0), log_weight(), default_constants(2.0, 1.0, 1.0));
    m.drift_singular = Some(Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
        let r = x[0].abs();
        out[0] = if r > 0.0 && r <= 1.0 { r.powf(-beta) } else { 0.0 };
    }));
    m.singularity_exponent = Some(beta);
    // |b0|^p is locally integrable in d = 1 iff p * beta < 1
    let p0 = (0.96 / beta).min(16.0);
    m.constants.p0 = p0;
    m.constants.q0 = 2.0 / (1.0 - 1.0 / p0) * 1.5;
    Ok(m)
}

/// `dX = -X dt + sigma(X) dW` with `sigma(x) = 1 + a sgn(x) log^{-theta}(e + 1/|x|)`,
/// continuous only up to a logarithmic (Dini) modulus at the origin.
pub fn dini_sigma(theta: f64, amplitude: f64) -> Result<ModelSpec> {
    if !(theta > 0.0 && amplitude > 0.0 && amplitude < 1.0) {
        return Err(invalid("dini_sigma needs theta > 0 and amplitude in (0, 1)"));
    }
    let drift: MeanFieldDrift = Arc::new(|_t, x, _mf, out: &mut [f64]| out[0] = -x[0]);
    let sigma: VectorField = Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
        let r = x[0].abs();
        out[0] = if r == 0.0 { 1.0 } else { 1.0 + amplitude * x[0].signum() * (E + 1.0 / r).ln().powf(-theta) };
    });
    let lo = 1.0 - amplitude;
    let hi = 1.0 + amplitude;
    let mut m = base("dini_sigma", drift, sigma, log_weight(), default_constants(2.0, lo, hi));
    m.dini_modulus = dini::log_modulus(theta, 2.0 * amplitude);
    Ok(m)
}

/// Mean-field interaction `b1(x, mu) = -x^3 + kappa tanh(x) mu(V ^ 10)`.
pub fn mean_field(kappa: f64) -> Result<ModelSpec> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(invalid("mean_field needs kappa >= 0"));
    }
    let drift: MeanFieldDrift =
        Arc::new(move |_t, x, mf, out: &mut [f64]| out[0] = -x[0] * x[0] * x[0] + kappa * x[0].tanh() * mf[0]);
    let mut m = base("mean_field", drift, constant_sigma(1.0), log_weight(), default_constants(3.0, 1.0, 1.0));
    m.test_functions = vec![Arc::new(|x: &[f64]| (E + norm2(x)).ln().min(10.0))];
    m.constants.kappa = kappa;
    Ok(m)
}

/// Linear attraction to the mean `b1(x, mu) = -x + kappa mu(id)`.
pub fn linear_mean_field(kappa: f64) -> Result<ModelSpec> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(invalid("linear_mean_field needs kappa >= 0"));
    }
    let drift: MeanFieldDrift = Arc::new(move |_t, x, mf, out: &mut [f64]| out[0] = -x[0] + kappa * mf[0]);
    let mut m = base("linear_mean_field", drift, constant_sigma(1.0), quadratic_weight(), default_constants(3.0, 1.0, 1.0));
    m.test_functions = vec![Arc::new(|x: &[f64]| x[0])];
    m.constants.kappa = kappa;
    m.constants.k = 3.0 + 2.0 * kappa;
    Ok(m)
}

/// `b1(x, mu) = -x + kappa mu(tanh)` with the bounded weight `V = 2 - 1/(1 + |x|^2)`.
pub fn bounded_mean_field(kappa: f64) -> Result<ModelSpec> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(invalid("bounded_mean_field needs kappa >= 0"));
    }
    let drift: MeanFieldDrift = Arc::new(move |_t, x, mf, out: &mut [f64]| out[0] = -x[0] + kappa * mf[0]);
    let mut m = base("bounded_mean_field", drift, constant_sigma(1.0), bounded_weight(), default_constants(3.0, 1.0, 1.0));
    m.test_functions = vec![Arc::new(|x: &[f64]| x[0].tanh())];
    m.constants.kappa = kappa;
    m.weight_bound = Some(2.0);
    Ok(m)
}

/// Two-dimensional OU with a constant, non-diagonal diffusion matrix.
pub fn ou_2d(theta: f64) -> Result<ModelSpec> {
    if !theta.is_finite() {
        return Err(invalid("ou_2d needs finite theta"));
    }
    let drift: MeanFieldDrift = Arc::new(move |_t, x, _mf, out: &mut [f64]| {
        out[0] = -theta * x[0];
        out[1] = -theta * x[1];
    });
    let sigma: VectorField = Arc::new(|_t, _x, out: &mut [f64]| out.copy_from_slice(&[1.0, 0.3, 0.0, 0.8]));
    // eigenvalues of [[1.09, 0.24], [0.24, 0.64]]
    let mut m = base("ou_2d", drift, sigma, log_weight(), default_constants(2.0f64.max(theta.abs()), 0.7, 1.1));
    m.dim = 2;
    m.bm_dim = 2;
    m.constants.ellipticity = (0.5, 1.2);
    m.constants.p0 = 6.0;
    Ok(m)
}

/// Parameter names and defaults accepted by each built-in model.
pub fn builtin_parameters(id: &str) -> Option<&'static [(&'static str, f64)]> {
    Some(match id {
        "ou" => &[("theta", 1.0), ("s", 1.0)],
        "ou_2d" => &[("theta", 1.0)],
        "cubic" => &[],
        "singular_kick" => &[("beta", 0.4)],
        "dini_sigma" => &[("theta", 1.5), ("amplitude", 0.5)],
        "mean_field" => &[("kappa", 0.5)],
        "linear_mean_field" => &[("kappa", 0.5)],
        "bounded_mean_field" => &[("kappa", 0.5)],
        _ => return None,
    })
}

pub fn builtin_ids() -> Vec<&'static str> {
    vec!["ou", "ou_2d", "cubic", "singular_kick", "dini_sigma", "mean_field", "linear_mean_field", "bounded_mean_field"]
}

/// Built-in model with default parameters.
pub fn builtin(id: &str) -> Result<ModelSpec> {
    builtin_with(id, &BTreeMap::new())
}

/// Built-in model with parameter overrides; unknown names are rejected.
pub fn builtin_with(id: &str, params: &BTreeMap<String, f64>) -> Result<ModelSpec> {
    let defaults = builtin_parameters(id).ok_or_else(|| invalid(format!("unknown model '{id}'")))?;
    for key in params.keys() {
        if !defaults.iter().any(|(name, _)| name == key) {
            return Err(invalid(format!("model '{id}' has no parameter '{key}'")));
        }
    }
    let get = |name: &str| {
        params
            .get(name)
            .copied()
            .unwrap_or_else(|| defaults.iter().find(|(n, _)| *n == name).map(|p| p.1).unwrap_or(f64::NAN))
    };
    match id {
        "ou" => ou(get("theta"), get("s")),
        "ou_2d" => ou_2d(get("theta")),
        "cubic" => Ok(cubic()),
        "singular_kick" => singular_kick(get("beta")),
        "dini_sigma" => dini_sigma(get("theta"), get("amplitude")),
        "mean_field" => mean_field(get("kappa")),
        "linear_mean_field" => linear_mean_field(get("kappa")),
        "bounded_mean_field" => bounded_mean_field(get("kappa")),
        _ => unreachable!(),
    }
}

/// Lookup table of models by id, pre-filled with the built-ins.
#[derive(Clone, Default)]
pub struct ModelRegistry {
    custom: BTreeMap<String, ModelSpec>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a custom model; it shadows a built-in with the same id.
    pub fn register(&mut self, model: ModelSpec) {
        self.custom.insert(model.id.clone(), model);
    }

    pub fn get(&self, id: &str, params: &BTreeMap<String, f64>) -> Result<ModelSpec> {
        match self.custom.get(id) {
            Some(m) if params.is_empty() => Ok(m.clone()),
            Some(_) => Err(invalid(format!("custom model '{id}' takes no parameters"))),
            None => builtin_with(id, params),
        }
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = builtin_ids().into_iter().map(String::from).collect();
        for id in self.custom.keys() {
            if !ids.contains(id) {
                ids.push(id.clone());
            }
        }
        ids
    }
}

/// Sample points on which hypotheses are checked.
#[derive(Debug, Clone)]
pub struct HypothesisGrid {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    /// Pairs `(x, y)` for continuity checks.
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
    pub measure_pairs: Vec<(DiscreteMeasure, DiscreteMeasure)>,
}

impl HypothesisGrid {
    /// Log-spaced radii in `[1e-3, 1e3]` along random directions, 20 times in
    /// `[0, t_max]`, close pairs at separations `1e-8..1`, and random measure
    /// pairs with at most 64 atoms.
    pub fn standard(dim: usize, t_max: f64, seed: u64) -> Self {
        let mut u = StreamKey::new(seed, 0, substream::BATTERY).uniforms();
        let mut n = StreamKey::new(seed, 1, substream::BATTERY).normals();
        let direction = |n: &mut crate::paths::NormalStream| -> Vec<f64> {
            let v: Vec<f64> = (0..dim).map(|_| n.next_standard()).collect();
            let len = norm2(&v).sqrt().max(1e-300);
            v.into_iter().map(|a| a / len).collect()
        };
        let n_dirs = if dim == 1 { 2 } else { 8 };
        let dirs: Vec<Vec<f64>> = if dim == 1 { vec![vec![1.0], vec![-1.0]] } else { (0..n_dirs).map(|_| direction(&mut n)).collect() };
        let mut points = vec![vec![0.0; dim]];
        let n_radii = 1000 / n_dirs;
        for i in 0..n_radii {
            let r = 10f64.powf(-3.0 + 6.0 * i as f64 / (n_radii - 1) as f64);
            for d in &dirs {
                points.push(d.iter().map(|a| a * r).collect());
            }
        }
        let times = (0..20).map(|i| t_max * i as f64 / 19.0).collect();
        let mut pairs = Vec::new();
        for i in 0..400 {
            let base_r = 10f64.powf(-3.0 + 5.0 * u.next_f64()) * if i % 7 == 0 { 0.0 } else { 1.0 };
            let d = direction(&mut n);
            let x: Vec<f64> = d.iter().map(|a| a * base_r * if u.next_f64() < 0.5 { -1.0 } else { 1.0 }).collect();
            let sep = 10f64.powf(-8.0 + 8.0 * u.next_f64());
            let e = direction(&mut n);
            let y = x.iter().zip(&e).map(|(a, b)| a + sep * b).collect();
            pairs.push((x, y));
        }
        let mut measure_pairs = Vec::new();
        for _ in 0..16 {
            let make = |u: &mut crate::paths::UniformStream| {
                let atoms_n = 1 + u.next_index(64);
                let scale = 10f64.powf(-1.0 + 3.0 * u.next_f64());
                let atoms: Vec<f64> = (0..atoms_n * dim).map(|_| scale * (2.0 * u.next_f64() - 1.0)).collect();
                let raw: Vec<f64> = (0..atoms_n).map(|_| u.next_f64()).collect();
                let total: f64 = raw.iter().sum();
                DiscreteMeasure::new(dim, atoms, raw.iter().map(|w| w / total).collect()).expect("valid random measure")
            };
            let a = make(&mut u);
            let b = make(&mut u);
            measure_pairs.push((a, b));
        }
        Self { times, points, pairs, measure_pairs }
    }
}

/// Outcome of one hypothesis on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionResult {
    pub name: &'static str,
    pub pass: bool,
    /// Largest value of `lhs - rhs` over the grid; `<= 0` means satisfied.
    pub worst_residual: f64,
    pub location: String,
    /// Set when the condition does not apply to this model.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisReport {
    pub model: String,
    pub conditions: Vec<ConditionResult>,
    pub verified: bool,
}

impl HypothesisReport {
    pub fn condition(&self, name: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

/// Residual tolerance for a condition to count as satisfied.
pub const HYPOTHESIS_TOL: f64 = 1e-9;

struct Worst {
    name: &'static str,
    value: f64,
    location: String,
}

impl Worst {
    fn new(name: &'static str) -> Self {
        Self { name, value: f64::NEG_INFINITY, location: String::new() }
    }

    fn update(&mut self, value: f64, location: impl FnOnce() -> String) {
        if value > self.value {
            self.value = value;
            self.location = location();
        }
    }

    fn finish(self) -> ConditionResult {
        ConditionResult {
            name: self.name,
            pass: self.value <= HYPOTHESIS_TOL,
            worst_residual: self.value,
            location: self.location,
            skipped: false,
        }
    }
}

fn finite_or(what: &'static str, values: &[f64], location: impl FnOnce() -> String) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::ModelEvaluation { what, location: location() })
    }
}

fn sym_eigen_range(a: &DMatrix<f64>) -> (f64, f64) {
    let eig = a.clone().symmetric_eigenvalues();
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn spectral_norm(a: &[f64], d: usize) -> f64 {
    let m = DMatrix::from_row_slice(d, d, a);
    let (lo, hi) = sym_eigen_range(&m);
    lo.abs().max(hi.abs())
}

/// Points sampled in the closed ball `B(x, eps)`.
fn ball_samples(x: &[f64], eps: f64) -> Vec<Vec<f64>> {
    let d = x.len();
    let mut out = vec![x.to_vec()];
    let steps = if d == 1 { 10 } else { 2 };
    for axis in 0..d {
        for k in 1..=steps {
            let h = eps * k as f64 / steps as f64;
            for sign in [-1.0, 1.0] {
                let mut y = x.to_vec();
                y[axis] += sign * h;
                out.push(y);
            }
        }
    }
    out
}

/// Check ellipticity, the Lyapunov inequalities, the measure-Lipschitz
/// bound, the continuity modulus of `sigma`, the Dini conditions on that
/// modulus and the integrability exponents, pointwise on `grid`.
pub fn verify_hypotheses(model: &ModelSpec, grid: &HypothesisGrid) -> Result<HypothesisReport> {
    if grid.points.is_empty() || grid.times.is_empty() {
        return Err(invalid("hypothesis grid has no points or no times"));
    }
    let d = model.dim;
    let m = model.bm_dim;
    if grid.points.iter().any(|p| p.len() != d) {
        return Err(invalid("hypothesis grid points have the wrong dimension"));
    }
    let c = model.constants;
    let mut conditions = Vec::new();
    let mut sig = vec![0.0; d * m];
    let mut sig2 = vec![0.0; d * m];
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    let mut drift = vec![0.0; d];
    let mut drift2 = vec![0.0; d];

    // weight bounded below by 1, plus compact level sets when unbounded
    let mut w_lower = Worst::new("weight_lower_bound");
    for x in &grid.points {
        let v = model.v(x);
        finite_or("V", &[v], || format!("x = {x:?}"))?;
        w_lower.update(1.0 - v, || format!("x = {x:?}"));
    }
    conditions.push(w_lower.finish());

    let mut compact = Worst::new("compact_level_sets");
    if model.weight_bound.is_some() {
        conditions.push(ConditionResult { skipped: true, ..compact.finish() });
    } else {
        for x in grid.points.iter().filter(|x| norm2(x) > 0.0) {
            let unit: Vec<f64> = x.iter().map(|a| a / norm2(x).sqrt()).collect();
            let along = |r: f64| model.v(&unit.iter().map(|a| a * r).collect::<Vec<_>>());
            let values: Vec<f64> = [1e2, 1e4, 1e6, 1e8].iter().map(|&r| along(r)).collect();
            for w in values.windows(2) {
                compact.update(w[0] - w[1], || format!("ray through {x:?}"));
            }
        }
        conditions.push(compact.finish());
    }

    // ellipticity of a = sigma sigma^T
    let mut ell = Worst::new("ellipticity");
    for &t in &grid.times {
        for x in &grid.points {
            (model.sigma)(t, x, &mut sig);
            finite_or("sigma", &sig, || format!("t = {t}, x = {x:?}"))?;
            let s = DMatrix::from_row_slice(d, m, &sig);
            let a = &s * s.transpose();
            let (lo, hi) = sym_eigen_range(&a);
            ell.update((c.ellipticity.0 - lo).max(hi - c.ellipticity.1), || format!("t = {t}, x = {x:?}"));
        }
    }
    conditions.push(ell.finish());

    // sup_{B(x, eps)} (|grad V| + ||hess V||) <= K V(x)
    let mut lyap_grad = Worst::new("lyapunov_gradient");
    let ball_sup = |x: &[f64], grad: &mut [f64], hess: &mut [f64]| -> Result<f64> {
        let mut sup: f64 = 0.0;
        for y in ball_samples(x, c.epsilon) {
            (model.lyapunov.gradient)(&y, grad);
            (model.lyapunov.hessian)(&y, hess);
            finite_or("V derivatives", grad, || format!("x = {y:?}"))?;
            finite_or("V derivatives", hess, || format!("x = {y:?}"))?;
            sup = sup.max(norm2(grad).sqrt() + spectral_norm(hess, d));
        }
        Ok(sup)
    };
    let mut sups = Vec::with_capacity(grid.points.len());
    for x in &grid.points {
        let sup = ball_sup(x, &mut grad, &mut hess)?;
        sups.push(sup);
        lyap_grad.update(sup - c.k * model.v(x), || format!("x = {x:?}"));
    }
    conditions.push(lyap_grad.finish());

    // <b1, grad V> + eps |b1| sup_B(...) <= K phi(V(x)) for law-free drifts,
    // <= K (V(x) + mu(V)) over the measure grid otherwise
    let mut lyap_drift = Worst::new("lyapunov_drift");
    let measures: Vec<(Vec<f64>, f64)> = if model.measure_dependent() {
        grid.measure_pairs
            .iter()
            .flat_map(|(a, b)| [a, b])
            .filter(|mu| mu.dim() == d)
            .map(|mu| (model.functionals(mu), mu.integral(model.lyapunov.value.as_ref())))
            .collect()
    } else {
        vec![(Vec::new(), 0.0)]
    };
    for &t in &grid.times {
        for (x, sup) in grid.points.iter().zip(&sups) {
            (model.lyapunov.gradient)(x, &mut grad);
            let v = model.v(x);
            for (mf, mu_v) in &measures {
                (model.drift_regular)(t, x, mf, &mut drift);
                finite_or("drift b1", &drift, || format!("t = {t}, x = {x:?}"))?;
                let inner: f64 = drift.iter().zip(&grad).map(|(a, b)| a * b).sum();
                let lhs = inner + c.epsilon * norm2(&drift).sqrt() * sup;
                let rhs = if model.measure_dependent() { c.k * (v + mu_v) } else { c.k * (model.phi_growth)(v) };
                lyap_drift.update(lhs - rhs, || format!("t = {t}, x = {x:?}"));
            }
        }
    }
    conditions.push(lyap_drift.finish());

    // |b(x, mu) - b(x, nu)| <= kappa ||mu - nu||_V
    let mut lip = Worst::new("measure_lipschitz");
    if model.measure_dependent() {
        for (mu, nu) in grid.measure_pairs.iter().filter(|(a, b)| a.dim() == d && b.dim() == d) {
            let dist = weighted_variation_discrete(mu, nu, model.lyapunov.value.as_ref())?;
            let (fa, fb) = (model.functionals(mu), model.functionals(nu));
            for &t in &grid.times {
                for x in &grid.points {
                    (model.drift_regular)(t, x, &fa, &mut drift);
                    (model.drift_regular)(t, x, &fb, &mut drift2);
                    let diff: f64 = drift.iter().zip(&drift2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    lip.update(diff - c.kappa * dist, || format!("t = {t}, x = {x:?}"));
                }
            }
        }
        conditions.push(lip.finish());
    } else {
        conditions.push(ConditionResult { skipped: true, worst_residual: 0.0, ..lip.finish() });
    }

    // ||sigma(x) - sigma(y)|| <= phi(|x - y|)
    let mut modulus = Worst::new("sigma_modulus");
    for &t in &grid.times {
        for (x, y) in &grid.pairs {
            (model.sigma)(t, x, &mut sig);
            (model.sigma)(t, y, &mut sig2);
            let diff: f64 = sig.iter().zip(&sig2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let gap: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            modulus.update(diff - (model.dini_modulus)(gap), || format!("t = {t}, x = {x:?}, y = {y:?}"));
        }
    }
    conditions.push(modulus.finish());

    // modulus shape: phi(0) = 0, positive and nondecreasing on (0, inf)
    let phi = model.dini_modulus.as_ref();
    let mut shape = Worst::new("modulus_shape");
    shape.update(phi(0.0).abs(), || "r = 0".into());
    let mut prev = 0.0;
    for i in 0..=300 {
        let r = 10f64.powf(-12.0 + 15.0 * i as f64 / 300.0);
        let p = phi(r);
        finite_or("Dini modulus", &[p], || format!("r = {r:e}"))?;
        shape.update(prev - p, || format!("r = {r:e}"));
        if p <= 0.0 {
            shape.update(f64::INFINITY, || format!("phi({r:e}) = {p}"));
        }
        prev = p;
    }
    conditions.push(shape.finish());

    let (drop, at) = dini::psi_monotonicity(phi);
    conditions.push(ConditionResult {
        name: "psi_monotone",
        pass: drop < 0.0,
        worst_residual: drop,
        location: format!("r = {at:e}"),
        skipped: false,
    });

    let di = dini::dini_integral(phi, 1e-12)?;
    conditions.push(ConditionResult {
        name: "dini_integral",
        pass: !di.divergent,
        worst_residual: dini::DINI_DECAY_THRESHOLD - di.decay_exponent,
        location: format!("partial integral over [1e-12, 1] = {:.6}", di.partial.last().map(|p| p.1).unwrap_or(f64::NAN)),
        skipped: false,
    });

    // (p0, q0) in the admissible class, and |x|^{-beta} in L^{p0} locally
    let mut expo = Worst::new("integrability_exponents");
    expo.update(2.0 - c.p0.min(c.q0), || format!("p0 = {}, q0 = {}", c.p0, c.q0));
    expo.update(d as f64 / c.p0 + 2.0 / c.q0 - 1.0, || format!("d/p0 + 2/q0 with p0 = {}, q0 = {}", c.p0, c.q0));
    if let Some(beta) = model.singularity_exponent {
        expo.update(c.p0 * beta - d as f64, || format!("p0 * beta = {}", c.p0 * beta));
    }
    let mut expo = expo.finish();
    // the class requires strict inequalities
    expo.pass = expo.worst_residual < 0.0;
    conditions.push(expo);

    let verified = conditions.iter().all(|c| c.pass || c.skipped);
    Ok(HypothesisReport { model: model.id.clone(), conditions, verified })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_verifies() {
        for id in builtin_ids() {
            let m = builtin(id).unwrap();
            let grid = HypothesisGrid::standard(m.dim, 1.0, 1);
            let r = verify_hypotheses(&m, &grid).unwrap();
            let failed: Vec<_> = r.conditions.iter().filter(|c| !c.pass && !c.skipped).collect();
            assert!(r.verified, "{id}: {failed:?}");
        }
    }

    #[test]
    fn v_at_origin_is_one() {
        let m = ou(1.0, 1.0).unwrap();
        assert_eq!(m.v(&[0.0]), 1.0);
    }

    #[test]
    fn unknown_parameter_rejected() {
        let mut p = BTreeMap::new();
        p.insert("gamma".to_string(), 1.0);
        assert!(builtin_with("ou", &p).is_err());
        assert!(builtin("nope").is_err());
    }

    #[test]
    fn weak_modulus_fails_dini_condition() {
        let mut m = ou(1.0, 1.0).unwrap();
        m.dini_modulus = dini::log_modulus(0.5, 1.0);
        let r = verify_hypotheses(&m, &HypothesisGrid::standard(1, 1.0, 2)).unwrap();
        assert!(!r.condition("dini_integral").unwrap().pass);
        assert!(!r.verified);
    }

    #[test]
    fn understated_constant_is_caught() {
        let mut m = cubic();
        m.constants.k = 0.1;
        let r = verify_hypotheses(&m, &HypothesisGrid::standard(1, 1.0, 3)).unwrap();
        assert!(!r.condition("lyapunov_gradient").unwrap().pass);
    }

    #[test]
    fn empty_grid_rejected() {
        let mut g = HypothesisGrid::standard(1, 1.0, 1);
        g.points.clear();
        assert!(verify_hypotheses(&ou(1.0, 1.0).unwrap(), &g).is_err());
    }

    #[test]
    fn non_finite_evaluation_reports_location() {
        let mut m = ou(1.0, 1.0).unwrap();
        m.sigma = Arc::new(|_t, x: &[f64], out: &mut [f64]| out[0] = if x[0] > 100.0 { f64::NAN } else { 1.0 });
        match verify_hypotheses(&m, &HypothesisGrid::standard(1, 1.0, 1)) {
            Err(Error::ModelEvaluation { what: "sigma", .. }) => {}
            other => panic!("expected evaluation error, got {other:?}"),
        }
    }
}
