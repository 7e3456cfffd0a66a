//! Euler-Maruyama particle engine for frozen-flow and self-interacting dynamics.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::metrics::DiscreteMeasure;
use crate::model_zoo::ModelSpec;
use crate::paths::{substream, NormalStream, StreamKey, TimeGrid};

/// Weighted samples in `R^d`, stored row-major `[N][d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

/// Compensated sum; plain summation of `N` copies of `1/N` drifts by `~N eps`.
pub(crate) fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

impl ParticleCloud {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || weights.is_empty() || points.len() != dim * weights.len() {
            return Err(invalid("cloud needs dim >= 1, N >= 1 and N * dim coordinates"));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(invalid("cloud has non-finite coordinates"));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(invalid("cloud weights must be finite and nonnegative"));
        }
        let total = neumaier_sum(weights.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("cloud weights sum to {total}, not 1")));
        }
        Ok(Self { dim, points, weights })
    }

    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(invalid("cloud needs dim >= 1 and a whole number of points"));
        }
        let n = points.len() / dim;
        Self::new(dim, points, vec![1.0 / n as f64; n])
    }

    /// `n` equally weighted copies of `point`.
    pub fn dirac(point: &[f64], n: usize) -> Result<Self> {
        Self::uniform(point.len(), point.iter().copied().cycle().take(point.len() * n).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `sum_i w_i h(x_i)`; a non-finite `h` value is an error.
    pub fn integral(&self, h: &dyn Fn(&[f64]) -> f64) -> Result<f64> {
        let mut acc = 0.0;
        for (x, w) in self.points.chunks_exact(self.dim).zip(&self.weights) {
            let v = h(x);
            if !v.is_finite() {
                return Err(Error::ModelEvaluation { what: "test function", location: format!("x = {x:?}") });
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// Values `mu(h_j)` of the model's test functions under this cloud.
    pub fn functionals(&self, model: &ModelSpec) -> Result<Vec<f64>> {
        model.test_functions.iter().map(|h| self.integral(h.as_ref())).collect()
    }

    pub fn to_measure(&self) -> DiscreteMeasure {
        DiscreteMeasure::new(self.dim, self.points.clone(), self.weights.clone()).expect("cloud is a valid measure")
    }

    /// Coordinate-wise mean.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (x, w) in self.points.chunks_exact(self.dim).zip(&self.weights) {
            for (a, b) in m.iter_mut().zip(x) {
                *a += w * b;
            }
        }
        m
    }
}

pub fn cloud_integral(cloud: &ParticleCloud, h: &dyn Fn(&[f64]) -> f64) -> Result<f64> {
    cloud.integral(h)
}

/// Initial laws that can be sampled into a cloud.
#[derive(Debug, Clone, PartialEq)]
pub enum InitLaw {
    Dirac(Vec<f64>),
    /// Independent `N(mean_j, sd^2)` coordinates.
    Gaussian { mean: Vec<f64>, sd: f64 },
    /// Uniform resampling from the atoms of a measure.
    Resample(DiscreteMeasure),
}

impl InitLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitLaw::Dirac(p) => p.len(),
            InitLaw::Gaussian { mean, .. } => mean.len(),
            InitLaw::Resample(m) => m.dim(),
        }
    }

    /// `n` equally weighted samples, drawn from the initial-law substream.
    pub fn sample(&self, n: usize, seed: u64) -> Result<ParticleCloud> {
        if n == 0 {
            return Err(invalid("cannot sample an empty cloud"));
        }
        let d = self.dim();
        match self {
            InitLaw::Dirac(p) => ParticleCloud::dirac(p, n),
            InitLaw::Gaussian { mean, sd } => {
                if !(*sd >= 0.0) {
                    return Err(invalid("Gaussian initial law needs sd >= 0"));
                }
                let mut z = StreamKey::new(seed, 0, substream::INIT).normals();
                let pts = (0..n * d).map(|k| mean[k % d] + sd * z.next_standard()).collect();
                ParticleCloud::uniform(d, pts)
            }
            InitLaw::Resample(m) => {
                let mut u = StreamKey::new(seed, 0, substream::INIT).uniforms();
                let mut cdf = Vec::with_capacity(m.len());
                let mut acc = 0.0;
                for w in m.masses() {
                    acc += w;
                    cdf.push(acc);
                }
                let mut pts = Vec::with_capacity(n * d);
                for _ in 0..n {
                    let r = u.next_f64() * acc;
                    let j = cdf.partition_point(|&c| c < r).min(m.len() - 1);
                    pts.extend_from_slice(m.atom(j));
                }
                ParticleCloud::uniform(d, pts)
            }
        }
    }
}

/// Clouds on the nodes of a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFlow {
    grid: TimeGrid,
    clouds: Vec<ParticleCloud>,
}

impl MeasureFlow {
    pub fn new(grid: TimeGrid, clouds: Vec<ParticleCloud>) -> Result<Self> {
        if clouds.len() != grid.n_steps() + 1 {
            return Err(invalid("flow needs one cloud per grid node"));
        }
        let (n, d) = (clouds[0].len(), clouds[0].dim());
        if clouds.iter().any(|c| c.len() != n || c.dim() != d) {
            return Err(invalid("flow clouds must share N and dimension"));
        }
        Ok(Self { grid, clouds })
    }

    /// The same cloud at every node.
    pub fn constant(grid: TimeGrid, cloud: ParticleCloud) -> Self {
        let clouds = vec![cloud; grid.n_steps() + 1];
        Self { grid, clouds }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn clouds(&self) -> &[ParticleCloud] {
        &self.clouds
    }

    pub fn at(&self, k: usize) -> &ParticleCloud {
        &self.clouds[k]
    }

    pub fn terminal(&self) -> &ParticleCloud {
        self.clouds.last().expect("flow is nonempty")
    }

    pub fn n_particles(&self) -> usize {
        self.clouds[0].len()
    }

    pub fn dim(&self) -> usize {
        self.clouds[0].dim()
    }
}

/// Engine settings shared by every simulation entry point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Particles leaving this ball are frozen at their last position inside it.
    pub trunc_radius: f64,
    /// Cap on `|b0| dt` per step.
    pub jump_cap: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { trunc_radius: 1e6, jump_cap: 1.0 }
    }
}

impl SimOptions {
    fn validate(&self) -> Result<()> {
        if !(self.trunc_radius > 0.0 && self.jump_cap > 0.0) {
            return Err(invalid("truncation radius and jump cap must be positive"));
        }
        Ok(())
    }
}

/// Trajectories `[N][n_steps + 1][d]` with per-trajectory log-weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    grid: TimeGrid,
    dim: usize,
    n: usize,
    paths: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub frozen: Vec<bool>,
    /// Number of particle-steps where the singular drift was clipped.
    pub clipped_steps: u64,
}

impl PathEnsemble {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn trajectory(&self, i: usize) -> &[f64] {
        let stride = (self.grid.n_steps() + 1) * self.dim;
        &self.paths[i * stride..(i + 1) * stride]
    }

    pub fn state(&self, i: usize, k: usize) -> &[f64] {
        let off = k * self.dim;
        &self.trajectory(i)[off..off + self.dim]
    }

    pub fn frozen_fraction(&self) -> f64 {
        self.frozen.iter().filter(|&&f| f).count() as f64 / self.n as f64
    }

    /// Equally weighted cloud at node `k`.
    pub fn cloud_at(&self, k: usize) -> ParticleCloud {
        let mut pts = Vec::with_capacity(self.n * self.dim);
        for i in 0..self.n {
            pts.extend_from_slice(self.state(i, k));
        }
        ParticleCloud::uniform(self.dim, pts).expect("ensemble states are finite")
    }

    /// Flow of clouds carrying `weights` (the initial cloud's weights).
    pub fn to_flow_with(&self, weights: &[f64]) -> MeasureFlow {
        let clouds = (0..=self.grid.n_steps())
            .map(|k| {
                let mut pts = Vec::with_capacity(self.n * self.dim);
                for i in 0..self.n {
                    pts.extend_from_slice(self.state(i, k));
                }
                ParticleCloud { dim: self.dim, points: pts, weights: weights.to_vec() }
            })
            .collect();
        MeasureFlow { grid: self.grid.clone(), clouds }
    }
}

/// Where the engine reads the law argument of the drift.
#[derive(Debug, Clone, Copy)]
pub enum MeasureArg<'a> {
    /// Read from a given flow at the left node of each step.
    Frozen(&'a MeasureFlow),
    /// The current empirical cloud of the particles themselves.
    SelfConsistent,
}

/// Final state of an engine run.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineOutcome {
    pub terminal: ParticleCloud,
    pub frozen: Vec<bool>,
    pub clipped_steps: u64,
}

impl EngineOutcome {
    pub fn frozen_fraction(&self) -> f64 {
        self.frozen.iter().filter(|&&f| f).count() as f64 / self.frozen.len() as f64
    }
}

struct Scratch {
    b: Vec<f64>,
    b0: Vec<f64>,
    sigma: Vec<f64>,
    dw: Vec<f64>,
    next: Vec<f64>,
}

enum StepResult {
    Moved { clipped: bool },
    Failed(&'static str),
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn step_particle(
    model: &ModelSpec,
    t: f64,
    dt: f64,
    mf: &[f64],
    x: &mut [f64],
    frozen: &mut bool,
    z: &mut NormalStream,
    s: &mut Scratch,
    opts: &SimOptions,
) -> StepResult {
    let (d, m) = (model.dim, model.bm_dim);
    let sq = dt.sqrt();
    for w in s.dw.iter_mut() {
        *w = sq * z.next_standard();
    }
    if *frozen {
        return StepResult::Moved { clipped: false };
    }
    (model.drift_regular)(t, x, mf, &mut s.b);
    if s.b.iter().any(|v| !v.is_finite()) {
        return StepResult::Failed("drift");
    }
    let mut clipped = false;
    if let Some(b0) = &model.drift_singular {
        b0(t, x, &mut s.b0);
        if s.b0.iter().any(|v| !v.is_finite()) {
            return StepResult::Failed("singular drift");
        }
        let size = s.b0.iter().map(|v| v * v).sum::<f64>().sqrt() * dt;
        let scale = if size > opts.jump_cap {
            clipped = true;
            opts.jump_cap / size
        } else {
            1.0
        };
        for (b, c) in s.b.iter_mut().zip(&s.b0) {
            *b += scale * c;
        }
    }
    (model.sigma)(t, x, &mut s.sigma);
    if s.sigma.iter().any(|v| !v.is_finite()) {
        return StepResult::Failed("diffusion");
    }
    let mut r2 = 0.0;
    for i in 0..d {
        let mut v = x[i] + s.b[i] * dt;
        for j in 0..m {
            v += s.sigma[i * m + j] * s.dw[j];
        }
        s.next[i] = v;
        r2 += v * v;
    }
    if !(r2.sqrt() <= opts.trunc_radius) {
        *frozen = true;
    } else {
        x.copy_from_slice(&s.next);
    }
    StepResult::Moved { clipped }
}

/// Shared Euler-Maruyama loop. Particle `i` draws its noise from
/// `StreamKey::noise(seed, i)`, draw `k * m + j` for component `j` of step `k`,
/// so results do not depend on the number of threads. `observer(k, state)`
/// sees the row-major state at every node `k = 0..=n_steps`.
pub fn run_engine<O>(
    model: &ModelSpec,
    init: &ParticleCloud,
    grid: &TimeGrid,
    seed: u64,
    opts: &SimOptions,
    measure: MeasureArg<'_>,
    mut observer: O,
) -> Result<EngineOutcome>
where
    O: FnMut(usize, &[f64]),
{
    opts.validate()?;
    let (d, m, n) = (model.dim, model.bm_dim, init.len());
    if init.dim() != d {
        return Err(invalid(format!("initial cloud has dimension {}, model has {d}", init.dim())));
    }
    if let MeasureArg::Frozen(flow) = measure {
        if flow.grid() != grid {
            return Err(invalid("frozen flow is on a different time grid"));
        }
        if flow.dim() != d {
            return Err(invalid("frozen flow has the wrong dimension"));
        }
    }
    let mut state = init.points().to_vec();
    let mut frozen = vec![false; n];
    let mut streams: Vec<NormalStream> = (0..n as u64).map(|i| StreamKey::noise(seed, i).normals()).collect();
    let mut clipped_steps = 0u64;
    observer(0, &state);
    for k in 0..grid.n_steps() {
        let t = grid.nodes()[k];
        let dt = grid.dt(k);
        let mf = match measure {
            MeasureArg::Frozen(flow) => flow.at(k).functionals(model)?,
            MeasureArg::SelfConsistent => {
                let cloud = ParticleCloud { dim: d, points: std::mem::take(&mut state), weights: init.weights().to_vec() };
                let mf = cloud.functionals(model);
                state = cloud.points;
                mf?
            }
        };
        let (clipped, failed) = state
            .par_chunks_mut(d)
            .zip(frozen.par_iter_mut())
            .zip(streams.par_iter_mut())
            .enumerate()
            .map_init(
                || Scratch { b: vec![0.0; d], b0: vec![0.0; d], sigma: vec![0.0; d * m], dw: vec![0.0; m], next: vec![0.0; d] },
                |s, (i, ((x, fr), z))| match step_particle(model, t, dt, &mf, x, fr, z, s, opts) {
                    StepResult::Moved { clipped } => (clipped as u64, None),
                    StepResult::Failed(what) => (0, Some((i, what))),
                },
            )
            .reduce(
                || (0, None),
                |a, b| {
                    let failed = match (a.1, b.1) {
                        (Some(x), Some(y)) => Some(if x.0 <= y.0 { x } else { y }),
                        (x, y) => x.or(y),
                    };
                    (a.0 + b.0, failed)
                },
            );
        if let Some((trajectory, what)) = failed {
            return Err(Error::BlowUp { trajectory, step: k, what });
        }
        clipped_steps += clipped;
        observer(k + 1, &state);
    }
    let terminal = ParticleCloud { dim: d, points: state, weights: init.weights().to_vec() };
    Ok(EngineOutcome { terminal, frozen, clipped_steps })
}

/// Simulate the SDE with the law argument frozen to `flow`, one trajectory
/// per point of `init`.
pub fn simulate_frozen(
    model: &ModelSpec,
    flow: &MeasureFlow,
    init: &ParticleCloud,
    grid: &TimeGrid,
    seed: u64,
    opts: &SimOptions,
) -> Result<PathEnsemble> {
    let n = init.len();
    let d = model.dim;
    let nodes = grid.n_steps() + 1;
    let mut paths = vec![0.0; n * nodes * d];
    let out = run_engine(model, init, grid, seed, opts, MeasureArg::Frozen(flow), |k, state| {
        for (i, x) in state.chunks_exact(d).enumerate() {
            let off = (i * nodes + k) * d;
            paths[off..off + d].copy_from_slice(x);
        }
    })?;
    Ok(PathEnsemble {
        grid: grid.clone(),
        dim: d,
        n,
        paths,
        log_weights: vec![0.0; n],
        frozen: out.frozen,
        clipped_steps: out.clipped_steps,
    })
}

/// Result of a self-interacting particle run.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractingRun {
    pub flow: MeasureFlow,
    pub frozen: Vec<bool>,
    pub clipped_steps: u64,
}

impl InteractingRun {
    pub fn frozen_fraction(&self) -> f64 {
        self.frozen.iter().filter(|&&f| f).count() as f64 / self.frozen.len() as f64
    }
}

/// Mean-field particle system started from `init`, law argument read from
/// the particles' own empirical cloud at the left node.
pub fn simulate_interacting_from(
    model: &ModelSpec,
    init: &ParticleCloud,
    grid: &TimeGrid,
    seed: u64,
    opts: &SimOptions,
) -> Result<InteractingRun> {
    if init.len() < 2 {
        return Err(invalid("interacting system needs at least two particles"));
    }
    let mut clouds = Vec::with_capacity(grid.n_steps() + 1);
    let out = run_engine(model, init, grid, seed, opts, MeasureArg::SelfConsistent, |_, state| {
        clouds.push(ParticleCloud { dim: init.dim(), points: state.to_vec(), weights: init.weights().to_vec() })
    })?;
    Ok(InteractingRun {
        flow: MeasureFlow { grid: grid.clone(), clouds },
        frozen: out.frozen,
        clipped_steps: out.clipped_steps,
    })
}

/// [`simulate_interacting_from`] with `n` particles drawn from `init`.
pub fn simulate_interacting(
    model: &ModelSpec,
    n: usize,
    init: &InitLaw,
    grid: &TimeGrid,
    seed: u64,
    opts: &SimOptions,
) -> Result<InteractingRun> {
    if n < 2 {
        return Err(invalid("interacting system needs at least two particles"));
    }
    simulate_interacting_from(model, &init.sample(n, seed)?, grid, seed, opts)
}

/// Terminal cloud only, without storing the flow. The law argument is
/// self-consistent for measure-dependent models.
pub fn simulate_terminal(
    model: &ModelSpec,
    init: &ParticleCloud,
    grid: &TimeGrid,
    seed: u64,
    opts: &SimOptions,
) -> Result<EngineOutcome> {
    run_engine(model, init, grid, seed, opts, MeasureArg::SelfConsistent, |_, _| {})
}

fn header(d: usize) -> String {
    let coords: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    coords.join(",")
}

/// CSV with one row per particle and node: `step,time,particle,weight,x0,..`.
pub fn write_flow_csv<W: Write>(flow: &MeasureFlow, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut head = vec!["step".to_string(), "time".into(), "particle".into(), "weight".into()];
    head.extend(header(flow.dim()).split(',').map(String::from));
    w.write_record(&head)?;
    for (k, cloud) in flow.clouds.iter().enumerate() {
        let t = flow.grid.nodes()[k];
        for i in 0..cloud.len() {
            let mut row = vec![k.to_string(), format!("{t:e}"), i.to_string(), format!("{:e}", cloud.weights[i])];
            row.extend(cloud.point(i).iter().map(|v| format!("{v:e}")));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// CSV with one row per trajectory and node:
/// `trajectory,step,time,log_weight,frozen,x0,..`.
pub fn write_ensemble_csv<W: Write>(ens: &PathEnsemble, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut head = vec!["trajectory".to_string(), "step".into(), "time".into(), "log_weight".into(), "frozen".into()];
    head.extend(header(ens.dim).split(',').map(String::from));
    w.write_record(&head)?;
    for i in 0..ens.n {
        for (k, t) in ens.grid.nodes().iter().enumerate() {
            let mut row = vec![
                i.to_string(),
                k.to_string(),
                format!("{t:e}"),
                format!("{:e}", ens.log_weights[i]),
                (ens.frozen[i] as u8).to_string(),
            ];
            row.extend(ens.state(i, k).iter().map(|v| format!("{v:e}")));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub const FLOW_MAGIC: &[u8; 5] = b"MVSF1";

/// Binary flow: magic, little-endian u64 `d, N, n_steps`, the node times,
/// then per node the `N` weights followed by the `N * d` coordinates.
pub fn write_flow_binary<W: Write>(flow: &MeasureFlow, mut out: W) -> Result<()> {
    out.write_all(FLOW_MAGIC)?;
    for v in [flow.dim() as u64, flow.n_particles() as u64, flow.grid.n_steps() as u64] {
        out.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::new();
    for t in flow.grid.nodes() {
        buf.extend_from_slice(&t.to_le_bytes());
    }
    for c in &flow.clouds {
        for v in c.weights.iter().chain(&c.points) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_flow_binary<R: Read>(mut input: R) -> Result<MeasureFlow> {
    let mut magic = [0u8; 5];
    input.read_exact(&mut magic)?;
    if &magic != FLOW_MAGIC {
        return Err(Error::Format("not an MVSF1 flow file".into()));
    }
    let mut word = [0u8; 8];
    let mut read_u64 = |input: &mut R| -> Result<u64> {
        input.read_exact(&mut word)?;
        Ok(u64::from_le_bytes(word))
    };
    let d = read_u64(&mut input)? as usize;
    let n = read_u64(&mut input)? as usize;
    let steps = read_u64(&mut input)? as usize;
    let total = (steps + 1).checked_mul(1 + n * (d + 1)).filter(|&t| t < 1 << 34);
    let total = total.ok_or_else(|| Error::Format("implausible MVSF1 header".into()))?;
    let mut bytes = vec![0u8; total * 8];
    input.read_exact(&mut bytes)?;
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let grid = TimeGrid::from_nodes(vals[..=steps].to_vec())?;
    let mut clouds = Vec::with_capacity(steps + 1);
    let mut off = steps + 1;
    for _ in 0..=steps {
        let w = vals[off..off + n].to_vec();
        let p = vals[off + n..off + n + n * d].to_vec();
        off += n + n * d;
        clouds.push(ParticleCloud::new(d, p, w)?);
    }
    MeasureFlow::new(grid, clouds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_zoo;
    use std::sync::Arc;

    fn still_model() -> ModelSpec {
        let mut m = model_zoo::ou(1.0, 1.0).unwrap();
        m.drift_regular = Arc::new(|_t, _x, _mf, out: &mut [f64]| out[0] = 0.0);
        m.sigma = Arc::new(|_t, _x, out: &mut [f64]| out[0] = 0.0);
        m
    }

    #[test]
    fn cloud_integral_examples() {
        let c = ParticleCloud::uniform(1, vec![-1.0, 1.0]).unwrap();
        assert_eq!(cloud_integral(&c, &|x: &[f64]| x[0] * x[0]).unwrap(), 1.0);
        assert_eq!(cloud_integral(&c, &|_: &[f64]| 1.0).unwrap(), 1.0);
        let ou = model_zoo::ou(1.0, 1.0).unwrap();
        let z = ParticleCloud::dirac(&[0.0], 1).unwrap();
        assert_eq!(cloud_integral(&z, ou.lyapunov.value.as_ref()).unwrap(), 1.0);
        assert!(cloud_integral(&c, &|_: &[f64]| f64::NAN).is_err());
    }

    #[test]
    fn cloud_validation() {
        assert!(ParticleCloud::new(1, vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(ParticleCloud::new(1, vec![0.0, f64::INFINITY], vec![0.5, 0.5]).is_err());
        assert!(ParticleCloud::uniform(1, vec![0.0; 1_000_000]).is_ok());
    }

    #[test]
    fn zero_coefficients_keep_paths_constant() {
        let m = still_model();
        let grid = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let init = ParticleCloud::uniform(1, vec![0.5, -2.0, 3.0]).unwrap();
        let flow = MeasureFlow::constant(grid.clone(), init.clone());
        let e = simulate_frozen(&m, &flow, &init, &grid, 1, &SimOptions::default()).unwrap();
        for i in 0..3 {
            assert!(e.trajectory(i).iter().all(|&v| v == init.point(i)[0]));
        }
    }

    #[test]
    fn constant_mean_field_drift_is_exact() {
        let mut m = still_model();
        m.test_functions = vec![Arc::new(|_: &[f64]| 2.0)];
        m.drift_regular = Arc::new(|_t, _x, mf, out: &mut [f64]| out[0] = mf[0]);
        let grid = TimeGrid::uniform(0.0, 1.0, 8).unwrap();
        let init = ParticleCloud::uniform(1, vec![0.0, 1.0]).unwrap();
        let flow = MeasureFlow::constant(grid.clone(), init.clone());
        let e = simulate_frozen(&m, &flow, &init, &grid, 1, &SimOptions::default()).unwrap();
        for (k, t) in grid.nodes().iter().enumerate() {
            assert_eq!(e.state(0, k)[0], 2.0 * t);
            assert_eq!(e.state(1, k)[0], 1.0 + 2.0 * t);
        }
    }

    #[test]
    fn superlinear_drift_freezes_instead_of_overflowing() {
        let m = model_zoo::cubic();
        let grid = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let init = ParticleCloud::uniform(1, vec![0.0, 50.0]).unwrap();
        let out = simulate_terminal(&m, &init, &grid, 3, &SimOptions::default()).unwrap();
        assert!(!out.frozen[0] && out.frozen[1]);
        assert!(out.terminal.point(1)[0].abs() <= 1e6);
    }

    #[test]
    fn singular_kick_is_clipped() {
        let m = model_zoo::singular_kick(0.4).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let init = ParticleCloud::uniform(1, vec![1e-12, 0.5]).unwrap();
        let out = simulate_terminal(&m, &init, &grid, 3, &SimOptions { jump_cap: 1e-3, ..Default::default() }).unwrap();
        assert!(out.clipped_steps > 0);
    }

    #[test]
    fn nan_drift_reports_trajectory_and_step() {
        let mut m = still_model();
        m.drift_regular = Arc::new(|t, x, _mf, out: &mut [f64]| out[0] = if t > 0.25 && x[0] > 0.0 { f64::NAN } else { 0.0 });
        let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let init = ParticleCloud::uniform(1, vec![-1.0, 1.0, 2.0]).unwrap();
        match simulate_terminal(&m, &init, &grid, 1, &SimOptions::default()) {
            Err(Error::BlowUp { trajectory: 1, step: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn binary_roundtrip() {
        let grid = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        let m = model_zoo::ou(1.0, 1.0).unwrap();
        let init = ParticleCloud::uniform(1, vec![0.0, 1.0, 2.0]).unwrap();
        let run = simulate_interacting_from(&m, &init, &grid, 9, &SimOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_flow_binary(&run.flow, &mut buf).unwrap();
        assert_eq!(&buf[..5], b"MVSF1");
        assert_eq!(read_flow_binary(&buf[..]).unwrap(), run.flow);
        assert!(read_flow_binary(&b"MVSF2xxxxxxxx"[..]).is_err());
    }

    #[test]
    fn resample_law_hits_atoms() {
        let mu = DiscreteMeasure::new(1, vec![-1.0, 5.0], vec![0.25, 0.75]).unwrap();
        let c = InitLaw::Resample(mu).sample(4000, 2).unwrap();
        let frac = c.points().iter().filter(|&&x| x == 5.0).count() as f64 / 4000.0;
        assert!((frac - 0.75).abs() < 0.03);
    }
}
