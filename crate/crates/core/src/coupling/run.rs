//! Coupled simulation with drift correction and Girsanov reweighting.
//!
//! `X` follows the SDE from `x`. `Y` starts at `y`, shares the Brownian
//! increments and gets the extra drift `sigma(Y) xi` with
//! `xi = sigma^T (sigma sigma^T)^{-1}(X) (X - Y) / gamma_s`, which steers it
//! onto `X` by time `t`. Under `dQ = R dP` with
//! `log R = -sum xi . dW - 1/2 sum |xi|^2 ds`, the increments `dW + xi ds`
//! are again Brownian, so `Y` is a copy of the process started at `y`.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::gamma::{gamma_schedule, GammaSchedule};
use crate::error::{invalid, Error, Result};
use crate::model_zoo::ModelSpec;
use crate::particle::{MeasureFlow, SimOptions};
use crate::paths::{NormalStream, StreamKey, TimeGrid};

/// Inputs shared by every run of a coupling batch.
#[derive(Debug, Clone)]
pub struct CouplingSetup<'a> {
    pub model: &'a ModelSpec,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Target time; the schedule `gamma` vanishes there.
    pub t: f64,
    pub grid: &'a TimeGrid,
    /// Law argument for measure-dependent models, read at the left node.
    pub flow: Option<&'a MeasureFlow>,
    pub opts: SimOptions,
}

/// Full record of one coupled run up to its stopping node.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingRun {
    /// Nodes `0..=stop` of the grid, row-major `[stop + 1][d]`.
    pub x_path: Vec<f64>,
    pub y_path: Vec<f64>,
    /// `xi` at nodes `0..stop`, row-major `[stop][m]`.
    pub xi_path: Vec<f64>,
    /// `log R` at nodes `0..=stop`.
    pub log_r: Vec<f64>,
    /// Time at which a path left the truncation ball, if it did.
    pub tau: Option<f64>,
    pub summary: RunSummary,
}

/// What a batch keeps of each run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub log_r: f64,
    /// `|X - Y|` at the stopping node.
    pub gap: f64,
    /// Left-point sum of `|X - Y|^2 / gamma^2 ds`.
    pub gap_energy: f64,
    pub truncated: bool,
}

/// Summaries and terminal states of a batch of independent coupled runs.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBatch {
    pub dim: usize,
    pub k: f64,
    /// Grid node at which every run stops (the last node before `t`).
    pub stop: usize,
    pub stop_time: f64,
    pub runs: Vec<RunSummary>,
    /// Terminal `X` and `Y`, row-major `[n_runs][d]`.
    pub x_end: Vec<f64>,
    pub y_end: Vec<f64>,
}

impl CouplingBatch {
    pub fn weights(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.log_r.exp()).collect()
    }

    pub fn truncated_fraction(&self) -> f64 {
        self.runs.iter().filter(|r| r.truncated).count() as f64 / self.runs.len() as f64
    }
}

struct Coupler<'a> {
    model: &'a ModelSpec,
    schedule: GammaSchedule,
    grid: &'a TimeGrid,
    stop: usize,
    mf: Vec<Vec<f64>>,
    opts: SimOptions,
}

/// Per-run mutable state and scratch space.
struct Pair {
    x: Vec<f64>,
    y: Vec<f64>,
    diff: Vec<f64>,
    bx: Vec<f64>,
    by: Vec<f64>,
    b0: Vec<f64>,
    gx: Vec<f64>,
    gy: Vec<f64>,
    xi: Vec<f64>,
    dw: Vec<f64>,
    log_r: f64,
    gap_energy: f64,
}

impl Pair {
    fn new(x: &[f64], y: &[f64], m: usize) -> Self {
        let d = x.len();
        Self {
            x: x.to_vec(),
            y: y.to_vec(),
            diff: vec![0.0; d],
            bx: vec![0.0; d],
            by: vec![0.0; d],
            b0: vec![0.0; d],
            gx: vec![0.0; d * m],
            gy: vec![0.0; d * m],
            xi: vec![0.0; m],
            dw: vec![0.0; m],
            log_r: 0.0,
            gap_energy: 0.0,
        }
    }

    fn gap(&self) -> f64 {
        self.x.iter().zip(&self.y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

fn tamed_drift(model: &ModelSpec, t: f64, dt: f64, x: &[f64], mf: &[f64], out: &mut [f64], b0: &mut [f64], cap: f64) {
    (model.drift_regular)(t, x, mf, out);
    if let Some(f) = &model.drift_singular {
        f(t, x, b0);
        let size = b0.iter().map(|v| v * v).sum::<f64>().sqrt() * dt;
        let scale = if size > cap { cap / size } else { 1.0 };
        for (o, b) in out.iter_mut().zip(b0.iter()) {
            *o += scale * b;
        }
    }
}

impl<'a> Coupler<'a> {
    fn new(setup: &CouplingSetup<'a>) -> Result<Self> {
        let model = setup.model;
        let grid = setup.grid;
        let d = model.dim;
        if setup.x.len() != d || setup.y.len() != d {
            return Err(invalid("start points have the wrong dimension"));
        }
        if grid.t0() != 0.0 {
            return Err(invalid("coupling grids must start at time 0"));
        }
        if !(setup.t > 0.0 && setup.t <= grid.t1() * (1.0 + 1e-12)) {
            return Err(invalid(format!("target time {} outside (0, {}]", setup.t, grid.t1())));
        }
        let schedule = gamma_schedule(model.constants.k, setup.t)?;
        let slack = 1e-9 * grid.step();
        let stop = grid.nodes().iter().rposition(|&s| s < setup.t - slack).unwrap_or(0);
        let mf = match (model.measure_dependent(), setup.flow) {
            (false, _) => vec![Vec::new(); stop + 1],
            (true, Some(flow)) => {
                if flow.grid() != grid {
                    return Err(invalid("coupling flow is on a different grid"));
                }
                (0..=stop).map(|k| flow.at(k).functionals(model)).collect::<Result<_>>()?
            }
            (true, None) => return Err(invalid("measure-dependent model needs a frozen flow for coupling")),
        };
        Ok(Self { model, schedule, grid, stop, mf, opts: setup.opts })
    }

    /// Advance one step from node `k`; returns `false` if a path left the ball.
    fn step(&self, k: usize, p: &mut Pair, z: &mut NormalStream) -> Result<bool> {
        let model = self.model;
        let (d, m) = (model.dim, model.bm_dim);
        let s = self.grid.nodes()[k];
        let h = self.grid.dt(k);
        let gamma = self.schedule.gamma(s);
        for (w, ..) in p.dw.iter_mut().zip(0..m) {
            *w = h.sqrt() * z.next_standard();
        }
        let cap = self.opts.jump_cap;
        tamed_drift(model, s, h, &p.x, &self.mf[k], &mut p.bx, &mut p.b0, cap);
        tamed_drift(model, s, h, &p.y, &self.mf[k], &mut p.by, &mut p.b0, cap);
        (model.sigma)(s, &p.x, &mut p.gx);
        (model.sigma)(s, &p.y, &mut p.gy);
        if p.bx.iter().chain(&p.by).chain(&p.gx).chain(&p.gy).any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { trajectory: 0, step: k, what: "coupled coefficients" });
        }
        for i in 0..d {
            p.diff[i] = (p.x[i] - p.y[i]) / gamma;
        }
        if d == 1 && m == 1 {
            if p.gx[0].abs() < 1e-12 {
                return Err(Error::Ellipticity { location: format!("x = {:?}", p.x) });
            }
            p.xi[0] = p.diff[0] / p.gx[0];
        } else {
            let g = DMatrix::from_row_slice(d, m, &p.gx);
            let a = &g * g.transpose();
            let chol = a.cholesky().ok_or_else(|| Error::Ellipticity { location: format!("x = {:?}", p.x) })?;
            let sol = chol.solve(&DVector::from_column_slice(&p.diff));
            let xi = g.transpose() * sol;
            p.xi.copy_from_slice(xi.as_slice());
        }
        let xi2: f64 = p.xi.iter().map(|v| v * v).sum();
        let xi_dw: f64 = p.xi.iter().zip(&p.dw).map(|(a, b)| a * b).sum();
        p.log_r += -xi_dw - 0.5 * xi2 * h;
        p.gap_energy += p.diff.iter().map(|v| v * v).sum::<f64>() * h;
        let (mut rx, mut ry) = (0.0, 0.0);
        for i in 0..d {
            let mut nx = p.x[i] + p.bx[i] * h;
            let mut ny = p.y[i] + p.by[i] * h;
            for j in 0..m {
                nx += p.gx[i * m + j] * p.dw[j];
                ny += p.gy[i * m + j] * (p.dw[j] + p.xi[j] * h);
            }
            p.x[i] = nx;
            p.y[i] = ny;
            rx += nx * nx;
            ry += ny * ny;
        }
        let r = self.opts.trunc_radius;
        Ok(rx.sqrt() <= r && ry.sqrt() <= r)
    }

    fn run<O: FnMut(usize, &Pair)>(&self, x: &[f64], y: &[f64], key: StreamKey, mut observe: O) -> Result<(Pair, Option<usize>)> {
        let mut p = Pair::new(x, y, self.model.bm_dim);
        let mut z = key.normals();
        observe(0, &p);
        for k in 0..self.stop {
            let inside = self.step(k, &mut p, &mut z).map_err(|e| match e {
                Error::BlowUp { step, what, .. } => Error::BlowUp { trajectory: key.trajectory_id as usize, step, what },
                other => other,
            })?;
            observe(k + 1, &p);
            if !inside {
                return Ok((p, Some(k + 1)));
            }
        }
        Ok((p, None))
    }
}

/// One coupled run with full paths, noise from `StreamKey::noise(seed, 0)`.
pub fn coupled_simulate(setup: &CouplingSetup<'_>, seed: u64) -> Result<CouplingRun> {
    let c = Coupler::new(setup)?;
    let (d, m) = (setup.model.dim, setup.model.bm_dim);
    let mut x_path = Vec::with_capacity((c.stop + 1) * d);
    let mut y_path = Vec::with_capacity((c.stop + 1) * d);
    let mut xi_path = Vec::with_capacity(c.stop * m);
    let mut log_r = Vec::with_capacity(c.stop + 1);
    let (p, exit) = c.run(&setup.x, &setup.y, StreamKey::noise(seed, 0), |k, p| {
        x_path.extend_from_slice(&p.x);
        y_path.extend_from_slice(&p.y);
        log_r.push(p.log_r);
        if k > 0 {
            xi_path.extend_from_slice(&p.xi);
        }
    })?;
    Ok(CouplingRun {
        x_path,
        y_path,
        xi_path,
        log_r,
        tau: exit.map(|k| setup.grid.nodes()[k]),
        summary: RunSummary { log_r: p.log_r, gap: p.gap(), gap_energy: p.gap_energy, truncated: exit.is_some() },
    })
}

/// `n_runs` independent coupled runs; run `i` draws from `StreamKey::noise(seed, i)`.
pub fn coupled_batch(setup: &CouplingSetup<'_>, n_runs: usize, seed: u64) -> Result<CouplingBatch> {
    if n_runs == 0 {
        return Err(invalid("coupling batch needs at least one run"));
    }
    let c = Coupler::new(setup)?;
    let results: Vec<Result<(Pair, Option<usize>)>> = (0..n_runs as u64)
        .into_par_iter()
        .map(|i| c.run(&setup.x, &setup.y, StreamKey::noise(seed, i), |_, _| {}))
        .collect();
    let d = setup.model.dim;
    let mut runs = Vec::with_capacity(n_runs);
    let mut x_end = Vec::with_capacity(n_runs * d);
    let mut y_end = Vec::with_capacity(n_runs * d);
    for r in results {
        let (p, exit) = r?;
        runs.push(RunSummary { log_r: p.log_r, gap: p.gap(), gap_energy: p.gap_energy, truncated: exit.is_some() });
        x_end.extend_from_slice(&p.x);
        y_end.extend_from_slice(&p.y);
    }
    Ok(CouplingBatch {
        dim: d,
        k: setup.model.constants.k,
        stop: c.stop,
        stop_time: setup.grid.nodes()[c.stop],
        runs,
        x_end,
        y_end,
    })
}

/// Reweighted meeting statistics of a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingSuccess {
    /// `sum R_i 1{gap_i > delta} / sum R_i`.
    pub miss_probability: f64,
    /// `sum R_i exp(lambda E_i) / sum R_i` with `lambda = 1 / (2 K^2)` and
    /// `E_i` the gap energy.
    pub exp_moment: f64,
    pub any_truncated: bool,
}

pub fn coupling_success(runs: &[RunSummary], k: f64, delta: f64) -> Result<CouplingSuccess> {
    if runs.is_empty() || runs.iter().all(|r| r.truncated) {
        return Err(Error::DegenerateSample("every coupling run was truncated".into()));
    }
    if !(k > 0.0) {
        return Err(invalid("K must be positive"));
    }
    let lambda = 1.0 / (2.0 * k * k);
    let (mut total, mut miss, mut expo) = (0.0, 0.0, 0.0);
    for r in runs {
        let w = r.log_r.exp();
        total += w;
        if r.gap > delta {
            miss += w;
        }
        expo += w * (lambda * r.gap_energy).exp();
    }
    Ok(CouplingSuccess {
        miss_probability: miss / total,
        exp_moment: expo / total,
        any_truncated: runs.iter().any(|r| r.truncated),
    })
}

pub const COUPLING_MAGIC: &[u8; 5] = b"MVCR1";

/// Binary batch: magic, little-endian u64 `d, n_runs, stop`, f64 `K, stop_time`,
/// then per run `log_r, gap, gap_energy, truncated (0/1)`, then `x_end`, `y_end`.
pub fn write_batch_binary<W: Write>(batch: &CouplingBatch, mut out: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(COUPLING_MAGIC);
    for v in [batch.dim as u64, batch.runs.len() as u64, batch.stop as u64] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in [batch.k, batch.stop_time] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for r in &batch.runs {
        for v in [r.log_r, r.gap, r.gap_energy, r.truncated as u8 as f64] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in batch.x_end.iter().chain(&batch.y_end) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_batch_binary<R: Read>(mut input: R) -> Result<CouplingBatch> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 45 || &bytes[..5] != COUPLING_MAGIC {
        return Err(Error::Format("not an MVCR1 coupling file".into()));
    }
    let word = |i: usize| -> [u8; 8] { bytes[5 + 8 * i..13 + 8 * i].try_into().expect("8 bytes") };
    let d = u64::from_le_bytes(word(0)) as usize;
    let n = u64::from_le_bytes(word(1)) as usize;
    let stop = u64::from_le_bytes(word(2)) as usize;
    let k = f64::from_le_bytes(word(3));
    let stop_time = f64::from_le_bytes(word(4));
    let expected = n.checked_mul(4 + 2 * d).map(|w| 45 + 8 * w);
    if expected != Some(bytes.len()) {
        return Err(Error::Format("MVCR1 file has the wrong length".into()));
    }
    let vals: Vec<f64> = bytes[45..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let runs = vals[..4 * n]
        .chunks_exact(4)
        .map(|c| RunSummary { log_r: c[0], gap: c[1], gap_energy: c[2], truncated: c[3] != 0.0 })
        .collect();
    let x_end = vals[4 * n..4 * n + n * d].to_vec();
    let y_end = vals[4 * n + n * d..].to_vec();
    Ok(CouplingBatch { dim: d, k, stop, stop_time, runs, x_end, y_end })
}
