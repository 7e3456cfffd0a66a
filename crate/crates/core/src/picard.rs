//! Fixed-point iteration on measure flows and the weighted sup-in-time metric.

use std::io::Write;

use crate::error::{invalid, Result};
use crate::metrics::{weighted_variation_histogram, HistogramBox, HistogramMeasure, DEFAULT_RESOLUTION};
use crate::model_zoo::ModelSpec;
use crate::particle::{run_engine, MeasureArg, MeasureFlow, ParticleCloud, SimOptions};
use crate::paths::TimeGrid;

/// How clouds are binned before comparing them in `||.||_V`.
#[derive(Debug, Clone, PartialEq)]
pub enum Binning {
    /// A fresh pooled percentile box for every pair of clouds.
    Pooled { resolution: usize },
    /// One box per grid node, shared by every comparison.
    Fixed(Vec<HistogramBox>),
}

/// Per-node pooled boxes over several flows on the same grid.
pub fn node_boxes(flows: &[&MeasureFlow], resolution: usize) -> Result<Vec<HistogramBox>> {
    let first = flows.first().ok_or_else(|| invalid("need at least one flow"))?;
    if flows.iter().any(|f| f.grid() != first.grid() || f.dim() != first.dim()) {
        return Err(invalid("flows must share grid and dimension"));
    }
    (0..=first.grid().n_steps())
        .map(|k| {
            let sets: Vec<&[f64]> = flows.iter().map(|f| f.at(k).points()).collect();
            HistogramBox::pooled(first.dim(), &sets, resolution)
        })
        .collect()
}

fn node_distance(a: &ParticleCloud, b: &ParticleCloud, bbox: &HistogramBox, v: &dyn Fn(&[f64]) -> f64) -> Result<f64> {
    let ha = HistogramMeasure::from_points(bbox, a.points(), a.weights())?;
    let hb = HistogramMeasure::from_points(bbox, b.points(), b.weights())?;
    weighted_variation_histogram(&ha, &hb, v)
}

/// `sup_k exp(-lambda t_k) ||a_k - b_k||_V` over the grid nodes.
pub fn rho_lambda(a: &MeasureFlow, b: &MeasureFlow, lambda: f64, v: &dyn Fn(&[f64]) -> f64, binning: &Binning) -> Result<f64> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid("lambda must be finite and >= 0"));
    }
    if a.grid() != b.grid() || a.dim() != b.dim() {
        return Err(invalid("flows must share grid and dimension"));
    }
    let nodes = a.grid().nodes();
    let t0 = nodes[0];
    let mut sup: f64 = 0.0;
    for (k, &t) in nodes.iter().enumerate() {
        let dist = match binning {
            Binning::Pooled { resolution } => {
                let bbox = HistogramBox::pooled(a.dim(), &[a.at(k).points(), b.at(k).points()], *resolution)?;
                node_distance(a.at(k), b.at(k), &bbox, v)?
            }
            Binning::Fixed(boxes) => {
                let bbox = boxes.get(k).ok_or_else(|| invalid("fewer boxes than grid nodes"))?;
                node_distance(a.at(k), b.at(k), bbox, v)?
            }
        };
        sup = sup.max((-lambda * (t - t0)).exp() * dist);
    }
    Ok(sup)
}

/// One application of the Picard map: the flow of empirical laws of the SDE
/// whose law argument is frozen to `flow`. Reusing `seed` gives common
/// random numbers across iterations.
pub fn picard_map(
    model: &ModelSpec,
    flow: &MeasureFlow,
    init: &ParticleCloud,
    grid: &TimeGrid,
    seed: u64,
    opts: &SimOptions,
) -> Result<MeasureFlow> {
    let mut clouds = Vec::with_capacity(grid.n_steps() + 1);
    run_engine(model, init, grid, seed, opts, MeasureArg::Frozen(flow), |_, state| {
        clouds.push(ParticleCloud::new(init.dim(), state.to_vec(), init.weights().to_vec()))
    })?;
    MeasureFlow::new(grid.clone(), clouds.into_iter().collect::<Result<_>>()?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardConfig {
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub resolution: usize,
    pub sim: SimOptions,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self { lambda: 20.0, tol: 1e-3, max_iter: 8, resolution: DEFAULT_RESOLUTION, sim: SimOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardDiagnostics {
    /// `distances[i]` is the distance between iterates `i + 1` and `i`.
    pub distances: Vec<f64>,
    /// `ratios[i] = distances[i] / distances[i - 1]`; absent for the first
    /// iteration and whenever the previous distance is zero.
    pub ratios: Vec<Option<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest truncated fraction over all iterations.
    pub frozen_fraction: f64,
}

impl PicardDiagnostics {
    /// CSV `iteration,rho_lambda,ratio` with iterations numbered from 1.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "rho_lambda", "ratio"])?;
        for (i, (d, r)) in self.distances.iter().zip(&self.ratios).enumerate() {
            let ratio = r.map(|r| format!("{r:e}")).unwrap_or_default();
            w.write_record([(i + 1).to_string(), format!("{d:e}"), ratio])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Iterate the Picard map from the constant-in-time flow of `init` until two
/// successive iterates are closer than `tol` in `rho_lambda`. Distances use
/// per-node boxes fixed from the initial flow and the first iterate.
pub fn picard_solve(
    model: &ModelSpec,
    init: &ParticleCloud,
    grid: &TimeGrid,
    cfg: &PicardConfig,
    seed: u64,
) -> Result<(MeasureFlow, PicardDiagnostics)> {
    if !(cfg.tol > 0.0) || cfg.max_iter < 2 {
        return Err(invalid("picard needs tol > 0 and max_iter >= 2"));
    }
    let v = model.lyapunov.value.clone();
    let mut prev = MeasureFlow::constant(grid.clone(), init.clone());
    let mut binning = None;
    let mut diag = PicardDiagnostics { distances: Vec::new(), ratios: Vec::new(), iterations: 0, converged: false, frozen_fraction: 0.0 };
    for it in 0..cfg.max_iter {
        let mut clouds = Vec::with_capacity(grid.n_steps() + 1);
        let out = run_engine(model, init, grid, seed, &cfg.sim, MeasureArg::Frozen(&prev), |_, state| {
            clouds.push(state.to_vec())
        })?;
        diag.frozen_fraction = diag.frozen_fraction.max(out.frozen_fraction());
        let clouds = clouds
            .into_iter()
            .map(|p| ParticleCloud::new(init.dim(), p, init.weights().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let next = MeasureFlow::new(grid.clone(), clouds)?;
        let bins = match &binning {
            Some(b) => b,
            None => binning.insert(Binning::Fixed(node_boxes(&[&prev, &next], cfg.resolution)?)),
        };
        let d = rho_lambda(&next, &prev, cfg.lambda, v.as_ref(), bins)?;
        let ratio = match diag.distances.last() {
            Some(&p) if it >= 1 && p > 0.0 => Some(d / p),
            _ => None,
        };
        diag.distances.push(d);
        diag.ratios.push(ratio);
        diag.iterations = it + 1;
        prev = next;
        if d < cfg.tol {
            diag.converged = true;
            break;
        }
    }
    Ok((prev, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_zoo;
    use std::sync::Arc;

    #[test]
    fn two_node_flows_differing_at_the_end() {
        let grid = TimeGrid::uniform(0.0, 1.0, 1).unwrap();
        let a0 = ParticleCloud::uniform(1, vec![0.0, 1.0]).unwrap();
        let b1 = ParticleCloud::uniform(1, vec![0.0, 3.0]).unwrap();
        let a = MeasureFlow::new(grid.clone(), vec![a0.clone(), a0.clone()]).unwrap();
        let b = MeasureFlow::new(grid.clone(), vec![a0.clone(), b1]).unwrap();
        let boxes = vec![HistogramBox::new(vec![-0.5], vec![3.5], 4).unwrap(); 2];
        let v = |x: &[f64]| 1.0 + x[0] * x[0];
        // cells centred at 0, 1, 2, 3: masses 1/2 move from 1 to 3
        let by_hand = 0.5 * (1.0 + 1.0) + 0.5 * (1.0 + 9.0);
        let got = rho_lambda(&a, &b, 2.0, &v, &Binning::Fixed(boxes.clone())).unwrap();
        assert!((got - (-2f64).exp() * by_hand).abs() < 1e-14);
        let plain = rho_lambda(&a, &b, 0.0, &v, &Binning::Fixed(boxes)).unwrap();
        assert!((plain - by_hand).abs() < 1e-14);
        assert_eq!(rho_lambda(&a, &a, 1.0, &v, &Binning::Pooled { resolution: 8 }).unwrap(), 0.0);
    }

    #[test]
    fn law_free_model_converges_immediately() {
        let m = model_zoo::ou(1.0, 1.0).unwrap();
        let grid = TimeGrid::with_step(0.0, 1.0, 0.05).unwrap();
        let init = ParticleCloud::dirac(&[0.5], 200).unwrap();
        let (_, d) = picard_solve(&m, &init, &grid, &PicardConfig { tol: 1e-12, ..Default::default() }, 3).unwrap();
        assert!(d.distances[0] > 0.0);
        assert_eq!(d.distances[1], 0.0);
        assert!(d.converged && d.iterations == 2);
        assert_eq!(d.ratios[0], None);
    }

    #[test]
    fn map_integrates_input_means_without_noise() {
        let mut m = model_zoo::linear_mean_field(1.0).unwrap();
        m.drift_regular = Arc::new(|_t, _x, mf, out: &mut [f64]| out[0] = mf[0]);
        m.sigma = Arc::new(|_t, _x, out: &mut [f64]| out[0] = 0.0);
        let grid = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let clouds: Vec<ParticleCloud> =
            grid.nodes().iter().map(|t| ParticleCloud::uniform(1, vec![t - 1.0, t + 1.0]).unwrap()).collect();
        let flow = MeasureFlow::new(grid.clone(), clouds).unwrap();
        let init = ParticleCloud::uniform(1, vec![0.0, 2.0]).unwrap();
        let out = picard_map(&m, &flow, &init, &grid, 1, &SimOptions::default()).unwrap();
        // left-point rule on the means m(t) = t
        let mut acc = 0.0;
        for k in 0..grid.n_steps() {
            acc += grid.nodes()[k] * grid.dt(k);
            assert!((out.at(k + 1).point(0)[0] - acc).abs() < 1e-14);
            assert!((out.at(k + 1).point(1)[0] - 2.0 - acc).abs() < 1e-14);
        }
    }

    #[test]
    fn diagnostics_csv_leaves_first_ratio_blank() {
        let d = PicardDiagnostics {
            distances: vec![0.5, 0.1],
            ratios: vec![None, Some(0.2)],
            iterations: 2,
            converged: false,
            frozen_fraction: 0.0,
        };
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().nth(1).unwrap(), "1,5e-1,");
        assert_eq!(s.lines().nth(2).unwrap(), "2,1e-1,2e-1");
    }
}
