//! Distances between probability measures: weighted variation, total
//! variation and Wasserstein, on finitely supported and binned measures.

use std::cmp::Ordering;

use crate::error::{invalid, Error, Result};
use crate::paths::StreamKey;

/// Default cap on the number of coupling variables `n * m` of a transport problem.
pub const DEFAULT_LP_CAP: usize = 1_000_000;
/// Default number of histogram cells per axis.
pub const DEFAULT_RESOLUTION: usize = 128;

/// Finitely supported probability measure.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    atoms: Vec<f64>,
    masses: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(dim: usize, atoms: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if dim == 0 || atoms.len() != dim * masses.len() || masses.is_empty() {
            return Err(invalid("discrete measure needs dim >= 1 and one atom per mass"));
        }
        if atoms.iter().any(|a| !a.is_finite()) {
            return Err(invalid("discrete measure atoms must be finite"));
        }
        if masses.iter().any(|&m| !(m >= 0.0 && m.is_finite())) {
            return Err(invalid("discrete measure masses must be non-negative"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("discrete measure masses sum to {total}, expected 1")));
        }
        Ok(Self { dim, atoms, masses })
    }

    /// Equal masses on the given atoms.
    pub fn uniform(dim: usize, atoms: Vec<f64>) -> Result<Self> {
        let n = if dim == 0 { 0 } else { atoms.len() / dim };
        Self::new(dim, atoms, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn dirac(point: &[f64]) -> Self {
        Self { dim: point.len(), atoms: point.to_vec(), masses: vec![1.0] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn integral(&self, h: &dyn Fn(&[f64]) -> f64) -> f64 {
        (0..self.len()).map(|i| self.masses[i] * h(self.atom(i))).sum()
    }

    fn has_uniform_masses(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.masses.iter().all(|&m| (m - w).abs() <= 1e-12)
    }
}

/// Axis-aligned box split into `resolution` cells per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub resolution: usize,
}

impl HistogramBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, resolution: usize) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || resolution == 0 {
            return Err(invalid("histogram box needs matching non-empty bounds and resolution >= 1"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && b > a)) {
            return Err(invalid("histogram box bounds must be finite with lo < hi"));
        }
        let cells = (resolution as f64).powi(lo.len() as i32);
        if cells > (1u64 << 26) as f64 {
            return Err(invalid(format!("histogram with {cells} cells is too large")));
        }
        Ok(Self { lo, hi, resolution })
    }

    /// Box spanning the pooled 1st-99th percentiles of all points, per axis.
    /// Degenerate axes are widened to unit length.
    pub fn pooled(dim: usize, point_sets: &[&[f64]], resolution: usize) -> Result<Self> {
        Self::pooled_quantiles(dim, point_sets, resolution, 0.01, 0.99)
    }

    pub fn pooled_quantiles(
        dim: usize,
        point_sets: &[&[f64]],
        resolution: usize,
        q_lo: f64,
        q_hi: f64,
    ) -> Result<Self> {
        if dim == 0 || point_sets.iter().all(|p| p.is_empty()) {
            return Err(invalid("pooled box needs at least one point"));
        }
        let mut lo = Vec::with_capacity(dim);
        let mut hi = Vec::with_capacity(dim);
        for axis in 0..dim {
            let mut vals: Vec<f64> = point_sets
                .iter()
                .flat_map(|p| p.chunks_exact(dim).map(move |x| x[axis]))
                .collect();
            let n = vals.len();
            let k_lo = ((q_lo * (n - 1) as f64).round() as usize).min(n - 1);
            let k_hi = ((q_hi * (n - 1) as f64).round() as usize).min(n - 1);
            let (_, a, _) = vals.select_nth_unstable_by(k_lo, f64::total_cmp);
            let a = *a;
            let (_, b, _) = vals.select_nth_unstable_by(k_hi, f64::total_cmp);
            let b = *b;
            if b - a > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                lo.push(a);
                hi.push(b);
            } else {
                lo.push(a - 0.5);
                hi.push(a + 0.5);
            }
        }
        Self::new(lo, hi, resolution)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn n_cells(&self) -> usize {
        self.resolution.pow(self.dim() as u32)
    }

    /// Flat cell index of `x`, or `None` if `x` lies outside the box.
    pub fn cell_of(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0usize;
        for axis in 0..self.dim() {
            let (a, b) = (self.lo[axis], self.hi[axis]);
            let v = x[axis];
            if !(v >= a && v <= b) {
                return None;
            }
            let c = (((v - a) / (b - a)) * self.resolution as f64) as usize;
            idx = idx * self.resolution + c.min(self.resolution - 1);
        }
        Some(idx)
    }

    pub fn cell_center(&self, mut idx: usize, out: &mut [f64]) {
        for axis in (0..self.dim()).rev() {
            let c = idx % self.resolution;
            idx /= self.resolution;
            let h = (self.hi[axis] - self.lo[axis]) / self.resolution as f64;
            out[axis] = self.lo[axis] + (c as f64 + 0.5) * h;
        }
    }
}

/// Weighted sample binned on a [`HistogramBox`]. Samples outside the box are
/// kept verbatim as overflow and compared as a single lumped cell.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramMeasure {
    pub bbox: HistogramBox,
    pub masses: Vec<f64>,
    pub overflow_points: Vec<f64>,
    pub overflow_weights: Vec<f64>,
}

impl HistogramMeasure {
    pub fn from_points(bbox: &HistogramBox, points: &[f64], weights: &[f64]) -> Result<Self> {
        let d = bbox.dim();
        if points.len() != d * weights.len() {
            return Err(invalid("histogram input has mismatched points and weights"));
        }
        let mut masses = vec![0.0; bbox.n_cells()];
        let mut overflow_points = Vec::new();
        let mut overflow_weights = Vec::new();
        for (x, &w) in points.chunks_exact(d).zip(weights) {
            match bbox.cell_of(x) {
                Some(c) => masses[c] += w,
                None => {
                    overflow_points.extend_from_slice(x);
                    overflow_weights.push(w);
                }
            }
        }
        Ok(Self { bbox: bbox.clone(), masses, overflow_points, overflow_weights })
    }

    pub fn overflow_mass(&self) -> f64 {
        self.overflow_weights.iter().sum()
    }

    fn overflow_integral(&self, v: &dyn Fn(&[f64]) -> f64) -> f64 {
        let d = self.bbox.dim();
        self.overflow_points
            .chunks_exact(d)
            .zip(&self.overflow_weights)
            .map(|(x, w)| w * v(x))
            .sum()
    }
}

/// Either representation accepted by [`weighted_variation`].
#[derive(Debug, Clone, Copy)]
pub enum MeasureRef<'a> {
    Discrete(&'a DiscreteMeasure),
    Histogram(&'a HistogramMeasure),
}

/// `||mu - nu||_V = integral of V d|mu - nu|`; `V = 1` gives total variation.
pub fn weighted_variation(mu: MeasureRef<'_>, nu: MeasureRef<'_>, v: &dyn Fn(&[f64]) -> f64) -> Result<f64> {
    match (mu, nu) {
        (MeasureRef::Discrete(a), MeasureRef::Discrete(b)) => weighted_variation_discrete(a, b, v),
        (MeasureRef::Histogram(a), MeasureRef::Histogram(b)) => weighted_variation_histogram(a, b, v),
        _ => Err(invalid("weighted variation needs both measures in the same representation")),
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Exact weighted variation on the union of the two supports.
pub fn weighted_variation_discrete(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    v: &dyn Fn(&[f64]) -> f64,
) -> Result<f64> {
    if mu.dim != nu.dim {
        return Err(invalid("measures live in different dimensions"));
    }
    let mut entries: Vec<(&[f64], f64)> = (0..mu.len())
        .map(|i| (mu.atom(i), mu.masses[i]))
        .chain((0..nu.len()).map(|j| (nu.atom(j), -nu.masses[j])))
        .collect();
    entries.sort_by(|a, b| lex_cmp(a.0, b.0));
    let mut total = 0.0;
    let mut i = 0;
    while i < entries.len() {
        let atom = entries[i].0;
        let mut signed = 0.0;
        while i < entries.len() && lex_cmp(entries[i].0, atom) == Ordering::Equal {
            signed += entries[i].1;
            i += 1;
        }
        if signed != 0.0 {
            let w = v(atom);
            if !w.is_finite() {
                return Err(Error::ModelEvaluation { what: "weight V", location: format!("{atom:?}") });
            }
            total += w * signed.abs();
        }
    }
    Ok(total)
}

/// Cell-wise weighted variation with `V` at cell centers, plus the lumped
/// overflow cell `|mu_out(V) - nu_out(V)|`.
pub fn weighted_variation_histogram(
    mu: &HistogramMeasure,
    nu: &HistogramMeasure,
    v: &dyn Fn(&[f64]) -> f64,
) -> Result<f64> {
    if mu.bbox != nu.bbox {
        return Err(invalid("histograms must share box and resolution"));
    }
    let mut center = vec![0.0; mu.bbox.dim()];
    let mut total = 0.0;
    for (c, (a, b)) in mu.masses.iter().zip(&nu.masses).enumerate() {
        let diff = (a - b).abs();
        if diff > 0.0 {
            mu.bbox.cell_center(c, &mut center);
            total += v(&center) * diff;
        }
    }
    total += (mu.overflow_integral(v) - nu.overflow_integral(v)).abs();
    Ok(total)
}

/// Weighted variation between two weighted samples `(points, weights)` binned
/// on their pooled percentile box at the given resolution.
pub fn histogram_distance(
    dim: usize,
    a: (&[f64], &[f64]),
    b: (&[f64], &[f64]),
    resolution: usize,
    v: &dyn Fn(&[f64]) -> f64,
) -> Result<f64> {
    let bbox = HistogramBox::pooled(dim, &[a.0, b.0], resolution)?;
    let ha = HistogramMeasure::from_points(&bbox, a.0, a.1)?;
    let hb = HistogramMeasure::from_points(&bbox, b.0, b.1)?;
    weighted_variation_histogram(&ha, &hb, v)
}

fn dist_pow(x: &[f64], y: &[f64], k: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if k == 2.0 {
        d2
    } else {
        d2.sqrt().powf(k)
    }
}

fn check_k(k: f64) -> Result<()> {
    if !(k >= 1.0 && k.is_finite()) {
        return Err(invalid(format!("Wasserstein order must be >= 1, got {k}")));
    }
    Ok(())
}

/// `W_k` choosing the exact algorithm by shape: quantile coupling in one
/// dimension, assignment for equal uniform clouds, transport otherwise.
pub fn wasserstein(mu: &DiscreteMeasure, nu: &DiscreteMeasure, k: f64) -> Result<f64> {
    wasserstein_with_cap(mu, nu, k, DEFAULT_LP_CAP)
}

pub fn wasserstein_with_cap(mu: &DiscreteMeasure, nu: &DiscreteMeasure, k: f64, lp_cap: usize) -> Result<f64> {
    check_k(k)?;
    if mu.dim != nu.dim {
        return Err(invalid("measures live in different dimensions"));
    }
    if mu.dim == 1 {
        return wasserstein_1d(mu, nu, k);
    }
    let vars = mu.len() * nu.len();
    if vars > lp_cap {
        return Err(Error::Size { variables: vars, cap: lp_cap });
    }
    if mu.len() == nu.len() && mu.has_uniform_masses() && nu.has_uniform_masses() {
        let n = mu.len();
        let cost: Vec<f64> = (0..n * n).map(|c| dist_pow(mu.atom(c / n), nu.atom(c % n), k)).collect();
        let (_, total) = hungarian(n, &cost);
        return Ok((total / n as f64).max(0.0).powf(1.0 / k));
    }
    wasserstein_lp(mu, nu, k, lp_cap)
}

/// `W_k` between two equal-size uniform clouds on the line by sorted matching.
pub fn wasserstein_sorted(xs: &[f64], ys: &[f64], k: f64) -> Result<f64> {
    check_k(k)?;
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(invalid("sorted matching needs two non-empty clouds of equal size"));
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs().powf(k)).sum();
    Ok((s / a.len() as f64).powf(1.0 / k))
}

/// Root mean square of `W_k` between two resamples of size `n` drawn from
/// the pooled clouds: the scale `W_k` takes on two samples of one law.
pub fn wasserstein_null_scale(xs: &[f64], ys: &[f64], k: f64, resamples: usize, key: StreamKey) -> Result<f64> {
    if xs.len() != ys.len() || xs.is_empty() || resamples == 0 {
        return Err(invalid("null scale needs two non-empty clouds of equal size and at least one resample"));
    }
    let n = xs.len();
    let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let mut u = key.uniforms();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut acc = 0.0;
    for _ in 0..resamples {
        for v in a.iter_mut().chain(b.iter_mut()) {
            *v = pooled[u.next_index(2 * n)];
        }
        acc += wasserstein_sorted(&a, &b, k)?.powi(2);
    }
    Ok((acc / resamples as f64).sqrt())
}

/// `W_k` on the line for arbitrary masses via the quantile coupling.
pub fn wasserstein_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure, k: f64) -> Result<f64> {
    check_k(k)?;
    if mu.dim != 1 || nu.dim != 1 {
        return Err(invalid("quantile coupling is one-dimensional"));
    }
    let sorted = |m: &DiscreteMeasure| {
        let mut v: Vec<(f64, f64)> = m.atoms.iter().copied().zip(m.masses.iter().copied()).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    };
    let a = sorted(mu);
    let b = sorted(nu);
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut total = 0.0;
    loop {
        let step = ra.min(rb);
        total += step * (a[i].0 - b[j].0).abs().powf(k);
        ra -= step;
        rb -= step;
        if ra <= 1e-15 {
            i += 1;
            if i == a.len() {
                break;
            }
            ra = a[i].1;
        }
        if rb <= 1e-15 {
            j += 1;
            if j == b.len() {
                break;
            }
            rb = b[j].1;
        }
    }
    Ok(total.max(0.0).powf(1.0 / k))
}

/// `W_k` by solving the transport linear program, whatever the dimension.
pub fn wasserstein_lp(mu: &DiscreteMeasure, nu: &DiscreteMeasure, k: f64, lp_cap: usize) -> Result<f64> {
    check_k(k)?;
    if mu.dim != nu.dim {
        return Err(invalid("measures live in different dimensions"));
    }
    let (n, m) = (mu.len(), nu.len());
    if n * m > lp_cap {
        return Err(Error::Size { variables: n * m, cap: lp_cap });
    }
    let cost: Vec<f64> = (0..n * m).map(|c| dist_pow(mu.atom(c / m), nu.atom(c % m), k)).collect();
    let plan = transport(&mu.masses, &nu.masses, &cost)?;
    Ok(plan.cost.max(0.0).powf(1.0 / k))
}

/// Optimal coupling found by [`transport`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub cost: f64,
    /// Non-zero entries `(i, j, mass)`.
    pub flows: Vec<(usize, usize, f64)>,
}

/// Minimum-cost coupling of `a` (length n) and `b` (length m) for the
/// row-major cost matrix `cost[i * m + j]`, by successive shortest paths.
pub fn transport(a: &[f64], b: &[f64], cost: &[f64]) -> Result<TransportPlan> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 || cost.len() != n * m {
        return Err(invalid("transport needs non-empty marginals and an n x m cost matrix"));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(invalid("transport cost entries must be finite"));
    }
    let total = a.iter().sum::<f64>().min(b.iter().sum::<f64>());
    let eps = 1e-14 * total.max(1.0);
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let mut flow = vec![0.0; n * m];
    let mut pot = vec![0.0; n + m];
    let mut dist = vec![0.0; n + m];
    let mut done = vec![false; n + m];
    let mut parent = vec![usize::MAX; n + m];
    let mut remaining = total;

    while remaining > eps {
        for x in 0..n + m {
            dist[x] = f64::INFINITY;
            done[x] = false;
            parent[x] = usize::MAX;
        }
        for i in 0..n {
            if supply[i] > eps {
                dist[i] = 0.0;
            }
        }
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for x in 0..n + m {
                if !done[x] && dist[x] < best {
                    best = dist[x];
                    u = x;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u < n {
                for j in 0..m {
                    let nd = (best + cost[u * m + j] + pot[u] - pot[n + j]).max(best);
                    if nd < dist[n + j] {
                        dist[n + j] = nd;
                        parent[n + j] = u;
                    }
                }
            } else {
                let j = u - n;
                for i in 0..n {
                    if flow[i * m + j] > eps {
                        let nd = (best - cost[i * m + j] - pot[i] + pot[u]).max(best);
                        if nd < dist[i] {
                            dist[i] = nd;
                            parent[i] = u;
                        }
                    }
                }
            }
        }
        let mut sink = usize::MAX;
        let mut d_sink = f64::INFINITY;
        for j in 0..m {
            if demand[j] > eps && dist[n + j] < d_sink {
                d_sink = dist[n + j];
                sink = j;
            }
        }
        if sink == usize::MAX {
            return Err(Error::Format("transport problem became infeasible".into()));
        }
        for x in 0..n + m {
            pot[x] += dist[x].min(d_sink);
        }
        let mut bottleneck = demand[sink];
        let mut x = n + sink;
        while parent[x] != usize::MAX {
            let p = parent[x];
            if x < n {
                bottleneck = bottleneck.min(flow[x * m + (p - n)]);
            }
            x = p;
        }
        let source = x;
        bottleneck = bottleneck.min(supply[source]);
        let mut x = n + sink;
        while parent[x] != usize::MAX {
            let p = parent[x];
            if x >= n {
                flow[p * m + (x - n)] += bottleneck;
            } else {
                flow[x * m + (p - n)] -= bottleneck;
            }
            x = p;
        }
        supply[source] -= bottleneck;
        demand[sink] -= bottleneck;
        remaining -= bottleneck;
    }

    let mut plan = TransportPlan { cost: 0.0, flows: Vec::new() };
    for i in 0..n {
        for j in 0..m {
            let f = flow[i * m + j];
            if f > eps {
                plan.cost += f * cost[i * m + j];
                plan.flows.push((i, j, f));
            }
        }
    }
    Ok(plan)
}

/// Minimum-cost perfect matching of an `n x n` cost matrix (row-major).
/// Returns the column assigned to each row and the total cost.
pub fn hungarian(n: usize, cost: &[f64]) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| cost[i * n + assignment[i]]).sum();
    (assignment, total)
}

/// Both sides of `||mu - nu||_var + W_k^k <= c ||mu - nu||_{1+|x|^k}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KvarReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`, defined as 1 when both sides vanish.
    pub ratio: f64,
}

pub fn kvar_inequality_check(mu: &DiscreteMeasure, nu: &DiscreteMeasure, k: f64) -> Result<KvarReport> {
    check_k(k)?;
    let tv = weighted_variation_discrete(mu, nu, &|_| 1.0)?;
    let wk = wasserstein(mu, nu, k)?.powf(k);
    let rhs = weighted_variation_discrete(mu, nu, &|x| {
        1.0 + x.iter().map(|a| a * a).sum::<f64>().sqrt().powf(k)
    })?;
    let lhs = tv + wk;
    let ratio = if lhs == 0.0 && rhs == 0.0 { 1.0 } else { lhs / rhs };
    Ok(KvarReport { lhs, rhs, ratio })
}
