//! Time grids and reproducible Gaussian noise.
//!
//! Every random number in the crate comes from a [`StreamKey`]. A key maps to a
//! ChaCha8 keystream (seed and substream form the key, the trajectory id selects
//! the stream), so draw `i` of a trajectory is a pure function of `(key, i)` and
//! never depends on which thread produced it.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

/// Well-known substream ids. Different purposes never share random numbers.
pub mod substream {
    pub const NOISE: u32 = 0;
    pub const INIT: u32 = 1;
    pub const BOOTSTRAP: u32 = 2;
    pub const BATTERY: u32 = 3;
}

/// Strictly increasing time nodes `t0 < t1 < ... < t_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    uniform: bool,
}

impl TimeGrid {
    pub fn uniform(t0: f64, t1: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(invalid("time grid needs at least one step"));
        }
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return Err(invalid(format!("time grid needs finite t0 < t1, got [{t0}, {t1}]")));
        }
        let h = (t1 - t0) / n_steps as f64;
        let mut nodes: Vec<f64> = (0..=n_steps).map(|k| t0 + k as f64 * h).collect();
        nodes[n_steps] = t1;
        Ok(Self { nodes, uniform: true })
    }

    /// Grid with step `dt` on `[t0, t1]`; `(t1 - t0) / dt` is rounded to the nearest integer.
    pub fn with_step(t0: f64, t1: f64, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid(format!("step size must be positive, got {dt}")));
        }
        let n = ((t1 - t0) / dt).round().max(1.0) as usize;
        Self::uniform(t0, t1, n)
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(invalid("time grid needs at least two nodes"));
        }
        if nodes.iter().any(|t| !t.is_finite()) || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("time grid nodes must be finite and strictly increasing"));
        }
        // recognise grids that [`TimeGrid::uniform`] would have produced
        let uniform = Self::uniform(nodes[0], nodes[nodes.len() - 1], nodes.len() - 1)
            .map(|g| g.nodes == nodes)
            .unwrap_or(false);
        Ok(Self { nodes, uniform })
    }

    pub fn t0(&self) -> f64 {
        self.nodes[0]
    }

    pub fn t1(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Length of step `k`, i.e. `t_{k+1} - t_k`.
    pub fn dt(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    /// Nominal step: exact for uniform grids, the mean step otherwise.
    pub fn step(&self) -> f64 {
        (self.t1() - self.t0()) / self.n_steps() as f64
    }

    /// Index of the last node `<= t` (up to a relative slack of 1e-9 of a step).
    pub fn floor_index(&self, t: f64) -> usize {
        let slack = 1e-9 * self.step();
        match self.nodes.iter().rposition(|&s| s <= t + slack) {
            Some(k) => k,
            None => 0,
        }
    }
}

/// Identifies one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub trajectory_id: u64,
    pub substream: u32,
}

impl StreamKey {
    pub fn new(seed: u64, trajectory_id: u64, substream: u32) -> Self {
        Self { seed, trajectory_id, substream }
    }

    pub fn noise(seed: u64, trajectory_id: u64) -> Self {
        Self::new(seed, trajectory_id, substream::NOISE)
    }

    pub fn with_trajectory(self, trajectory_id: u64) -> Self {
        Self { trajectory_id, ..self }
    }

    /// Derive a seed for a sub-experiment; distinct `tag`s give unrelated seeds.
    pub fn derive_seed(seed: u64, tag: u64) -> u64 {
        // splitmix64 finalizer on the combined word
        let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Raw generator positioned at the start of this key's stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..12].copy_from_slice(&self.substream.to_le_bytes());
        key[12..20].copy_from_slice(b"mvlab-v1");
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.trajectory_id);
        rng
    }

    pub fn normals(&self) -> NormalStream {
        NormalStream { rng: self.rng() }
    }

    pub fn uniforms(&self) -> UniformStream {
        UniformStream { rng: self.rng() }
    }
}

#[inline]
fn open_unit(u: u64) -> f64 {
    ((u >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draws on the open interval (0, 1).
#[derive(Debug, Clone)]
pub struct UniformStream {
    rng: ChaCha8Rng,
}

impl UniformStream {
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        open_unit(self.rng.next_u64())
    }

    /// Uniform index in `0..n` (n > 0).
    #[inline]
    pub fn next_index(&mut self, n: usize) -> usize {
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }
}

/// Standard normal draws; draw `i` uses keystream word pair `i`.
#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    #[inline]
    pub fn next_standard(&mut self) -> f64 {
        inverse_normal_cdf(open_unit(self.rng.next_u64()))
    }

    /// Jump to draw number `index`.
    pub fn seek(&mut self, index: u64) {
        self.rng.set_word_pos(2 * index as u128);
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for z in out {
            *z = self.next_standard();
        }
    }
}

/// Inverse of the standard normal CDF (Acklam's rational approximation,
/// relative error below 1.15e-9 on (0, 1)).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    }
}

/// Brownian increments on `grid` in dimension `m`, row-major `[n_steps][m]`.
pub fn brownian_increments(grid: &TimeGrid, m: usize, key: StreamKey) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(invalid("Brownian dimension must be at least 1"));
    }
    let mut out = vec![0.0; grid.n_steps() * m];
    let mut normals = key.normals();
    for (k, row) in out.chunks_mut(m).enumerate() {
        let scale = grid.dt(k).sqrt();
        for z in row {
            *z = scale * normals.next_standard();
        }
    }
    Ok(out)
}
