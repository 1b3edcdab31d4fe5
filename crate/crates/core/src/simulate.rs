//! Forward variance surfaces driven by one Brownian path.
//!
//! The forward variance row `{V_{t_i}^u}` lives on a mesh `U` that is the union of
//! the time grid and the maturity grid, optionally refined. Each step applies the
//! multiplicative update
//!
//! ```text
//! V_{t_i}^u = V_{t_{i−1}}^u · exp(k(θ₀, u − t_{i−1}) ΔW_i − ½ k(θ₀, u − t_{i−1})² Δ)
//! ```
//!
//! to every mesh point `u ≥ t_i`, so `V` is an exact discrete lognormal
//! martingale. `I[i][j]` is the left-endpoint Riemann sum of `V_{t_i}^u` over
//! `U ∩ [t_i, T_j]`. Only the current row of `V` and the `I` matrix are kept.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Kernel, KernelSpec, ParamVector, RowKernel};
use crate::surface::{CumulativeVarianceSurface, MaturityGrid, TimeGrid};

/// Initial forward variance curve `u ↦ V₀^u`, linear between knots and flat
/// beyond the outermost knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardVarianceCurve {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl ForwardVarianceCurve {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(Error::config(
                "v0",
                format!(
                    "needs matching non-empty knots and values ({} vs {})",
                    knots.len(),
                    values.len()
                ),
            ));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config("v0", "knots must be strictly increasing"));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::config("v0", format!("values must be > 0, got {v}")));
        }
        Ok(Self { knots, values })
    }

    pub fn constant(level: f64) -> Result<Self> {
        Self::new(vec![0.0, 1.0], vec![level, level])
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, u: f64) -> f64 {
        let k = &self.knots;
        if u <= k[0] {
            return self.values[0];
        }
        if u >= k[k.len() - 1] {
            return self.values[k.len() - 1];
        }
        let hi = k.partition_point(|&x| x <= u);
        let lo = hi - 1;
        let w = (u - k[lo]) / (k[hi] - k[lo]);
        self.values[lo] + w * (self.values[hi] - self.values[lo])
    }
}

/// Brownian increments `ΔW_i ~ N(0, 1/n)`, reproducible from the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub increments: Vec<f64>,
    pub seed: u64,
}

/// Draws `n` independent `N(0, 1/n)` increments from a ChaCha12 stream keyed by `seed`.
pub fn simulate_brownian(n: usize, seed: u64) -> BrownianPath {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let scale = (1.0 / n as f64).sqrt();
    let increments = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        })
        .collect();
    BrownianPath { increments, seed }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `r` under `master_seed`:
/// `splitmix64(master_seed ⊕ splitmix64(r))`.
///
/// The result keys an independent ChaCha12 stream, so replications can run in
/// any order or in parallel.
pub fn stream_seed(master_seed: u64, replication: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(replication))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub kernel: KernelSpec,
    pub theta0: ParamVector,
    pub v0: ForwardVarianceCurve,
    pub time_grid: TimeGrid,
    pub maturity_grid: MaturityGrid,
    pub u_mesh_refinement: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if self.theta0.dim() != self.kernel.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.kernel.dim(),
                got: self.theta0.dim(),
            });
        }
        if self.u_mesh_refinement == 0 {
            return Err(Error::config("refinement", "must be ≥ 1"));
        }
        Ok(())
    }
}

/// The `u`-mesh: union of the time and maturity grids, each cell split
/// `refinement`-fold.
#[derive(Debug, Clone)]
pub struct VarianceMesh {
    nodes: Vec<f64>,
    widths: Vec<f64>,
    time_index: Vec<usize>,
    maturity_index: Vec<usize>,
    time_grid: TimeGrid,
    maturity_grid: MaturityGrid,
}

const MERGE_TOLERANCE: f64 = 1e-12;

impl VarianceMesh {
    pub fn new(time_grid: TimeGrid, maturity_grid: &MaturityGrid, refinement: usize) -> Result<Self> {
        if refinement == 0 {
            return Err(Error::config("refinement", "must be ≥ 1"));
        }
        let times = time_grid.times();
        let mats = maturity_grid.maturities();
        let mut base: Vec<f64> = times.iter().chain(mats).copied().collect();
        base.sort_by(f64::total_cmp);
        base.dedup_by(|a, b| (*a - *b).abs() <= MERGE_TOLERANCE);

        let mut nodes = Vec::with_capacity((base.len() - 1) * refinement + 1);
        for w in base.windows(2) {
            let h = (w[1] - w[0]) / refinement as f64;
            nodes.push(w[0]);
            for k in 1..refinement {
                nodes.push(w[0] + k as f64 * h);
            }
        }
        nodes.push(*base.last().unwrap());

        let locate = |x: f64| -> usize {
            let p = nodes.partition_point(|&u| u < x - MERGE_TOLERANCE);
            debug_assert!((nodes[p] - x).abs() <= MERGE_TOLERANCE);
            p
        };
        let time_index = times.iter().map(|&t| locate(t)).collect();
        let maturity_index = mats.iter().map(|&m| locate(m)).collect();
        let mut widths: Vec<f64> = nodes.windows(2).map(|w| w[1] - w[0]).collect();
        widths.push(0.0);
        Ok(Self {
            nodes,
            widths,
            time_index,
            maturity_index,
            time_grid,
            maturity_grid: maturity_grid.clone(),
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Mesh index of `t_i`.
    pub fn time_index(&self, i: usize) -> usize {
        self.time_index[i]
    }

    /// Mesh index of `T_j`.
    pub fn maturity_index(&self, j: usize) -> usize {
        self.maturity_index[j]
    }
}

/// Snapshot of `{V_{t_i}^u : u ∈ U, u ≥ t_i}`.
#[derive(Debug, Clone, Copy)]
pub struct VarianceRow<'a> {
    pub step: usize,
    pub t: f64,
    first: usize,
    mesh: &'a VarianceMesh,
    values: &'a [f64],
}

impl<'a> VarianceRow<'a> {
    /// Mesh nodes `u ≥ t_i`.
    pub fn nodes(&self) -> &'a [f64] {
        &self.mesh.nodes[self.first..]
    }

    /// `V_{t_i}^u` on [`Self::nodes`].
    pub fn values(&self) -> &'a [f64] {
        &self.values[self.first..]
    }

    /// Spot variance proxy: the mesh value at `u = t_i`.
    pub fn spot(&self) -> f64 {
        self.values[self.first]
    }

    /// `[I_{t_i}^{T_j}]_{j=0..=d}` by left-endpoint sums; zero where `T_j ≤ t_i`.
    pub fn cumulative(&self, out: &mut [f64]) {
        self.weighted_cumulative(None, out);
    }

    /// `[σ_{t_i}^{T_j}(ξ)]_{j=0..=d}`: left-endpoint sums of `k(ξ, u − t_i) V_{t_i}^u`.
    pub fn sigma(&self, kernel: &dyn Kernel, xi: &[f64]) -> Result<Vec<f64>> {
        let nodes = self.mesh.nodes();
        let mut row = kernel.row_kernel(xi, nodes)?;
        let mut weights = vec![0.0; nodes.len() - self.first];
        row.fill(self.t, self.first, &mut weights)?;
        let mut out = vec![0.0; self.mesh.maturity_grid.d() + 1];
        self.weighted_cumulative(Some(&weights), &mut out);
        Ok(out)
    }

    fn weighted_cumulative(&self, weights: Option<&[f64]>, out: &mut [f64]) {
        let mats = self.mesh.maturity_grid.maturities();
        debug_assert_eq!(out.len(), mats.len());
        let alive = self.mesh.maturity_grid.first_alive(self.t);
        let cut = alive.min(out.len());
        out[..cut].fill(0.0);
        let mut acc = 0.0;
        let mut m = self.first;
        for j in alive..mats.len() {
            let end = self.mesh.maturity_index[j];
            while m < end {
                let w = weights.map_or(1.0, |w| w[m - self.first]);
                acc += w * self.values[m] * self.mesh.widths[m];
                m += 1;
            }
            out[j] = acc;
        }
    }
}

/// Streaming simulator over a [`VarianceMesh`].
pub struct ForwardVarianceSimulator<'a> {
    mesh: &'a VarianceMesh,
    row_kernel: Box<dyn RowKernel + 'a>,
    values: Vec<f64>,
    kernel_buf: Vec<f64>,
    step: usize,
    dt: f64,
}

impl<'a> ForwardVarianceSimulator<'a> {
    pub fn new(cfg: &'a SimConfig, mesh: &'a VarianceMesh) -> Result<Self> {
        cfg.validate()?;
        let values = mesh.nodes.iter().map(|&u| cfg.v0.eval(u)).collect();
        let row_kernel = cfg.kernel.row_kernel(&cfg.theta0, &mesh.nodes)?;
        Ok(Self {
            mesh,
            row_kernel,
            values,
            kernel_buf: vec![0.0; mesh.len()],
            step: 0,
            dt: mesh.time_grid.dt(),
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn row(&self) -> VarianceRow<'_> {
        VarianceRow {
            step: self.step,
            t: self.mesh.time_grid.time(self.step),
            first: self.mesh.time_index[self.step],
            mesh: self.mesh,
            values: &self.values,
        }
    }

    /// Moves from `t_{i−1}` to `t_i` with Brownian increment `dw = ΔW_i`.
    pub fn advance(&mut self, dw: f64) -> Result<()> {
        let i = self.step + 1;
        if i > self.mesh.time_grid.n() {
            return Err(Error::IndexOutOfRange {
                index: i,
                max: self.mesh.time_grid.n(),
            });
        }
        let t_prev = self.mesh.time_grid.time(i - 1);
        let first = self.mesh.time_index[i];
        let len = self.mesh.len() - first;
        let k = &mut self.kernel_buf[..len];
        self.row_kernel.fill(t_prev, first, k)?;
        let half_dt = 0.5 * self.dt;
        for (v, k) in self.values[first..].iter_mut().zip(k.iter()) {
            *v *= (k * dw - half_dt * k * k).exp();
        }
        if let Some(m) = self.values[first..].iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteVariance {
                step: i,
                u: self.mesh.nodes[first + m],
            });
        }
        self.step = i;
        Ok(())
    }
}

/// Surface driven by the Brownian path drawn from `cfg.seed`.
pub fn simulate_surface(cfg: &SimConfig) -> Result<CumulativeVarianceSurface> {
    let path = simulate_brownian(cfg.time_grid.n(), cfg.seed);
    simulate_surface_with_path(cfg, &path)
}

pub fn simulate_surface_with_path(
    cfg: &SimConfig,
    path: &BrownianPath,
) -> Result<CumulativeVarianceSurface> {
    let n = cfg.time_grid.n();
    if path.increments.len() != n {
        return Err(Error::InvalidInput(format!(
            "Brownian path has {} increments, time grid needs {n}",
            path.increments.len()
        )));
    }
    let mesh = VarianceMesh::new(cfg.time_grid, &cfg.maturity_grid, cfg.u_mesh_refinement)?;
    let mut sim = ForwardVarianceSimulator::new(cfg, &mesh)?;
    let mut surface = CumulativeVarianceSurface::zeros(cfg.time_grid, cfg.maturity_grid.clone());
    sim.row().cumulative(surface.row_mut(0));
    for (i, dw) in path.increments.iter().enumerate() {
        sim.advance(*dw)?;
        sim.row().cumulative(surface.row_mut(i + 1));
    }
    Ok(surface)
}

/// `σ_{t_i}^{T_j}(ξ)` on the simulation mesh for the path `path`.
pub fn sigma_exact(
    cfg: &SimConfig,
    path: &BrownianPath,
    xi: &[f64],
    i: usize,
    j: usize,
) -> Result<f64> {
    let n = cfg.time_grid.n();
    if i > n || path.increments.len() != n {
        return Err(Error::IndexOutOfRange { index: i, max: n });
    }
    if j > cfg.maturity_grid.d() {
        return Err(Error::IndexOutOfRange {
            index: j,
            max: cfg.maturity_grid.d(),
        });
    }
    let mesh = VarianceMesh::new(cfg.time_grid, &cfg.maturity_grid, cfg.u_mesh_refinement)?;
    let mut sim = ForwardVarianceSimulator::new(cfg, &mesh)?;
    for dw in &path.increments[..i] {
        sim.advance(*dw)?;
    }
    Ok(sim.row().sigma(&cfg.kernel, xi)?[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::validate_surface;

    fn cfg(kernel: KernelSpec, theta: [f64; 2], n: usize, d: usize, r: usize) -> SimConfig {
        SimConfig {
            kernel,
            theta0: ParamVector(theta.to_vec()),
            v0: ForwardVarianceCurve::constant(1.0).unwrap(),
            time_grid: TimeGrid::new(n).unwrap(),
            maturity_grid: MaturityGrid::uniform(d).unwrap(),
            u_mesh_refinement: r,
            seed: 11,
        }
    }

    #[test]
    fn brownian_is_deterministic() {
        assert_eq!(simulate_brownian(4, 7), simulate_brownian(4, 7));
        assert_ne!(simulate_brownian(4, 7), simulate_brownian(4, 8));
    }

    #[test]
    fn brownian_moments() {
        let n = 1_000_000;
        let path = simulate_brownian(n, 2024);
        let nf = n as f64;
        let mean = path.increments.iter().sum::<f64>() / nf;
        // sd of the mean is (1/√n)/√n
        assert!(mean.abs() < 4.0 / nf, "{mean}");
        let var = path
            .increments
            .iter()
            .map(|x| (x * nf.sqrt()).powi(2))
            .sum::<f64>()
            / nf;
        assert!((0.99..=1.01).contains(&var), "{var}");
    }

    #[test]
    fn stream_seeds_differ() {
        let seeds: Vec<u64> = (0..100).map(|r| stream_seed(42, r)).collect();
        let mut sorted = seeds.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 100);
        assert_ne!(stream_seed(42, 0), stream_seed(43, 0));
    }

    #[test]
    fn curve_interpolation() {
        let c = ForwardVarianceCurve::new(vec![0.0, 0.5, 1.0], vec![1.0, 2.0, 4.0]).unwrap();
        assert_eq!(c.eval(-1.0), 1.0);
        assert_eq!(c.eval(0.25), 1.5);
        assert_eq!(c.eval(0.75), 3.0);
        assert_eq!(c.eval(2.0), 4.0);
        assert!(ForwardVarianceCurve::new(vec![0.0, 1.0], vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn mesh_contains_both_grids() {
        let mesh = VarianceMesh::new(TimeGrid::new(4).unwrap(), &MaturityGrid::uniform(3).unwrap(), 2)
            .unwrap();
        // union {0, 1/4, 1/3, 1/2, 2/3, 3/4, 1} refined twice
        assert_eq!(mesh.len(), 13);
        for i in 0..=4 {
            assert!((mesh.nodes()[mesh.time_index(i)] - i as f64 / 4.0).abs() < 1e-15);
        }
        for j in 0..=3 {
            assert!((mesh.nodes()[mesh.maturity_index(j)] - j as f64 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn tiny_kernel_gives_deterministic_surface() {
        let c = cfg(KernelSpec::Exponential, [1e-8, 0.0], 50, 20, 1);
        let s = simulate_surface(&c).unwrap();
        assert!(validate_surface(&s, false).is_empty());
        for i in 0..=50 {
            let t = i as f64 / 50.0;
            for j in 0..=20 {
                let want = (j as f64 / 20.0 - t).max(0.0);
                assert!((s.get(i, j) - want).abs() < 1e-6, "({i},{j})");
            }
        }
    }

    #[test]
    fn simulated_surface_is_valid_and_deterministic() {
        let c = cfg(KernelSpec::Exponential, [1.0, -1.0], 80, 30, 2);
        let a = simulate_surface(&c).unwrap();
        let b = simulate_surface(&c).unwrap();
        assert!(validate_surface(&a, false).is_empty());
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn constant_kernel_sigma_is_scaled_cumulative() {
        // k(ξ, ·) ≡ η when ξ = 0 in the exponential family
        let c = cfg(KernelSpec::Exponential, [1.0, -1.0], 40, 16, 1);
        let path = simulate_brownian(40, c.seed);
        let s = simulate_surface_with_path(&c, &path).unwrap();
        for &(i, j) in &[(0, 16), (10, 8), (25, 16), (39, 16)] {
            let sig = sigma_exact(&c, &path, &[2.5, 0.0], i, j).unwrap();
            let want = 2.5 * s.get(i, j);
            assert!((sig - want).abs() <= 1e-13 * want.abs().max(1.0), "{sig} vs {want}");
        }
        assert_eq!(sigma_exact(&c, &path, &[2.5, 0.0], 30, 10).unwrap(), 0.0);
    }

    #[test]
    fn exploding_kernel_is_reported() {
        let c = cfg(KernelSpec::Exponential, [1.0, -40.0], 10, 5, 1);
        assert!(matches!(
            simulate_surface(&c),
            Err(Error::KernelEvaluation { .. })
        ));
    }
}
