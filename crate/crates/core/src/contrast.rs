//! The ε-regularized contrast and its minimization.
//!
//! For a surface observed on `t_i = i/n` and `0 = T₀ < … < T_d`:
//!
//! ```text
//! σ̂_t^j(ξ)   = Σ_{l≤j} k(ξ, T_l − t) (I_t^{T_l} − I_t^{T_{l−1}})
//! F_ε(ξ,t,x) = log(|σ̂_t(ξ)|²/d + ε) + (|x|² + εd) / (|σ̂_t(ξ)|² + εd)
//! U(ξ)       = (1/n) Σ_{i=1..n} F_ε(ξ, t_{i−1}, ΔI_i)
//! ```
//!
//! [`minimize_contrast`] evaluates `U` on a start grid over the box and runs a
//! projected Nelder–Mead descent from the grid's local minima.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Kernel, KernelLattice, ParamBox, ParamVector, RowKernel};
use crate::optimize::{better, nelder_mead_box, NelderMeadOptions};
use crate::surface::CumulativeVarianceSurface;

pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub multistart_count: usize,
    /// Relative (to box width) simplex size at which a descent stops.
    pub simplex_tolerance: f64,
    pub max_iterations: usize,
    /// Re-grid the cell around the best start before descending.
    pub grid_refine: bool,
    /// Upper bound on the number of simplex descents.
    pub max_descents: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            multistart_count: 9,
            simplex_tolerance: 1e-7,
            max_iterations: 1000,
            grid_refine: false,
            max_descents: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastConfig {
    pub epsilon: f64,
    pub optimizer: OptimizerConfig,
}

impl ContrastConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        let cfg = Self {
            epsilon,
            optimizer: OptimizerConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        let o = &self.optimizer;
        if o.multistart_count == 0 {
            return Err(Error::config("multistart_count", "must be ≥ 1"));
        }
        if !(o.simplex_tolerance > 0.0 && o.simplex_tolerance < 1.0) {
            return Err(Error::config("simplex_tolerance", "must lie in (0, 1)"));
        }
        if o.max_iterations == 0 {
            return Err(Error::config("max_iterations", "must be ≥ 1"));
        }
        if o.max_descents == 0 {
            return Err(Error::config("max_descents", "must be ≥ 1"));
        }
        Ok(())
    }
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon.is_finite() && epsilon > 0.0 {
        Ok(())
    } else {
        Err(Error::config(
            "epsilon",
            format!("the contrast is only defined for ε > 0, got {epsilon}"),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub theta: ParamVector,
    pub contrast_value: f64,
    pub converged: bool,
    pub at_boundary: Vec<bool>,
    pub evaluations: usize,
}

/// `[σ̂_{t_i}^j(ξ)]_{j=1..d}`.
pub fn sigma_hat(
    s: &CumulativeVarianceSurface,
    kernel: &dyn Kernel,
    xi: &[f64],
    i: usize,
) -> Result<Vec<f64>> {
    if i > s.n() {
        return Err(Error::IndexOutOfRange {
            index: i,
            max: s.n(),
        });
    }
    let mut out = vec![0.0; s.d()];
    let mut rk = kernel.row_kernel(xi, s.maturities())?;
    let mut buf = vec![0.0; s.d() + 1];
    sigma_row(s, &mut Weights::Row(rk.as_mut()), i, &mut buf, Some(&mut out))?;
    Ok(out)
}

/// Source of kernel weights `k(ξ, T_l − t_i)` for one row.
enum Weights<'a> {
    Row(&'a mut dyn RowKernel),
    Lattice(&'a dyn KernelLattice, &'a [f64]),
}

impl Weights<'_> {
    fn fill(&mut self, s: &CumulativeVarianceSurface, i: usize, start: usize, out: &mut [f64]) -> Result<()> {
        match self {
            Weights::Row(rk) => rk.fill(s.time_grid().time(i), start, out),
            Weights::Lattice(lat, xi) => lat.fill(xi, i, out),
        }
    }
}

/// Runs the prefix pass for row `i`; returns `|σ̂_{t_i}|²` and optionally the row itself.
fn sigma_row(
    s: &CumulativeVarianceSurface,
    weights_src: &mut Weights<'_>,
    i: usize,
    buf: &mut [f64],
    out: Option<&mut [f64]>,
) -> Result<f64> {
    let d = s.d();
    let start = s.first_alive(i);
    if start > d {
        if let Some(out) = out {
            out.fill(0.0);
        }
        return Ok(0.0);
    }
    let weights = &mut buf[..d + 1 - start];
    weights_src.fill(s, i, start, weights)?;
    let row = s.row(i);
    let mut acc = 0.0;
    let mut sq = 0.0;
    match out {
        None => {
            for (k, w) in weights.iter().zip(row[start - 1..].windows(2)) {
                acc += k * (w[1] - w[0]);
                sq += acc * acc;
            }
        }
        Some(out) => {
            out[..start - 1].fill(0.0);
            for ((k, w), o) in weights
                .iter()
                .zip(row[start - 1..].windows(2))
                .zip(&mut out[start - 1..])
            {
                acc += k * (w[1] - w[0]);
                sq += acc * acc;
                *o = acc;
            }
        }
    }
    Ok(sq)
}

/// `F_ε` from its sufficient statistics `|σ̂|²` and `|x|²`.
#[inline]
pub fn contrast_term(sigma_sq: f64, x_sq: f64, epsilon: f64, d: usize) -> f64 {
    let eps_d = epsilon * d as f64;
    (sigma_sq / d as f64 + epsilon).ln() + (x_sq + eps_d) / (sigma_sq + eps_d)
}

/// `F_ε(ξ, t, x)` for an explicit `σ̂_t(ξ)` row and increment `x`.
pub fn contrast_f(sigma_hat_row: &[f64], x: &[f64], epsilon: f64) -> f64 {
    let d = sigma_hat_row.len();
    let s2: f64 = sigma_hat_row.iter().map(|v| v * v).sum();
    let x2: f64 = x.iter().map(|v| v * v).sum();
    contrast_term(s2, x2, epsilon, d)
}

/// Precomputes the `ξ`-free parts of `U` for one surface.
pub struct ContrastEvaluator<'a> {
    surface: &'a CumulativeVarianceSurface,
    kernel: &'a dyn Kernel,
    epsilon: f64,
    increment_sq: Vec<f64>,
    lattice: Option<Box<dyn KernelLattice>>,
}

impl<'a> ContrastEvaluator<'a> {
    pub fn new(
        surface: &'a CumulativeVarianceSurface,
        kernel: &'a dyn Kernel,
        epsilon: f64,
    ) -> Result<Self> {
        check_epsilon(epsilon)?;
        let increment_sq = (1..=surface.n())
            .map(|i| surface.increment_norm_sq(i))
            .collect();
        let times: Vec<f64> = (0..surface.n()).map(|i| surface.time_grid().time(i)).collect();
        let starts: Vec<usize> = (0..surface.n()).map(|i| surface.first_alive(i)).collect();
        let lattice = kernel.lattice(&times, surface.maturities(), &starts);
        Ok(Self {
            surface,
            kernel,
            epsilon,
            increment_sq,
            lattice,
        })
    }

    pub fn surface(&self) -> &'a CumulativeVarianceSurface {
        self.surface
    }

    pub fn kernel(&self) -> &'a dyn Kernel {
        self.kernel
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Calls `visit(i − 1, |σ̂_{t_{i−1}}(ξ)|²)` for `i = 1..=n` in order.
    fn sweep(&self, xi: &[f64], mut visit: impl FnMut(usize, f64)) -> Result<()> {
        let s = self.surface;
        let mut buf = vec![0.0; s.d() + 1];
        let mut row_kernel;
        let mut weights = match &self.lattice {
            Some(lat) => {
                if xi.len() != self.kernel.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: self.kernel.dim(),
                        got: xi.len(),
                    });
                }
                Weights::Lattice(lat.as_ref(), xi)
            }
            None => {
                row_kernel = self.kernel.row_kernel(xi, s.maturities())?;
                Weights::Row(row_kernel.as_mut())
            }
        };
        for r in 0..s.n() {
            visit(r, sigma_row(s, &mut weights, r, &mut buf, None)?);
        }
        Ok(())
    }

    /// `|σ̂_{t_{i−1}}(ξ)|²` for `i = 1..=n`.
    pub fn sigma_norms(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.surface.n());
        self.sweep(xi, |_, sq| out.push(sq))?;
        Ok(out)
    }

    /// `U_{n,d}^ε(ξ)`, summed left to right over `i`.
    pub fn evaluate(&self, xi: &[f64]) -> Result<f64> {
        let d = self.surface.d();
        let mut total = 0.0;
        self.sweep(xi, |r, sq| {
            total += contrast_term(sq, self.increment_sq[r], self.epsilon, d)
        })?;
        Ok(total / self.surface.n() as f64)
    }
}

pub fn contrast_u(
    s: &CumulativeVarianceSurface,
    kernel: &dyn Kernel,
    xi: &[f64],
    epsilon: f64,
) -> Result<f64> {
    ContrastEvaluator::new(s, kernel, epsilon)?.evaluate(xi)
}

pub fn minimize_contrast(
    s: &CumulativeVarianceSurface,
    kernel: &dyn Kernel,
    bounds: &ParamBox,
    cfg: &ContrastConfig,
) -> Result<EstimationResult> {
    minimize_contrast_with_fixed(s, kernel, bounds, cfg, &[])
}

/// Minimizes over the coordinates not listed in `fixed`; fixed coordinates and
/// coordinates with a degenerate box (`lower = upper`) are held constant.
pub fn minimize_contrast_with_fixed(
    s: &CumulativeVarianceSurface,
    kernel: &dyn Kernel,
    bounds: &ParamBox,
    cfg: &ContrastConfig,
    fixed: &[(usize, f64)],
) -> Result<EstimationResult> {
    cfg.validate()?;
    let evaluator = ContrastEvaluator::new(s, kernel, cfg.epsilon)?;
    minimize_with(&evaluator, bounds, &cfg.optimizer, fixed)
}

pub fn minimize_with(
    evaluator: &ContrastEvaluator<'_>,
    bounds: &ParamBox,
    opt: &OptimizerConfig,
    fixed: &[(usize, f64)],
) -> Result<EstimationResult> {
    let q = evaluator.kernel().dim();
    if bounds.dim() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            got: bounds.dim(),
        });
    }
    let mut base = bounds.lower.clone();
    let mut free = Vec::new();
    for a in 0..q {
        if let Some(&(_, v)) = fixed.iter().find(|(idx, _)| *idx == a) {
            base[a] = v;
        } else if bounds.width(a) == 0.0 {
            base[a] = bounds.lower[a];
        } else {
            free.push(a);
        }
    }
    if let Some(&(idx, _)) = fixed.iter().find(|(idx, _)| *idx >= q) {
        return Err(Error::config(
            "fixed",
            format!("index {idx} outside 0..{q}"),
        ));
    }

    let embed = |x: &[f64]| -> Vec<f64> {
        let mut full = base.clone();
        for (a, v) in free.iter().zip(x) {
            full[*a] = *v;
        }
        full
    };
    let objective = |x: &[f64]| evaluator.evaluate(&embed(x)).ok();

    let finish = |theta: Vec<f64>, value: f64, converged: bool, evaluations: usize| {
        let at_boundary = (0..q)
            .map(|a| {
                let tol = 1e-6 * bounds.width(a);
                (theta[a] - bounds.lower[a]).abs() <= tol || (bounds.upper[a] - theta[a]).abs() <= tol
            })
            .collect();
        EstimationResult {
            theta: ParamVector(theta),
            contrast_value: value,
            converged,
            at_boundary,
            evaluations,
        }
    };

    if free.is_empty() {
        let value = evaluator.evaluate(&base)?;
        return Ok(finish(base, value, true, 1));
    }

    let lower: Vec<f64> = free.iter().map(|&a| bounds.lower[a]).collect();
    let upper: Vec<f64> = free.iter().map(|&a| bounds.upper[a]).collect();
    let plan = StartPlan::new(&lower, &upper, opt.multistart_count);
    let mut starts: Vec<(Vec<f64>, f64)> = plan
        .points
        .par_iter()
        .map(|p| (p.clone(), objective(p).unwrap_or(f64::INFINITY)))
        .collect();
    let mut evaluations = starts.len();
    if starts.iter().all(|(_, v)| !v.is_finite()) {
        return Err(Error::Estimation(format!(
            "contrast could not be evaluated at any of {} start points",
            starts.len()
        )));
    }

    let mut seeds = plan.descent_starts(&starts, opt.max_descents);
    if opt.grid_refine {
        let best = &starts[seeds[0]].0;
        let half: Vec<f64> = (0..free.len())
            .map(|a| 0.5 * (upper[a] - lower[a]) / plan.per_axis as f64)
            .collect();
        let lo: Vec<f64> = (0..free.len()).map(|a| (best[a] - half[a]).max(lower[a])).collect();
        let hi: Vec<f64> = (0..free.len()).map(|a| (best[a] + half[a]).min(upper[a])).collect();
        let fine = StartPlan::new(&lo, &hi, opt.multistart_count);
        let extra: Vec<(Vec<f64>, f64)> = fine
            .points
            .par_iter()
            .map(|p| (p.clone(), objective(p).unwrap_or(f64::INFINITY)))
            .collect();
        evaluations += extra.len();
        let offset = starts.len();
        let mut fine_best = 0;
        for (m, (p, v)) in extra.iter().enumerate() {
            if better(*v, p, extra[fine_best].1, &extra[fine_best].0) {
                fine_best = m;
            }
        }
        starts.extend(extra);
        let cand = offset + fine_best;
        if better(starts[cand].1, &starts[cand].0, starts[seeds[0]].1, &starts[seeds[0]].0) {
            seeds[0] = cand;
        }
    }

    let nm = NelderMeadOptions {
        tolerance: opt.simplex_tolerance,
        max_iterations: opt.max_iterations,
        initial_step: 0.5 / plan.per_axis as f64,
    };
    let descents: Vec<_> = seeds
        .par_iter()
        .map(|&k| nelder_mead_box(objective, &starts[k].0, &lower, &upper, &nm))
        .collect();

    let mut best = &descents[0];
    for m in &descents[1..] {
        if better(m.value, &m.x, best.value, &best.x) {
            best = m;
        }
    }
    evaluations += descents.iter().map(|m| m.evaluations).sum::<usize>();
    if !best.value.is_finite() {
        return Err(Error::Estimation("all descents failed to evaluate".into()));
    }
    Ok(finish(embed(&best.x), best.value, best.converged, evaluations))
}

/// Start points: a regular grid of cell centres when `count` is a perfect
/// power of the dimension, otherwise a seeded Latin hypercube.
struct StartPlan {
    points: Vec<Vec<f64>>,
    per_axis: usize,
    regular: bool,
}

impl StartPlan {
    fn new(lower: &[f64], upper: &[f64], count: usize) -> Self {
        let q = lower.len();
        let m = (count as f64).powf(1.0 / q as f64).round().max(1.0) as usize;
        let centre = |a: usize, k: usize, m: usize| {
            lower[a] + (k as f64 + 0.5) / m as f64 * (upper[a] - lower[a])
        };
        if m.checked_pow(q as u32) == Some(count) {
            let mut points = Vec::with_capacity(count);
            for flat in 0..count {
                let mut rem = flat;
                let p = (0..q)
                    .map(|a| {
                        let k = rem % m;
                        rem /= m;
                        centre(a, k, m)
                    })
                    .collect();
                points.push(p);
            }
            return Self {
                points,
                per_axis: m,
                regular: true,
            };
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let perms: Vec<Vec<usize>> = (0..q)
            .map(|_| {
                let mut p: Vec<usize> = (0..count).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        let points = (0..count)
            .map(|r| (0..q).map(|a| centre(a, perms[a][r], count)).collect())
            .collect();
        Self {
            points,
            per_axis: count,
            regular: false,
        }
    }

    /// Indices of the points to descend from: local minima of the grid (all
    /// points for a hypercube), best first, at most `limit`.
    fn descent_starts(&self, evaluated: &[(Vec<f64>, f64)], limit: usize) -> Vec<usize> {
        let n = evaluated.len();
        let q = evaluated[0].0.len();
        let m = self.per_axis;
        let is_local_min = |flat: usize| -> bool {
            if !self.regular {
                return true;
            }
            let v = evaluated[flat].1;
            let mut stride = 1;
            for _ in 0..q {
                let k = (flat / stride) % m;
                if k > 0 && evaluated[flat - stride].1 < v {
                    return false;
                }
                if k + 1 < m && evaluated[flat + stride].1 < v {
                    return false;
                }
                stride *= m;
            }
            true
        };
        let mut cands: Vec<usize> = (0..n)
            .filter(|&k| evaluated[k].1.is_finite() && is_local_min(k))
            .collect();
        cands.sort_by(|&a, &b| {
            let (pa, pb) = (&evaluated[a], &evaluated[b]);
            if better(pa.1, &pa.0, pb.1, &pb.0) {
                std::cmp::Ordering::Less
            } else {
                std::cmp::Ordering::Greater
            }
        });
        cands.truncate(limit);
        cands
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use crate::surface::{MaturityGrid, TimeGrid};

    fn linear_surface(n: usize, d: usize) -> CumulativeVarianceSurface {
        let tg = TimeGrid::new(n).unwrap();
        let mg = MaturityGrid::uniform(d).unwrap();
        let mut v = vec![0.0; (n + 1) * (d + 1)];
        for i in 0..=n {
            for j in 1..=d {
                v[i * (d + 1) + j] = (j as f64 / d as f64 - tg.time(i)).max(0.0);
            }
        }
        CumulativeVarianceSurface::from_values(tg, mg, v).unwrap()
    }

    /// Random surface satisfying the zero convention and monotone in `j`.
    fn random_surface(n: usize, d: usize, seed: u64) -> CumulativeVarianceSurface {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tg = TimeGrid::new(n).unwrap();
        let mut cuts: Vec<f64> = (0..d - 1).map(|_| rng.random_range(0.0..1.0)).collect();
        cuts.sort_by(f64::total_cmp);
        let mut m = vec![0.0];
        for c in cuts {
            if c > m[m.len() - 1] + 1e-9 {
                m.push(c);
            }
        }
        m.push(1.0);
        let mg = MaturityGrid::new(m).unwrap();
        let d = mg.d();
        let mut v = vec![0.0; (n + 1) * (d + 1)];
        for i in 0..=n {
            let t = tg.time(i);
            for j in 1..=d {
                let dt = (mg.maturities()[j] - t.max(mg.maturities()[j - 1])).max(0.0);
                v[i * (d + 1) + j] = v[i * (d + 1) + j - 1] + dt * rng.random_range(0.2..2.0);
            }
        }
        CumulativeVarianceSurface::from_values(tg, mg, v).unwrap()
    }

    fn naive_sigma_hat(s: &CumulativeVarianceSurface, k: &dyn Kernel, xi: &[f64], i: usize) -> Vec<f64> {
        let t = s.time_grid().time(i);
        let m = s.maturities();
        (1..=s.d())
            .map(|j| {
                (1..=j)
                    .map(|l| k.eval(xi, m[l] - t).unwrap() * (s.get(i, l) - s.get(i, l - 1)))
                    .sum()
            })
            .collect()
    }

    fn naive_u(s: &CumulativeVarianceSurface, k: &dyn Kernel, xi: &[f64], eps: f64) -> f64 {
        let mut total = 0.0;
        for i in 1..=s.n() {
            let sig = naive_sigma_hat(s, k, xi, i - 1);
            let x = s.increment(i).unwrap();
            total += contrast_f(&sig, &x.0, eps);
        }
        total / s.n() as f64
    }

    #[test]
    fn streaming_matches_naive() {
        let kernels = [
            KernelSpec::Exponential,
            KernelSpec::shifted_power_law(0.01).unwrap(),
            KernelSpec::negative_power_law(0.01).unwrap(),
        ];
        for seed in 0..12 {
            let s = random_surface(3 + seed as usize * 4, 2 + seed as usize, seed);
            for k in &kernels {
                for xi in [[0.8, -1.2], [1.7, 0.6]] {
                    for i in 0..=s.n() {
                        let fast = sigma_hat(&s, k, &xi, i).unwrap();
                        let slow = naive_sigma_hat(&s, k, &xi, i);
                        for (a, b) in fast.iter().zip(&slow) {
                            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
                        }
                    }
                    let u = contrast_u(&s, k, &xi, 1e-3).unwrap();
                    let want = naive_u(&s, k, &xi, 1e-3);
                    assert!((u - want).abs() <= 1e-10 * want.abs(), "{u} vs {want}");
                }
            }
        }
    }

    #[test]
    fn contrast_term_values() {
        assert_eq!(contrast_f(&[0.0; 4], &[0.0; 4], 1.0), 1.0);
        // |σ̂|²/d = 1: log 2 + 4/8
        let v = contrast_f(&[1.0; 4], &[0.0; 4], 1.0);
        assert!((v - (2f64.ln() + 0.5)).abs() < 1e-15);
        assert!((v - 1.193147).abs() < 1e-6);
    }

    #[test]
    fn scale_minimizer_is_the_observed_energy() {
        let (d, eps, x_sq) = (5usize, 0.01, 3.7);
        let f = |a: f64| contrast_term(a * d as f64, x_sq, eps, d);
        let target = x_sq / d as f64;
        let grid: Vec<f64> = (1..4000).map(|k| k as f64 * 5e-4).collect();
        let best = grid
            .iter()
            .copied()
            .min_by(|a, b| f(*a).total_cmp(&f(*b)))
            .unwrap();
        assert!((best - target).abs() <= 5e-4, "{best} vs {target}");
        for &a in &grid {
            if (a - target).abs() > 1e-3 {
                assert!(f(a) > f(target));
            }
        }
    }

    #[test]
    fn sigma_hat_telescopes_for_constant_kernel() {
        // exponential with ξ = 0 is the constant kernel η
        let tg = TimeGrid::new(4).unwrap();
        let mg = MaturityGrid::uniform(5).unwrap();
        let mut v = vec![0.0; 5 * 6];
        for j in 1..=5 {
            v[j] = 0.1 * j as f64;
        }
        let s = CumulativeVarianceSurface::from_values(tg, mg, v).unwrap();
        let row = sigma_hat(&s, &KernelSpec::Exponential, &[2.0, 0.0], 0).unwrap();
        for (j, val) in row.iter().enumerate() {
            assert!((val - 0.2 * (j + 1) as f64).abs() < 1e-14);
        }
        let s = linear_surface(4, 2);
        assert!(sigma_hat(&s, &KernelSpec::Exponential, &[1.0, 1.0], 4)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        assert!(sigma_hat(&s, &KernelSpec::Exponential, &[1.0, 1.0], 5).is_err());
    }

    #[test]
    fn single_step_contrast_is_one_term() {
        let s = linear_surface(1, 3);
        let k = KernelSpec::Exponential;
        let xi = [0.8, 0.4];
        let u = contrast_u(&s, &k, &xi, 0.01).unwrap();
        let sig = sigma_hat(&s, &k, &xi, 0).unwrap();
        let x = s.increment(1).unwrap();
        assert!((u - contrast_f(&sig, &x.0, 0.01)).abs() < 1e-15);
    }

    #[test]
    fn epsilon_must_be_positive() {
        let s = linear_surface(2, 2);
        let e = contrast_u(&s, &KernelSpec::Exponential, &[1.0, 0.0], 0.0).unwrap_err();
        assert!(e.to_string().contains("ε > 0"), "{e}");
        assert!(ContrastConfig::new(-1.0).is_err());
    }

    #[test]
    fn contrast_is_bounded_below_by_log_epsilon() {
        let s = linear_surface(20, 10);
        let k = KernelSpec::Exponential;
        for eps in [1e-1, 1e-3, 1e-5] {
            for xi in [[0.1, -2.0], [1.0, 0.0], [5.0, 2.5]] {
                assert!(contrast_u(&s, &k, &xi, eps).unwrap() >= eps.ln());
            }
        }
    }

    #[test]
    fn degenerate_box_returns_the_point() {
        let s = linear_surface(10, 5);
        let b = ParamBox::new(vec![1.5, -0.5], vec![1.5, -0.5]).unwrap();
        let cfg = ContrastConfig::new(1e-3).unwrap();
        let r = minimize_contrast(&s, &KernelSpec::Exponential, &b, &cfg).unwrap();
        assert_eq!(r.theta.0, vec![1.5, -0.5]);
        assert!(r.converged);
        assert_eq!(r.at_boundary, vec![true, true]);
        let u = contrast_u(&s, &KernelSpec::Exponential, &[1.5, -0.5], 1e-3).unwrap();
        assert_eq!(r.contrast_value, u);
    }

    #[test]
    fn fixed_components_are_untouched() {
        let s = linear_surface(10, 5);
        let b = ParamBox::new(vec![0.01, -3.0], vec![10.0, 3.0]).unwrap();
        let cfg = ContrastConfig::new(1e-3).unwrap();
        let r = minimize_contrast_with_fixed(&s, &KernelSpec::Exponential, &b, &cfg, &[(0, 0.7)])
            .unwrap();
        assert_eq!(r.theta[0], 0.7);
        assert!(minimize_contrast_with_fixed(&s, &KernelSpec::Exponential, &b, &cfg, &[(2, 0.7)])
            .is_err());
    }

    #[test]
    fn two_point_grid_picks_the_smaller_end() {
        // with η fixed the contrast is monotone in ξ on this box, so the minimizer is an endpoint
        let s = linear_surface(12, 6);
        let k = KernelSpec::Exponential;
        let b = ParamBox::new(vec![1.0, 2.0], vec![1.0, 2.5]).unwrap();
        let mut cfg = ContrastConfig::new(1e-3).unwrap();
        cfg.optimizer.multistart_count = 2;
        let r = minimize_contrast(&s, &k, &b, &cfg).unwrap();
        let lo = contrast_u(&s, &k, &[1.0, 2.0], 1e-3).unwrap();
        let hi = contrast_u(&s, &k, &[1.0, 2.5], 1e-3).unwrap();
        assert_ne!(lo, hi);
        let want = if lo < hi { 2.0 } else { 2.5 };
        assert!((r.theta[1] - want).abs() < 1e-6, "{:?}", r.theta);
        assert!(r.contrast_value <= lo.min(hi));
    }

    #[test]
    fn start_plan_shapes() {
        let p = StartPlan::new(&[0.0, -3.0], &[9.0, 3.0], 9);
        assert!(p.regular);
        assert_eq!(p.points.len(), 9);
        assert_eq!(p.points[0], vec![1.5, -2.0]);
        assert_eq!(p.points[4], vec![4.5, 0.0]);
        let p = StartPlan::new(&[0.0, 0.0], &[1.0, 1.0], 5);
        assert!(!p.regular);
        assert_eq!(p.points.len(), 5);
        // one point per stratum along each axis
        for a in 0..2 {
            let mut strata: Vec<usize> = p.points.iter().map(|x| (x[a] * 5.0) as usize).collect();
            strata.sort();
            assert_eq!(strata, vec![0, 1, 2, 3, 4]);
        }
    }
}
