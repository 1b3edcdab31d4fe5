//! Brute-force reference computations and fixtures shared by the integration tests.
#![allow(dead_code)]

use fwdvar::contrast::contrast_f;
use fwdvar::simulate::{ForwardVarianceCurve, SimConfig};
use fwdvar::surface::default_maturity_count;
use fwdvar::{CumulativeVarianceSurface, Kernel, KernelSpec, MaturityGrid, ParamVector, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sim_config(kernel: KernelSpec, theta0: [f64; 2], v0: f64, n: usize, seed: u64) -> SimConfig {
    SimConfig {
        kernel,
        theta0: ParamVector::new(theta0.to_vec()).unwrap(),
        v0: ForwardVarianceCurve::constant(v0).unwrap(),
        time_grid: TimeGrid::new(n).unwrap(),
        maturity_grid: MaturityGrid::uniform(default_maturity_count(n)).unwrap(),
        u_mesh_refinement: 1,
        seed,
    }
}

/// Nondecreasing surface on a random maturity grid, with zeros at expired cells.
pub fn random_surface(n: usize, d: usize, seed: u64) -> CumulativeVarianceSurface {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tg = TimeGrid::new(n).unwrap();
    let mut cuts: Vec<f64> = (0..d - 1).map(|_| rng.random_range(0.0..1.0)).collect();
    cuts.sort_by(f64::total_cmp);
    let mut m = vec![0.0];
    for c in cuts {
        if c > m[m.len() - 1] + 1e-6 {
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
            let width = (mg.maturities()[j] - t.max(mg.maturities()[j - 1])).max(0.0);
            v[i * (d + 1) + j] = v[i * (d + 1) + j - 1] + width * rng.random_range(0.2..2.0);
        }
    }
    CumulativeVarianceSurface::from_values(tg, mg, v).unwrap()
}

pub fn kernel_families() -> [KernelSpec; 3] {
    [
        KernelSpec::exponential(),
        KernelSpec::shifted_power_law(0.01).unwrap(),
        KernelSpec::negative_power_law(0.01).unwrap(),
    ]
}

/// `σ̂^j = Σ_{l ≤ j} k(ξ, T_l − t_i)(I^{T_l} − I^{T_{l−1}})`, straight from the definition.
pub fn naive_sigma_hat(s: &CumulativeVarianceSurface, k: &dyn Kernel, xi: &[f64], i: usize) -> Vec<f64> {
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

/// `[∂_α σ̂^j]_{α, j}` from pointwise kernel gradients.
pub fn naive_sigma_hat_grad(
    s: &CumulativeVarianceSurface,
    k: &dyn Kernel,
    xi: &[f64],
    i: usize,
) -> Vec<Vec<f64>> {
    let t = s.time_grid().time(i);
    let m = s.maturities();
    let q = k.dim();
    let mut g = vec![0.0; q];
    let mut out = vec![vec![0.0; s.d()]; q];
    for j in 1..=s.d() {
        for l in 1..=j {
            k.grad(xi, m[l] - t, &mut g).unwrap();
            let di = s.get(i, l) - s.get(i, l - 1);
            for a in 0..q {
                out[a][j - 1] += g[a] * di;
            }
        }
    }
    out
}

pub fn naive_u(s: &CumulativeVarianceSurface, k: &dyn Kernel, xi: &[f64], eps: f64) -> f64 {
    let mut total = 0.0;
    for i in 1..=s.n() {
        let sig = naive_sigma_hat(s, k, xi, i - 1);
        let x = s.increment(i).unwrap();
        total += contrast_f(&sig, &x.0, eps);
    }
    total / s.n() as f64
}

/// `(B̂, D̂, Γ̂)` for a two-parameter kernel, by direct summation.
pub fn naive_covariance(
    s: &CumulativeVarianceSurface,
    k: &dyn Kernel,
    xi: &[f64],
    eps: f64,
) -> ([[f64; 2]; 2], [[f64; 2]; 2], [[f64; 2]; 2]) {
    let d = s.d() as f64;
    let mut b = [[0.0; 2]; 2];
    let mut dm = [[0.0; 2]; 2];
    for i in 1..=s.n() {
        let sig = naive_sigma_hat(s, k, xi, i - 1);
        let grad = naive_sigma_hat_grad(s, k, xi, i - 1);
        let sq = sig.iter().map(|x| x * x).sum::<f64>() / d;
        let e: Vec<f64> = grad
            .iter()
            .map(|row| row.iter().zip(&sig).map(|(g, x)| g * x).sum::<f64>() / d)
            .collect();
        let wb = 4.0 / (sq + eps).powi(2);
        let wd = 8.0 * sq * sq / (sq + eps).powi(4);
        for a in 0..2 {
            for c in 0..2 {
                b[a][c] += wb * e[a] * e[c];
                dm[a][c] += wd * e[a] * e[c];
            }
        }
    }
    let n = s.n() as f64;
    for a in 0..2 {
        for c in 0..2 {
            b[a][c] /= n;
            dm[a][c] /= n;
        }
    }
    let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
    let inv = [[b[1][1] / det, -b[0][1] / det], [-b[1][0] / det, b[0][0] / det]];
    let mut tmp = [[0.0; 2]; 2];
    let mut gamma = [[0.0; 2]; 2];
    for a in 0..2 {
        for c in 0..2 {
            tmp[a][c] = (0..2).map(|m| inv[a][m] * dm[m][c]).sum();
        }
    }
    for a in 0..2 {
        for c in 0..2 {
            gamma[a][c] = (0..2).map(|m| tmp[a][m] * inv[m][c]).sum();
        }
    }
    (b, dm, gamma)
}

/// Largest entrywise difference relative to the largest reference entry.
pub fn rel_max_diff(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = got
        .iter()
        .zip(want)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
