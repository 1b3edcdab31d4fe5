//! Plug-in asymptotic covariance, studentized statistics and confidence intervals.
//!
//! With `s_i = |σ̂_{t_{i−1}}(ξ)|²/d` and `ê_i = [∂_α σ̂_{t_{i−1}}(ξ)ᵀ σ̂_{t_{i−1}}(ξ) / d]_α`:
//!
//! ```text
//! B̂ = (1/n) Σ_i 4/(s_i + ε)² ê_i ê_iᵀ
//! D̂ = (1/n) Σ_i 8 s_i²/(s_i + ε)⁴ ê_i ê_iᵀ
//! Γ̂ = B̂⁻¹ D̂ B̂⁻¹
//! ```

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::contrast::check_epsilon;
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::surface::CumulativeVarianceSurface;

/// `B̂` is treated as singular above this condition number.
pub const MAX_CONDITION: f64 = 1e12;
/// Eigenvalues of `Γ̂` below this fraction of the largest are treated as zero.
pub const EIGEN_CLIP: f64 = 1e-14;
pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    /// Parameter indices the matrices refer to, in order.
    pub components: Vec<usize>,
    pub b: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub condition_number_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub theta: Vec<f64>,
    pub covariance: CovarianceEstimate,
    pub n: usize,
    pub level: f64,
    /// `√n (θ̂_α − θ₀_α) / √Γ̂_αα` per free component, when `θ₀` is known.
    pub z_marginal: Option<Vec<f64>>,
    /// `√n Γ̂^{−1/2} (θ̂ − θ₀)` over the free components, when `θ₀` is known.
    pub z_full: Option<Vec<f64>>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
}

/// `[∂_α σ̂_{t_i}^j(ξ)]_{α, j}`, a `q × d` matrix.
pub fn sigma_hat_grad(
    s: &CumulativeVarianceSurface,
    kernel: &dyn Kernel,
    xi: &[f64],
    i: usize,
) -> Result<Vec<Vec<f64>>> {
    if i > s.n() {
        return Err(Error::IndexOutOfRange {
            index: i,
            max: s.n(),
        });
    }
    let q = kernel.dim();
    check_dim(q, xi)?;
    let (d, start) = (s.d(), s.first_alive(i));
    let mut out = vec![vec![0.0; d]; q];
    if start > d {
        return Ok(out);
    }
    let t = s.time_grid().time(i);
    let (m, row) = (s.maturities(), s.row(i));
    let mut g = vec![0.0; q];
    let mut acc = vec![0.0; q];
    for l in start..=d {
        kernel.grad(xi, m[l] - t, &mut g)?;
        let di = row[l] - row[l - 1];
        for a in 0..q {
            acc[a] += g[a] * di;
            out[a][l - 1] = acc[a];
        }
    }
    Ok(out)
}

fn check_dim(expected: usize, theta: &[f64]) -> Result<()> {
    if theta.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: theta.len(),
        });
    }
    Ok(())
}

pub fn covariance_estimate(
    s: &CumulativeVarianceSurface,
    kernel: &dyn Kernel,
    xi: &[f64],
    epsilon: f64,
) -> Result<CovarianceEstimate> {
    let all: Vec<usize> = (0..kernel.dim()).collect();
    covariance_estimate_for(s, kernel, xi, epsilon, &all)
}

/// `B̂`, `D̂`, `Γ̂` restricted to the listed parameter components.
pub fn covariance_estimate_for(
    s: &CumulativeVarianceSurface,
    kernel: &dyn Kernel,
    xi: &[f64],
    epsilon: f64,
    components: &[usize],
) -> Result<CovarianceEstimate> {
    check_epsilon(epsilon)?;
    let q = kernel.dim();
    check_dim(q, xi)?;
    if components.is_empty() {
        return Err(Error::config("fixed", "no free parameter components left"));
    }
    if let Some(&a) = components.iter().find(|&&a| a >= q) {
        return Err(Error::IndexOutOfRange { index: a, max: q - 1 });
    }
    let p = components.len();
    let d = s.d();
    let df = d as f64;
    let m = s.maturities();

    let mut b = DMatrix::<f64>::zeros(p, p);
    let mut dd = DMatrix::<f64>::zeros(p, p);
    let mut g = vec![0.0; q];
    let mut kvals = vec![0.0; d + 1];
    let mut gvals = vec![0.0; (d + 1) * p];
    let mut gacc = vec![0.0; p];
    let mut e = vec![0.0; p];
    for r in 0..s.n() {
        let start = s.first_alive(r);
        e.fill(0.0);
        let mut sig_sq = 0.0;
        if start <= d {
            let t = s.time_grid().time(r);
            let row = s.row(r);
            let alive = d + 1 - start;
            kernel
                .row_kernel(xi, m)?
                .fill(t, start, &mut kvals[..alive])?;
            for l in start..=d {
                kernel.grad(xi, m[l] - t, &mut g)?;
                for (c, &a) in components.iter().enumerate() {
                    gvals[(l - start) * p + c] = g[a];
                }
            }
            let mut acc = 0.0;
            gacc.fill(0.0);
            for l in start..=d {
                let di = row[l] - row[l - 1];
                acc += kvals[l - start] * di;
                sig_sq += acc * acc;
                for c in 0..p {
                    gacc[c] += gvals[(l - start) * p + c] * di;
                    e[c] += gacc[c] * acc;
                }
            }
            for v in &mut e {
                *v /= df;
            }
        }
        let sv = sig_sq / df;
        let y = 4.0 / (sv + epsilon).powi(2);
        let z = 8.0 * sv * sv / (sv + epsilon).powi(4);
        for a in 0..p {
            for c in 0..=a {
                let ee = e[a] * e[c];
                b[(a, c)] += y * ee;
                dd[(a, c)] += z * ee;
            }
        }
    }
    let nf = s.n() as f64;
    for a in 0..p {
        for c in 0..=a {
            b[(a, c)] /= nf;
            dd[(a, c)] /= nf;
            b[(c, a)] = b[(a, c)];
            dd[(c, a)] = dd[(a, c)];
        }
    }
    sandwich(b, dd, components.to_vec())
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let p = rows.len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidInput("matrix must be square".into()));
    }
    Ok(DMatrix::from_fn(p, p, |r, c| rows[r][c]))
}

/// Builds `Γ̂ = B̂⁻¹ D̂ B̂⁻¹` from symmetric `B̂`, `D̂`.
pub fn sandwich_from(b: &[Vec<f64>], d: &[Vec<f64>]) -> Result<CovarianceEstimate> {
    let (b, d) = (from_rows(b)?, from_rows(d)?);
    if b.nrows() != d.nrows() {
        return Err(Error::DimensionMismatch {
            expected: b.nrows(),
            got: d.nrows(),
        });
    }
    let components = (0..b.nrows()).collect();
    sandwich(b, d, components)
}

fn sandwich(b: DMatrix<f64>, d: DMatrix<f64>, components: Vec<usize>) -> Result<CovarianceEstimate> {
    if b.iter().chain(d.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NotInvertible("non-finite entries in B̂ or D̂".into()));
    }
    let eig = SymmetricEigen::new(b.clone());
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularMatrix {
            condition,
            matrix: to_rows(&b),
        });
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    let b_inv = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
    let g = &b_inv * &d * &b_inv;
    let gamma = (&g + g.transpose()) * 0.5;
    Ok(CovarianceEstimate {
        components,
        b: to_rows(&b),
        d: to_rows(&d),
        gamma: to_rows(&gamma),
        condition_number_b: condition,
    })
}

/// `√n Γ̂^{−1/2} (θ̂ − θ₀)` with the symmetric square root.
pub fn studentize(theta_hat: &[f64], theta0: &[f64], gamma: &[Vec<f64>], n: usize) -> Result<Vec<f64>> {
    let g = from_rows(gamma)?;
    check_dim(g.nrows(), theta_hat)?;
    check_dim(g.nrows(), theta0)?;
    let eig = SymmetricEigen::new(g);
    let lmax = eig.eigenvalues.max();
    if !(lmax > 0.0) || eig.eigenvalues.iter().any(|l| *l <= EIGEN_CLIP * lmax) {
        return Err(Error::NotInvertible(format!(
            "Γ̂ has eigenvalues {:?}",
            eig.eigenvalues.as_slice()
        )));
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let root = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    let diff = DVector::from_iterator(
        theta_hat.len(),
        theta_hat.iter().zip(theta0).map(|(a, b)| a - b),
    );
    let z = root * diff * (n as f64).sqrt();
    Ok(z.iter().copied().collect())
}

/// `√n (θ̂_α − θ₀_α) / √Γ̂_αα` per component.
pub fn studentize_marginal(
    theta_hat: &[f64],
    theta0: &[f64],
    gamma: &[Vec<f64>],
    n: usize,
) -> Result<Vec<f64>> {
    check_dim(gamma.len(), theta_hat)?;
    check_dim(gamma.len(), theta0)?;
    let sn = (n as f64).sqrt();
    (0..gamma.len())
        .map(|a| {
            let v = gamma[a][a];
            if v > 0.0 && v.is_finite() {
                Ok(sn * (theta_hat[a] - theta0[a]) / v.sqrt())
            } else {
                Err(Error::NotInvertible(format!("Γ̂[{a}][{a}] = {v}")))
            }
        })
        .collect()
}

/// Two-sided quantile `z_{(1+level)/2}` of the standard normal.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::config("level", format!("must lie in [0, 1), got {level}")));
    }
    if level == 0.0 {
        return Ok(0.0);
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(std.inverse_cdf(0.5 * (1.0 + level)))
}

/// `θ̂_α ± z_{(1+level)/2} √(Γ̂_αα / n)`.
pub fn confidence_interval(
    theta_hat: &[f64],
    gamma: &[Vec<f64>],
    n: usize,
    level: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim(gamma.len(), theta_hat)?;
    let z = normal_quantile(level)?;
    let mut lower = Vec::with_capacity(theta_hat.len());
    let mut upper = Vec::with_capacity(theta_hat.len());
    for (a, th) in theta_hat.iter().enumerate() {
        let v = gamma[a][a];
        if !(v >= 0.0) {
            return Err(Error::NotInvertible(format!(
                "negative diagonal Γ̂[{a}][{a}] = {v}"
            )));
        }
        let half = z * (v / n as f64).sqrt();
        lower.push(th - half);
        upper.push(th + half);
    }
    Ok((lower, upper))
}

/// Covariance, intervals and (given `θ₀`) studentized statistics at `θ̂`,
/// over the parameter components listed in `free`.
pub fn infer(
    s: &CumulativeVarianceSurface,
    kernel: &dyn Kernel,
    theta_hat: &[f64],
    epsilon: f64,
    free: &[usize],
    theta0: Option<&[f64]>,
    level: f64,
) -> Result<InferenceResult> {
    let cov = covariance_estimate_for(s, kernel, theta_hat, epsilon, free)?;
    let pick = |v: &[f64]| -> Vec<f64> { free.iter().map(|&a| v[a]).collect() };
    let est = pick(theta_hat);
    let (ci_lower, ci_upper) = confidence_interval(&est, &cov.gamma, s.n(), level)?;
    let (z_marginal, z_full) = match theta0 {
        Some(t0) => {
            check_dim(theta_hat.len(), t0)?;
            let t0 = pick(t0);
            (
                Some(studentize_marginal(&est, &t0, &cov.gamma, s.n())?),
                Some(studentize(&est, &t0, &cov.gamma, s.n())?),
            )
        }
        None => (None, None),
    };
    Ok(InferenceResult {
        theta: theta_hat.to_vec(),
        covariance: cov,
        n: s.n(),
        level,
        z_marginal,
        z_full,
        ci_lower,
        ci_upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrast::sigma_hat;
    use crate::kernels::KernelSpec;
    use crate::simulate::{simulate_surface, ForwardVarianceCurve, SimConfig};
    use crate::surface::{MaturityGrid, TimeGrid};
    use crate::ParamVector;
    use approx::assert_relative_eq;

    fn simulated(kernel: KernelSpec, theta: [f64; 2], n: usize, d: usize, seed: u64) -> CumulativeVarianceSurface {
        simulate_surface(&SimConfig {
            kernel,
            theta0: ParamVector(theta.to_vec()),
            v0: ForwardVarianceCurve::constant(1.0).unwrap(),
            time_grid: TimeGrid::new(n).unwrap(),
            maturity_grid: MaturityGrid::uniform(d).unwrap(),
            u_mesh_refinement: 1,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn scalar_sandwich() {
        let c = sandwich_from(&[vec![2.5]], &[vec![3.0]]).unwrap();
        assert_relative_eq!(c.gamma[0][0], 3.0 / 6.25, max_relative = 1e-15);
        assert_relative_eq!(c.gamma[0][0] * 2.5 * 2.5, 3.0, max_relative = 1e-15);
        assert_eq!(c.condition_number_b, 1.0);
    }

    #[test]
    fn singular_b_is_reported() {
        let b = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        match sandwich_from(&b, &b) {
            Err(Error::SingularMatrix { condition, matrix }) => {
                assert!(condition > MAX_CONDITION);
                assert_eq!(matrix, b);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_sigma_rows_give_zero_d() {
        // η = 0 makes σ̂ ≡ 0 while ∂_η σ̂ stays nonzero
        let s = simulated(KernelSpec::Exponential, [1.0, -1.0], 20, 8, 3);
        let k = KernelSpec::Exponential;
        let xi = [0.0, 0.5];
        let b = covariance_estimate_for(&s, &k, &xi, 1e-2, &[0]);
        // ê = ∂σ̂ᵀσ̂/d vanishes too, so B̂ is singular
        assert!(matches!(b, Err(Error::SingularMatrix { .. })));
        let mut bsum = 0.0;
        for r in 0..s.n() {
            let g = sigma_hat_grad(&s, &k, &xi, r).unwrap();
            let sig = sigma_hat(&s, &k, &xi, r).unwrap();
            assert!(sig.iter().all(|v| *v == 0.0));
            assert!(g[0].iter().any(|v| *v != 0.0));
            let e: f64 = g[0].iter().zip(&sig).map(|(a, b)| a * b).sum::<f64>() / s.d() as f64;
            bsum += 4.0 / 1e-4 * e * e;
        }
        assert_eq!(bsum, 0.0);
    }

    #[test]
    fn grad_rows_for_constant_derivative() {
        // ∂_η k = e^{−ξt} = 1 at ξ = 0, so row 0 telescopes to I
        let s = simulated(KernelSpec::Exponential, [1.0, -1.0], 10, 6, 4);
        let g = sigma_hat_grad(&s, &KernelSpec::Exponential, &[0.3, 0.0], 2).unwrap();
        for j in 1..=s.d() {
            assert_relative_eq!(g[0][j - 1], s.get(2, j), max_relative = 1e-14);
        }
        let g = sigma_hat_grad(&s, &KernelSpec::Exponential, &[0.0, 0.7], 2).unwrap();
        assert!(g[1].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn grad_matches_finite_differences() {
        let s = simulated(KernelSpec::Exponential, [1.0, -1.0], 30, 12, 9);
        for k in [KernelSpec::Exponential, KernelSpec::shifted_power_law(0.01).unwrap()] {
            let xi = [0.9, -0.6];
            for i in [0, 7, 21] {
                let g = sigma_hat_grad(&s, &k, &xi, i).unwrap();
                for a in 0..2 {
                    let h = 1e-6;
                    let (mut up, mut dn) = (xi, xi);
                    up[a] += h;
                    dn[a] -= h;
                    let su = sigma_hat(&s, &k, &up, i).unwrap();
                    let sd = sigma_hat(&s, &k, &dn, i).unwrap();
                    for j in 0..s.d() {
                        let fd = (su[j] - sd[j]) / (2.0 * h);
                        let scale = g[a][j].abs().max(1e-8);
                        assert!((fd - g[a][j]).abs() / scale < 1e-5, "{fd} vs {}", g[a][j]);
                    }
                }
            }
        }
    }

    fn naive_cov(s: &CumulativeVarianceSurface, k: &dyn Kernel, xi: &[f64], eps: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = s.d() as f64;
        let mut b = DMatrix::zeros(2, 2);
        let mut dd = DMatrix::zeros(2, 2);
        for i in 1..=s.n() {
            let sig = sigma_hat(s, k, xi, i - 1).unwrap();
            let g = sigma_hat_grad(s, k, xi, i - 1).unwrap();
            let sv = sig.iter().map(|v| v * v).sum::<f64>() / d;
            let e = DVector::from_iterator(
                2,
                (0..2).map(|a| g[a].iter().zip(&sig).map(|(x, y)| x * y).sum::<f64>() / d),
            );
            let ee = &e * e.transpose();
            b += ee.clone() * (4.0 / (sv + eps).powi(2));
            dd += ee * (8.0 * sv * sv / (sv + eps).powi(4));
        }
        (b / s.n() as f64, dd / s.n() as f64)
    }

    #[test]
    fn covariance_matches_naive_and_is_psd() {
        for (seed, k) in [
            (1, KernelSpec::Exponential),
            (2, KernelSpec::negative_power_law(0.01).unwrap()),
        ] {
            let s = simulated(KernelSpec::Exponential, [1.0, -1.0], 40, 15, seed);
            let xi = [1.1, 0.8];
            let c = covariance_estimate(&s, &k, &xi, 1e-3).unwrap();
            let (b, dd) = naive_cov(&s, &k, &xi, 1e-3);
            for r in 0..2 {
                for col in 0..2 {
                    assert_relative_eq!(c.b[r][col], b[(r, col)], max_relative = 1e-10);
                    assert_relative_eq!(c.d[r][col], dd[(r, col)], max_relative = 1e-10);
                    assert_eq!(c.b[r][col], c.b[col][r]);
                    assert_eq!(c.gamma[r][col], c.gamma[col][r]);
                }
            }
            for m in [&c.b, &c.d, &c.gamma] {
                let mm = from_rows(m).unwrap();
                let norm = mm.norm();
                assert!(SymmetricEigen::new(mm).eigenvalues.min() >= -1e-10 * norm);
            }
            // restricted estimate equals the sub-problem, not the sub-matrix of Γ̂
            let c1 = covariance_estimate_for(&s, &k, &xi, 1e-3, &[1]).unwrap();
            assert_relative_eq!(c1.b[0][0], c.b[1][1], max_relative = 1e-14);
            assert_relative_eq!(c1.gamma[0][0], c.d[1][1] / c.b[1][1].powi(2), max_relative = 1e-12);
        }
    }

    #[test]
    fn studentization_examples() {
        let z = studentize(&[1.2], &[1.0], &[vec![4.0]], 100).unwrap();
        assert_relative_eq!(z[0], 1.0, max_relative = 1e-14);
        let zm = studentize_marginal(&[1.2], &[1.0], &[vec![4.0]], 100).unwrap();
        assert_relative_eq!(zm[0], 1.0, max_relative = 1e-14);
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let a = studentize(&[0.3, -0.1], &[0.1, 0.2], &id, 25).unwrap();
        let b = studentize_marginal(&[0.3, -0.1], &[0.1, 0.2], &id, 25).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(*x, *y, max_relative = 1e-14);
        }
        assert_eq!(studentize(&[0.5, 0.5], &[0.5, 0.5], &id, 9).unwrap(), vec![0.0, 0.0]);
        let degenerate = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(matches!(
            studentize(&[0.0, 0.0], &[0.0, 0.0], &degenerate, 4),
            Err(Error::NotInvertible(_))
        ));
        // |z|² is the Mahalanobis norm under Γ̂
        let g = vec![vec![2.0, 0.8], vec![0.8, 1.0]];
        let z = studentize(&[1.0, 1.0], &[0.0, 0.0], &g, 1).unwrap();
        let d = DVector::from_vec(vec![1.0, 1.0]);
        let quad = (d.transpose() * from_rows(&g).unwrap().try_inverse().unwrap() * &d)[(0, 0)];
        assert_relative_eq!(z[0] * z[0] + z[1] * z[1], quad, max_relative = 1e-12);
    }

    #[test]
    fn confidence_interval_examples() {
        assert_relative_eq!(normal_quantile(0.95).unwrap(), 1.959963985, max_relative = 1e-9);
        let (lo, hi) = confidence_interval(&[0.3], &[vec![0.0]], 100, 0.95).unwrap();
        assert_eq!((lo[0], hi[0]), (0.3, 0.3));
        let (lo, hi) = confidence_interval(&[0.3], &[vec![2.0]], 100, 0.0).unwrap();
        assert_eq!((lo[0], hi[0]), (0.3, 0.3));
        let se: f64 = 0.02628;
        let n = 10_000;
        let gamma = vec![vec![se * se * n as f64]];
        let (lo, hi) = confidence_interval(&[-0.855], &gamma, n, 0.95).unwrap();
        assert!((lo[0] + 0.906).abs() < 1e-3 && (hi[0] + 0.803).abs() < 1e-3, "{lo:?} {hi:?}");
        assert!(confidence_interval(&[0.3], &[vec![-1.0]], 100, 0.95).is_err());
        assert!(confidence_interval(&[0.3], &[vec![1.0]], 100, 1.0).is_err());
    }

    #[test]
    fn inference_on_simulated_surface() {
        let s = simulated(KernelSpec::Exponential, [1.0, -1.0], 200, 80, 11);
        let k = KernelSpec::Exponential;
        let r = infer(&s, &k, &[1.0, -1.0], 1e-3, &[0, 1], Some(&[1.0, -1.0]), 0.95).unwrap();
        assert_eq!(r.z_marginal.unwrap(), vec![0.0, 0.0]);
        assert_eq!(r.z_full.unwrap(), vec![0.0, 0.0]);
        for a in 0..2 {
            assert!(r.ci_lower[a] < r.theta[a] && r.theta[a] < r.ci_upper[a]);
        }
        let r = infer(&s, &k, &[1.0, -1.0], 1e-3, &[1], None, 0.95).unwrap();
        assert_eq!(r.ci_lower.len(), 1);
        assert!(r.z_marginal.is_none());
    }
}
