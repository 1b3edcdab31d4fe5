mod common;

use common::sim_config;
use fwdvar::contrast::{contrast_u, minimize_contrast, ContrastConfig};
use fwdvar::inference::infer;
use fwdvar::io::{read_surface, write_surface};
use fwdvar::simulate::{simulate_surface, stream_seed};
use fwdvar::{KernelSpec, ParamBox};
use rayon::prelude::*;

#[test]
fn contrast_prefers_the_true_parameter() {
    let theta0 = [1.0, -1.0];
    let wins = (0..100u64)
        .into_par_iter()
        .filter(|&r| {
            let sim = sim_config(KernelSpec::exponential(), theta0, 1.0, 2000, stream_seed(9, r));
            let s = simulate_surface(&sim).unwrap();
            let at_truth = contrast_u(&s, &sim.kernel, &theta0, 1e-3).unwrap();
            let away = contrast_u(&s, &sim.kernel, &[1.5, -0.5], 1e-3).unwrap();
            at_truth <= away
        })
        .count();
    assert!(wins >= 95, "U(θ₀) ≤ U(θ₀ + 0.5) in only {wins} of 100 seeds");
}

#[test]
fn simulate_write_read_estimate_infer() {
    let sim = sim_config(KernelSpec::exponential(), [1.0, -1.0], 1.0, 400, 11);
    let s = simulate_surface(&sim).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    write_surface(&s, &path, &[("seed".into(), "11".into())]).unwrap();
    let back = read_surface(&path).unwrap();
    assert_eq!(back, s);

    let bounds = ParamBox::new(vec![0.01, -3.0], vec![10.0, 3.0]).unwrap();
    let est = minimize_contrast(&back, &sim.kernel, &bounds, &ContrastConfig::new(1e-3).unwrap()).unwrap();
    assert!(est.converged);
    assert!(est.at_boundary.iter().all(|b| !b));
    let at_truth = contrast_u(&back, &sim.kernel, &[1.0, -1.0], 1e-3).unwrap();
    assert!(est.contrast_value <= at_truth);

    let r = infer(&back, &sim.kernel, &est.theta, 1e-3, &[0, 1], Some(&[1.0, -1.0]), 0.95).unwrap();
    for a in 0..2 {
        assert!(r.ci_lower[a] < est.theta[a] && est.theta[a] < r.ci_upper[a]);
    }
    // a 99.99% interval around a consistent estimate should hold the truth
    let wide = infer(&back, &sim.kernel, &est.theta, 1e-3, &[0, 1], None, 0.9999).unwrap();
    assert!(wide.ci_lower[0] < 1.0 && 1.0 < wide.ci_upper[0]);
    assert!(wide.ci_lower[1] < -1.0 && -1.0 < wide.ci_upper[1]);
    assert!(wide.z_marginal.is_none());
}

#[test]
fn fixed_scale_estimation_recovers_shape() {
    let k = KernelSpec::shifted_power_law(0.01).unwrap();
    let sim = sim_config(k, [0.1, -0.8], 0.04, 1000, 21);
    let s = simulate_surface(&sim).unwrap();
    let bounds = ParamBox::new(vec![0.001, -3.0], vec![10.0, 1.0]).unwrap();
    let cfg = ContrastConfig::new(1e-3).unwrap();
    let est = fwdvar::contrast::minimize_contrast_with_fixed(&s, &k, &bounds, &cfg, &[(0, 0.1)]).unwrap();
    assert_eq!(est.theta[0], 0.1);
    assert!((est.theta[1] + 0.8).abs() < 0.2, "{:?}", est.theta);
    let r = infer(&s, &k, &est.theta, 1e-3, &[1], Some(&[0.1, -0.8]), 0.95).unwrap();
    assert_eq!(r.covariance.components, vec![1]);
    assert_eq!(r.z_marginal.unwrap().len(), 1);
}
