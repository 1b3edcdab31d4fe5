//! Python bindings: surfaces, simulation, estimation, inference, Monte Carlo
//! studies and option-chain ingest.

use std::collections::BTreeMap;
use std::path::PathBuf;

use fwdvar::contrast::{self, ContrastConfig, DEFAULT_EPSILON};
use fwdvar::inference::{self, DEFAULT_LEVEL};
use fwdvar::ingest;
use fwdvar::io;
use fwdvar::montecarlo::{self, MCConfig};
use fwdvar::simulate::{self, ForwardVarianceCurve, SimConfig};
use fwdvar::surface::{default_maturity_count, validate_surface};
use fwdvar::{CumulativeVarianceSurface, ErrorClass, Kernel, KernelSpec, MaturityGrid, ParamBox, ParamVector, TimeGrid};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: fwdvar::Error) -> PyErr {
    match e.class() {
        ErrorClass::Numerical => PyArithmeticError::new_err(e.to_string()),
        ErrorClass::Config | ErrorClass::Data => PyValueError::new_err(e.to_string()),
    }
}

fn kernel_spec(name: &str, shift: f64) -> PyResult<KernelSpec> {
    let k = match name {
        "exponential" => KernelSpec::exponential(),
        "shifted_power_law" => KernelSpec::shifted_power_law(shift).map_err(to_py)?,
        "negative_power_law" => KernelSpec::negative_power_law(shift).map_err(to_py)?,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown kernel `{other}`; expected exponential, shifted_power_law or negative_power_law"
            )))
        }
    };
    Ok(k)
}

fn maturity_grid(n: usize, d: Option<usize>) -> PyResult<MaturityGrid> {
    MaturityGrid::uniform(d.unwrap_or_else(|| default_maturity_count(n))).map_err(to_py)
}

/// Cumulative forward variance `I[i][j]` on `t_i = i/n` × a maturity grid.
#[pyclass(name = "Surface", module = "pyfwdvar", frozen)]
struct PySurface {
    inner: CumulativeVarianceSurface,
}

#[pymethods]
impl PySurface {
    #[new]
    fn new(maturities: Vec<f64>, values: Vec<Vec<f64>>) -> PyResult<Self> {
        if values.is_empty() {
            return Err(PyValueError::new_err("values needs at least one row"));
        }
        let tg = TimeGrid::new(values.len() - 1).map_err(to_py)?;
        let mg = MaturityGrid::new(maturities).map_err(to_py)?;
        let flat: Vec<f64> = values.into_iter().flatten().collect();
        let inner = CumulativeVarianceSurface::from_values(tg, mg, flat).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        let inner = io::read_surface(&path).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        io::write_surface(&self.inner, &path, &[]).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn maturities(&self) -> Vec<f64> {
        self.inner.maturities().to_vec()
    }

    /// Rows `i = 0..=n`, each of length `d + 1`.
    fn values(&self) -> Vec<Vec<f64>> {
        (0..=self.inner.n()).map(|i| self.inner.row(i).to_vec()).collect()
    }

    fn get(&self, i: usize, j: usize) -> PyResult<f64> {
        if i > self.inner.n() || j > self.inner.d() {
            return Err(PyValueError::new_err(format!("cell ({i}, {j}) out of range")));
        }
        Ok(self.inner.get(i, j))
    }

    /// Violation messages; empty when the surface is acceptable.
    #[pyo3(signature = (strict=false))]
    fn validate(&self, strict: bool) -> Vec<String> {
        validate_surface(&self.inner, strict)
            .iter()
            .map(|v| v.to_string())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Surface(n={}, d={})", self.inner.n(), self.inner.d())
    }
}

#[pyclass(name = "Estimate", module = "pyfwdvar", frozen, get_all)]
struct PyEstimate {
    theta: Vec<f64>,
    contrast_value: f64,
    converged: bool,
    at_boundary: Vec<bool>,
    evaluations: usize,
}

#[pymethods]
impl PyEstimate {
    fn __repr__(&self) -> String {
        format!(
            "Estimate(theta={:?}, contrast_value={}, converged={})",
            self.theta, self.contrast_value, self.converged
        )
    }
}

#[pyclass(name = "Inference", module = "pyfwdvar", frozen, get_all)]
struct PyInference {
    theta: Vec<f64>,
    components: Vec<usize>,
    b: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
    gamma: Vec<Vec<f64>>,
    condition_number_b: f64,
    n: usize,
    level: f64,
    ci_lower: Vec<f64>,
    ci_upper: Vec<f64>,
    z_marginal: Option<Vec<f64>>,
    z_full: Option<Vec<f64>>,
}

#[pyclass(name = "SummaryRow", module = "pyfwdvar", frozen, get_all)]
struct PySummaryRow {
    epsilon: f64,
    parameter: usize,
    name: String,
    true_value: f64,
    mean: f64,
    bias: f64,
    rmse: f64,
    z_mean: f64,
    z_var: f64,
    coverage: f64,
    successes: usize,
    failures: usize,
}

#[pymethods]
impl PySummaryRow {
    fn __repr__(&self) -> String {
        format!(
            "SummaryRow({} eps={:e}: bias={:.4} rmse={:.4} E[Z]={:.3} Var(Z)={:.3} coverage={:.3})",
            self.name, self.epsilon, self.bias, self.rmse, self.z_mean, self.z_var, self.coverage
        )
    }
}

/// `k(θ, t)` for one of the built-in families.
#[pyfunction]
#[pyo3(signature = (kernel, theta, t, shift=0.01))]
fn kernel_eval(kernel: &str, theta: Vec<f64>, t: f64, shift: f64) -> PyResult<f64> {
    kernel_spec(kernel, shift)?.eval(&theta, t).map_err(to_py)
}

/// `[∂_α k(θ, t)]_α`.
#[pyfunction]
#[pyo3(signature = (kernel, theta, t, shift=0.01))]
fn kernel_grad(kernel: &str, theta: Vec<f64>, t: f64, shift: f64) -> PyResult<Vec<f64>> {
    let k = kernel_spec(kernel, shift)?;
    let mut out = vec![0.0; k.dim()];
    k.grad(&theta, t, &mut out).map_err(to_py)?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (kernel, theta0, n, d=None, v0=1.0, seed=0, refinement=1, shift=0.01))]
#[allow(clippy::too_many_arguments)]
fn simulate_surface(
    py: Python<'_>,
    kernel: &str,
    theta0: Vec<f64>,
    n: usize,
    d: Option<usize>,
    v0: f64,
    seed: u64,
    refinement: usize,
    shift: f64,
) -> PyResult<PySurface> {
    let cfg = SimConfig {
        kernel: kernel_spec(kernel, shift)?,
        theta0: ParamVector::new(theta0).map_err(to_py)?,
        v0: ForwardVarianceCurve::constant(v0).map_err(to_py)?,
        time_grid: TimeGrid::new(n).map_err(to_py)?,
        maturity_grid: maturity_grid(n, d)?,
        u_mesh_refinement: refinement,
        seed,
    };
    let inner = py.detach(|| simulate::simulate_surface(&cfg)).map_err(to_py)?;
    Ok(PySurface { inner })
}

/// `U_{n,d}^ε(θ)`.
#[pyfunction]
#[pyo3(signature = (surface, kernel, theta, epsilon=DEFAULT_EPSILON, shift=0.01))]
fn contrast_u(surface: &PySurface, kernel: &str, theta: Vec<f64>, epsilon: f64, shift: f64) -> PyResult<f64> {
    let k = kernel_spec(kernel, shift)?;
    contrast::contrast_u(&surface.inner, &k, &theta, epsilon).map_err(to_py)
}

/// `σ̂_{t_i}(θ)`, length `d`.
#[pyfunction]
#[pyo3(signature = (surface, kernel, theta, i, shift=0.01))]
fn sigma_hat(surface: &PySurface, kernel: &str, theta: Vec<f64>, i: usize, shift: f64) -> PyResult<Vec<f64>> {
    let k = kernel_spec(kernel, shift)?;
    contrast::sigma_hat(&surface.inner, &k, &theta, i).map_err(to_py)
}

/// Minimizes the contrast over the box; `fixed` maps component index to value.
#[pyfunction]
#[pyo3(signature = (surface, kernel, lower, upper, epsilon=DEFAULT_EPSILON, fixed=None, shift=0.01))]
#[allow(clippy::too_many_arguments)]
fn estimate(
    py: Python<'_>,
    surface: &PySurface,
    kernel: &str,
    lower: Vec<f64>,
    upper: Vec<f64>,
    epsilon: f64,
    fixed: Option<BTreeMap<usize, f64>>,
    shift: f64,
) -> PyResult<PyEstimate> {
    let k = kernel_spec(kernel, shift)?;
    let bounds = ParamBox::new(lower, upper).map_err(to_py)?;
    let cfg = ContrastConfig::new(epsilon).map_err(to_py)?;
    let fixed: Vec<(usize, f64)> = fixed.unwrap_or_default().into_iter().collect();
    let s = &surface.inner;
    let r = py
        .detach(|| contrast::minimize_contrast_with_fixed(s, &k, &bounds, &cfg, &fixed))
        .map_err(to_py)?;
    Ok(PyEstimate {
        theta: r.theta.0,
        contrast_value: r.contrast_value,
        converged: r.converged,
        at_boundary: r.at_boundary,
        evaluations: r.evaluations,
    })
}

/// Plug-in covariance, confidence intervals and, given `theta0`, studentized statistics.
#[pyfunction]
#[pyo3(signature = (surface, kernel, theta, epsilon=DEFAULT_EPSILON, components=None, theta0=None, level=DEFAULT_LEVEL, shift=0.01))]
#[allow(clippy::too_many_arguments)]
fn infer(
    py: Python<'_>,
    surface: &PySurface,
    kernel: &str,
    theta: Vec<f64>,
    epsilon: f64,
    components: Option<Vec<usize>>,
    theta0: Option<Vec<f64>>,
    level: f64,
    shift: f64,
) -> PyResult<PyInference> {
    let k = kernel_spec(kernel, shift)?;
    let free = components.unwrap_or_else(|| (0..k.dim()).collect());
    let s = &surface.inner;
    let r = py
        .detach(|| inference::infer(s, &k, &theta, epsilon, &free, theta0.as_deref(), level))
        .map_err(to_py)?;
    Ok(PyInference {
        theta: r.theta,
        components: r.covariance.components,
        b: r.covariance.b,
        d: r.covariance.d,
        gamma: r.covariance.gamma,
        condition_number_b: r.covariance.condition_number_b,
        n: r.n,
        level: r.level,
        ci_lower: r.ci_lower,
        ci_upper: r.ci_upper,
        z_marginal: r.z_marginal,
        z_full: r.z_full,
    })
}

/// Seeded Monte Carlo study; returns one summary row per (ε, parameter).
#[pyfunction]
#[pyo3(signature = (kernel, theta0, n, replications, lower, upper, d=None, v0=1.0, seed=0, epsilon=DEFAULT_EPSILON, epsilon_sweep=None, fixed=None, workers=None, shift=0.01))]
#[allow(clippy::too_many_arguments)]
fn run_mc(
    py: Python<'_>,
    kernel: &str,
    theta0: Vec<f64>,
    n: usize,
    replications: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    d: Option<usize>,
    v0: f64,
    seed: u64,
    epsilon: f64,
    epsilon_sweep: Option<Vec<f64>>,
    fixed: Option<BTreeMap<usize, f64>>,
    workers: Option<usize>,
    shift: f64,
) -> PyResult<Vec<PySummaryRow>> {
    let sim = SimConfig {
        kernel: kernel_spec(kernel, shift)?,
        theta0: ParamVector::new(theta0).map_err(to_py)?,
        v0: ForwardVarianceCurve::constant(v0).map_err(to_py)?,
        time_grid: TimeGrid::new(n).map_err(to_py)?,
        maturity_grid: maturity_grid(n, d)?,
        u_mesh_refinement: 1,
        seed,
    };
    let bounds = ParamBox::new(lower, upper).map_err(to_py)?;
    let mut cfg = MCConfig::new(sim, ContrastConfig::new(epsilon).map_err(to_py)?, bounds, replications);
    cfg.epsilon_sweep = epsilon_sweep.unwrap_or_default();
    cfg.fixed_components = fixed.unwrap_or_default();
    cfg.validate().map_err(to_py)?;
    let summary = py
        .detach(|| {
            let records = montecarlo::run_study(&cfg, workers)?;
            let names = cfg.sim.kernel.param_names();
            montecarlo::summarize(&records, cfg.theta0.as_slice(), &names)
        })
        .map_err(to_py)?;
    Ok(summary
        .rows
        .into_iter()
        .map(|r| PySummaryRow {
            epsilon: r.epsilon,
            parameter: r.parameter,
            name: r.name,
            true_value: r.true_value,
            mean: r.mean,
            bias: r.bias,
            rmse: r.rmse,
            z_mean: r.z_mean,
            z_var: r.z_var,
            coverage: r.coverage,
            successes: r.successes,
            failures: r.failures,
        })
        .collect())
}

/// Builds a surface from a chain CSV; returns the surface and the coverage report text.
#[pyfunction]
#[pyo3(signature = (chain_path, n, d=None))]
fn ingest_chain(py: Python<'_>, chain_path: PathBuf, n: usize, d: Option<usize>) -> PyResult<(PySurface, String)> {
    let tg = TimeGrid::new(n).map_err(to_py)?;
    let mg = maturity_grid(n, d)?;
    let (inner, report) = py
        .detach(|| {
            let chain = ingest::read_chain(&chain_path)?;
            ingest::build_surface(&chain, tg, mg)
        })
        .map_err(to_py)?;
    Ok((PySurface { inner }, report.render()))
}

/// Black–Scholes price in forward units with total variance `variance`.
#[pyfunction]
fn black_scholes_price(kind: &str, spot: f64, strike: f64, variance: f64) -> PyResult<f64> {
    let kind = match kind {
        "C" | "call" => ingest::OptionKind::Call,
        "P" | "put" => ingest::OptionKind::Put,
        other => return Err(PyValueError::new_err(format!("unknown option kind `{other}`"))),
    };
    Ok(ingest::black_scholes_price(kind, spot, strike, variance))
}

#[pymodule]
fn pyfwdvar(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PySurface>()?;
    m.add_class::<PyEstimate>()?;
    m.add_class::<PyInference>()?;
    m.add_class::<PySummaryRow>()?;
    m.add_function(wrap_pyfunction!(kernel_eval, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_grad, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_surface, m)?)?;
    m.add_function(wrap_pyfunction!(contrast_u, m)?)?;
    m.add_function(wrap_pyfunction!(sigma_hat, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(infer, m)?)?;
    m.add_function(wrap_pyfunction!(run_mc, m)?)?;
    m.add_function(wrap_pyfunction!(ingest_chain, m)?)?;
    m.add_function(wrap_pyfunction!(black_scholes_price, m)?)?;
    Ok(())
}
