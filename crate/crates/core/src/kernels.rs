//! Parametric kernel families `k(θ, t)` and their parameter gradients.
//!
//! Built-in families (all with `q = 2` parameters):
//!
//! ```text
//! Exponential        k(t) = η·exp(−ξ t)          θ = (η, ξ)
//! ShiftedPowerLaw    k(t) = η·(t + c)^(H − 1/2)   θ = (η, H)
//! NegativePowerLaw   k(t) = η·(t + c)^(−ξ)        θ = (η, ξ)
//! ```
//!
//! `NegativePowerLaw` is evaluated through the shifted power-law code path with
//! `H = 1/2 − ξ`. Every kernel is extended by `k(θ, t) = 0` for `t < 0`.
//!
//! Other kernels can be plugged in by implementing [`Kernel`].

use std::fmt::Debug;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel values above this bound are reported as evaluation failures.
pub const KERNEL_VALUE_LIMIT: f64 = 1e12;

/// A point in the parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("parameter vector is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "parameter vector has non-finite entry {v}"
            )));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// Closed box `[lower, upper]` standing in for the compact convex parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::InvalidInput("parameter box is empty".into()));
        }
        for (a, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::InvalidInput(format!(
                    "parameter box coordinate {a}: invalid bounds [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, alpha: usize) -> f64 {
        self.upper[alpha] - self.lower[alpha]
    }

    /// `true` iff `lower ≤ θ ≤ upper` componentwise.
    pub fn contains(&self, theta: &[f64]) -> Result<bool> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        Ok(theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (lo, hi))| lo <= x && x <= hi))
    }

    pub fn project(&self, theta: &mut [f64]) {
        for (x, (lo, hi)) in theta.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.clamp(*lo, *hi);
        }
    }
}

/// Free-function form of [`ParamBox::contains`].
pub fn validate_params(theta: &ParamVector, bounds: &ParamBox) -> Result<bool> {
    bounds.contains(theta)
}

/// Evaluates `k(θ, nodes[l] − t)` along a row of lags for a fixed `θ`.
///
/// Callers only request nodes with `nodes[l] ≥ t`.
pub trait RowKernel {
    /// Writes `k(θ, nodes[start + m] − t)` into `out[m]` for every `m < out.len()`.
    fn fill(&mut self, t: f64, start: usize, out: &mut [f64]) -> Result<()>;
}

/// `k(θ, nodes[l] − times[r])` over the cells `l ≥ starts[r]` of a fixed
/// lattice, with the `θ`-free work done once at construction.
pub trait KernelLattice: Send + Sync {
    /// Writes row `r` (cells `starts[r]..nodes.len()`) into `out`.
    fn fill(&self, theta: &[f64], row: usize, out: &mut [f64]) -> Result<()>;
}

/// A kernel family `k(θ, t)` with analytic first derivatives in `θ`.
pub trait Kernel: Send + Sync + Debug {
    fn dim(&self) -> usize;

    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|a| format!("theta{a}")).collect()
    }

    /// `k(θ, t)`; zero for `t < 0`.
    fn eval(&self, theta: &[f64], t: f64) -> Result<f64>;

    /// `[∂_α k(θ, t)]_α` into `out`; zero for `t < 0`.
    fn grad(&self, theta: &[f64], t: f64, out: &mut [f64]) -> Result<()>;

    /// Row evaluator bound to `θ` and a node set. Override when the family
    /// admits something faster than pointwise evaluation.
    fn row_kernel<'a>(
        &'a self,
        theta: &'a [f64],
        nodes: &'a [f64],
    ) -> Result<Box<dyn RowKernel + 'a>> {
        check_dim(self.dim(), theta)?;
        Ok(Box::new(PointwiseRow {
            kernel: self,
            theta,
            nodes,
        }))
    }

    /// Lattice evaluator for repeated sweeps over the same cells; `None` when
    /// the family gains nothing from one.
    fn lattice(
        &self,
        _times: &[f64],
        _nodes: &[f64],
        _starts: &[usize],
    ) -> Option<Box<dyn KernelLattice>> {
        None
    }
}

struct PointwiseRow<'a, K: Kernel + ?Sized> {
    kernel: &'a K,
    theta: &'a [f64],
    nodes: &'a [f64],
}

impl<K: Kernel + ?Sized> RowKernel for PointwiseRow<'_, K> {
    fn fill(&mut self, t: f64, start: usize, out: &mut [f64]) -> Result<()> {
        let nodes = &self.nodes[start..start + out.len()];
        for (o, u) in out.iter_mut().zip(nodes) {
            *o = self.kernel.eval(self.theta, u - t)?;
        }
        Ok(())
    }
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

#[inline]
fn guard(lag: f64, value: f64) -> Result<f64> {
    if value.is_finite() && value <= KERNEL_VALUE_LIMIT {
        Ok(value)
    } else {
        Err(Error::KernelEvaluation { lag, value })
    }
}

fn guard_row(nodes: &[f64], t: f64, out: &[f64]) -> Result<()> {
    // single pass that vectorizes; locate the culprit only on failure
    let ok = out
        .iter()
        .fold(true, |ok, v| ok & (v.is_finite() & (*v <= KERNEL_VALUE_LIMIT)));
    if ok {
        return Ok(());
    }
    let (m, v) = out
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v <= KERNEL_VALUE_LIMIT))
        .expect("row guard failed without an offending entry");
    Err(Error::KernelEvaluation {
        lag: nodes[m] - t,
        value: *v,
    })
}

/// The built-in kernel families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `η·exp(−ξ t)`, `θ = (η, ξ)`.
    Exponential,
    /// `η·(t + c)^(H − 1/2)`, `θ = (η, H)`.
    ShiftedPowerLaw { shift: f64 },
    /// `η·(t + c)^(−ξ)`, `θ = (η, ξ)`; stored as the shifted power law with `H = 1/2 − ξ`.
    NegativePowerLaw { shift: f64 },
}

impl KernelSpec {
    pub fn exponential() -> Self {
        KernelSpec::Exponential
    }

    pub fn shifted_power_law(shift: f64) -> Result<Self> {
        check_shift(shift)?;
        Ok(KernelSpec::ShiftedPowerLaw { shift })
    }

    pub fn negative_power_law(shift: f64) -> Result<Self> {
        check_shift(shift)?;
        Ok(KernelSpec::NegativePowerLaw { shift })
    }

    /// Family name as used in configuration files.
    pub fn family_name(&self) -> &'static str {
        match self {
            KernelSpec::Exponential => "exponential",
            KernelSpec::ShiftedPowerLaw { .. } => "shifted_power_law",
            KernelSpec::NegativePowerLaw { .. } => "negative_power_law",
        }
    }

    pub fn shift(&self) -> Option<f64> {
        match self {
            KernelSpec::Exponential => None,
            KernelSpec::ShiftedPowerLaw { shift } | KernelSpec::NegativePowerLaw { shift } => {
                Some(*shift)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.shift() {
            Some(c) => check_shift(c),
            None => Ok(()),
        }
    }

    /// Maps a parameter vector to the `(η, exponent)` pair of the power-law path.
    #[inline]
    fn power_exponent(&self, theta: &[f64]) -> f64 {
        match self {
            KernelSpec::ShiftedPowerLaw { .. } => theta[1] - 0.5,
            KernelSpec::NegativePowerLaw { .. } => -theta[1],
            KernelSpec::Exponential => unreachable!("not a power-law family"),
        }
    }
}

fn check_shift(shift: f64) -> Result<()> {
    if shift.is_finite() && shift > 0.0 {
        Ok(())
    } else {
        Err(Error::config("shift", format!("must be > 0, got {shift}")))
    }
}

impl Kernel for KernelSpec {
    fn dim(&self) -> usize {
        2
    }

    fn param_names(&self) -> Vec<String> {
        let names: [&str; 2] = match self {
            KernelSpec::Exponential | KernelSpec::NegativePowerLaw { .. } => ["eta", "xi"],
            KernelSpec::ShiftedPowerLaw { .. } => ["eta", "H"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    fn eval(&self, theta: &[f64], t: f64) -> Result<f64> {
        check_dim(2, theta)?;
        if t < 0.0 {
            return Ok(0.0);
        }
        let eta = theta[0];
        let value = match self {
            KernelSpec::Exponential => eta * (-theta[1] * t).exp(),
            KernelSpec::ShiftedPowerLaw { shift } | KernelSpec::NegativePowerLaw { shift } => {
                eta * (t + shift).powf(self.power_exponent(theta))
            }
        };
        guard(t, value)
    }

    fn grad(&self, theta: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        check_dim(2, theta)?;
        check_dim(2, out)?;
        if t < 0.0 {
            out.fill(0.0);
            return Ok(());
        }
        let eta = theta[0];
        match self {
            KernelSpec::Exponential => {
                let e = guard(t, (-theta[1] * t).exp())?;
                out[0] = e;
                out[1] = -eta * t * e;
            }
            KernelSpec::ShiftedPowerLaw { shift } | KernelSpec::NegativePowerLaw { shift } => {
                let base = t + shift;
                let d_eta = guard(t, base.powf(self.power_exponent(theta)))?;
                let d_h = d_eta * eta * base.ln();
                out[0] = d_eta;
                out[1] = match self {
                    KernelSpec::NegativePowerLaw { .. } => -d_h,
                    _ => d_h,
                };
            }
        }
        guard(t, out[1].abs())?;
        Ok(())
    }

    fn row_kernel<'a>(
        &'a self,
        theta: &'a [f64],
        nodes: &'a [f64],
    ) -> Result<Box<dyn RowKernel + 'a>> {
        check_dim(2, theta)?;
        match self {
            KernelSpec::Exponential => {
                let xi = theta[1];
                let span = nodes.iter().fold(0.0_f64, |m, u| m.max(u.abs()));
                if (xi * span).abs() > 500.0 {
                    return Ok(Box::new(PointwiseRow {
                        kernel: self,
                        theta,
                        nodes,
                    }));
                }
                // k(T − t) = η e^{ξ t} · e^{−ξ T}: one exponential per node, not per cell
                let decay = nodes.iter().map(|u| (-xi * u).exp()).collect();
                Ok(Box::new(ExponentialRow {
                    eta: theta[0],
                    xi,
                    nodes,
                    decay,
                }))
            }
            KernelSpec::ShiftedPowerLaw { shift } | KernelSpec::NegativePowerLaw { shift } => {
                Ok(Box::new(PowerLawRow {
                    eta: theta[0],
                    exponent: self.power_exponent(theta),
                    shift: *shift,
                    nodes,
                }))
            }
        }
    }

    fn lattice(
        &self,
        times: &[f64],
        nodes: &[f64],
        starts: &[usize],
    ) -> Option<Box<dyn KernelLattice>> {
        let shift = self.shift()?;
        let cells: usize = starts.iter().map(|s| nodes.len().saturating_sub(*s)).sum();
        if cells > POWER_LATTICE_MAX_CELLS {
            return None;
        }
        let mut offsets = Vec::with_capacity(starts.len() + 1);
        let mut log_lag = Vec::with_capacity(cells);
        offsets.push(0);
        for (t, &start) in times.iter().zip(starts) {
            log_lag.extend(nodes[start.min(nodes.len())..].iter().map(|u| (u - t + shift).ln()));
            offsets.push(log_lag.len());
        }
        Some(Box::new(PowerLawLattice {
            negative: matches!(self, KernelSpec::NegativePowerLaw { .. }),
            times: times.to_vec(),
            nodes: nodes.to_vec(),
            starts: starts.to_vec(),
            offsets,
            log_lag,
        }))
    }
}

/// Upper bound on cached log-lags (8 bytes each).
const POWER_LATTICE_MAX_CELLS: usize = 64 << 20;

struct PowerLawLattice {
    negative: bool,
    times: Vec<f64>,
    nodes: Vec<f64>,
    starts: Vec<usize>,
    offsets: Vec<usize>,
    log_lag: Vec<f64>,
}

impl KernelLattice for PowerLawLattice {
    fn fill(&self, theta: &[f64], row: usize, out: &mut [f64]) -> Result<()> {
        check_dim(2, theta)?;
        let logs = &self.log_lag[self.offsets[row]..self.offsets[row + 1]];
        if out.len() != logs.len() {
            return Err(Error::DimensionMismatch {
                expected: logs.len(),
                got: out.len(),
            });
        }
        let eta = theta[0];
        let p = if self.negative { -theta[1] } else { theta[1] - 0.5 };
        for (o, l) in out.iter_mut().zip(logs) {
            *o = eta * exp_fast(p * l);
        }
        guard_row(&self.nodes[self.starts[row]..], self.times[row], out)
    }
}

/// `eˣ` to within a few ulp, written so that loops over it vectorize.
#[inline(always)]
fn exp_fast(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const ROUND: f64 = 6_755_399_441_055_744.0;
    let xc = x.clamp(-708.0, 709.0);
    let kf = xc * std::f64::consts::LOG2_E + ROUND;
    let k = kf - ROUND;
    let r = (xc - k * LN2_HI) - k * LN2_LO;
    // Taylor series to degree 13 on |r| ≤ ln2/2
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let scale = f64::from_bits((kf.to_bits().wrapping_add(1023)) << 52);
    let v = p * scale;
    if x > 709.0 {
        f64::INFINITY
    } else if x < -708.0 {
        0.0
    } else {
        v
    }
}

struct ExponentialRow<'a> {
    eta: f64,
    xi: f64,
    nodes: &'a [f64],
    decay: Vec<f64>,
}

impl RowKernel for ExponentialRow<'_> {
    fn fill(&mut self, t: f64, start: usize, out: &mut [f64]) -> Result<()> {
        let scale = self.eta * (self.xi * t).exp();
        let decay = &self.decay[start..start + out.len()];
        for (o, a) in out.iter_mut().zip(decay) {
            *o = scale * a;
        }
        guard_row(&self.nodes[start..], t, out)
    }
}

struct PowerLawRow<'a> {
    eta: f64,
    exponent: f64,
    shift: f64,
    nodes: &'a [f64],
}

impl RowKernel for PowerLawRow<'_> {
    fn fill(&mut self, t: f64, start: usize, out: &mut [f64]) -> Result<()> {
        let nodes = &self.nodes[start..start + out.len()];
        let offset = self.shift - t;
        for (o, u) in out.iter_mut().zip(nodes) {
            *o = self.eta * (u + offset).powf(self.exponent);
        }
        guard_row(nodes, t, out)
    }
}
