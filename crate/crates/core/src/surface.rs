//! Discretely observed cumulative forward variance `I[i][j] = I_{t_i}^{T_j}`.
//!
//! The surface is stored as a dense `(n+1) × (d+1)` matrix in time-major order.
//! Cells with `t_i ≥ T_j` are zero by convention, and column `j = 0` (`T₀ = 0`)
//! is identically zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Warning threshold for `√n · max_j (T_j − T_{j−1})`.
pub const GRID_SPACING_WARNING: f64 = 0.5;

/// Uniform time grid `t_i = i/n`, `i = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    n: usize,
}

impl TimeGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("n", "time grid needs n ≥ 1"));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.n as f64
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n).map(|i| self.time(i)).collect()
    }
}

/// Maturity grid `0 = T₀ < T₁ < … < T_d ≤ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MaturityGrid {
    maturities: Vec<f64>,
}

impl MaturityGrid {
    pub fn new(maturities: Vec<f64>) -> Result<Self> {
        if maturities.len() < 2 {
            return Err(Error::InvalidInput(
                "maturity grid needs T₀ = 0 and at least one positive maturity".into(),
            ));
        }
        if maturities[0] != 0.0 {
            return Err(Error::InvalidInput(format!(
                "maturity grid must start at T₀ = 0, got {}",
                maturities[0]
            )));
        }
        for (j, w) in maturities.windows(2).enumerate() {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::InvalidInput(format!(
                    "maturity grid not strictly increasing at index {}: {} then {}",
                    j + 1,
                    w[0],
                    w[1]
                )));
            }
        }
        let last = *maturities.last().unwrap();
        if last > 1.0 {
            return Err(Error::InvalidInput(format!(
                "maturity grid must end at T_d ≤ 1, got {last}"
            )));
        }
        Ok(Self { maturities })
    }

    /// `T_j = j/d`, `j = 0..=d`.
    pub fn uniform(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::config("d", "maturity grid needs d ≥ 1"));
        }
        Self::new((0..=d).map(|j| j as f64 / d as f64).collect())
    }

    pub fn d(&self) -> usize {
        self.maturities.len() - 1
    }

    pub fn maturities(&self) -> &[f64] {
        &self.maturities
    }

    pub fn max_spacing(&self) -> f64 {
        self.maturities
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// First index `j ≥ 1` with `T_j > t` (`d + 1` when none).
    #[inline]
    pub fn first_alive(&self, t: f64) -> usize {
        self.maturities.partition_point(|&m| m <= t).max(1)
    }
}

impl TryFrom<Vec<f64>> for MaturityGrid {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MaturityGrid> for Vec<f64> {
    fn from(g: MaturityGrid) -> Self {
        g.maturities
    }
}

/// `d = ⌈n^0.95⌉`, the maturity count used by the simulation designs.
pub fn default_maturity_count(n: usize) -> usize {
    (n as f64).powf(0.95).ceil() as usize
}

/// Row `ΔI_i = [(I_{t_i}^{T_j} − I_{t_{i−1}}^{T_j})/√Δ]_{j=1..d}`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementVector(pub Vec<f64>);

impl IncrementVector {
    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    NonFinite { i: usize, j: usize, value: f64 },
    Negative { i: usize, j: usize, value: f64 },
    NonzeroExpired { i: usize, j: usize, value: f64 },
    NonzeroFirstColumn { i: usize, value: f64 },
    DecreasingInMaturity { i: usize, j: usize, previous: f64, value: f64 },
    CoarseMaturityGrid { ratio: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub severity: Severity,
    pub kind: ViolationKind,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match &self.kind {
            ViolationKind::NonFinite { i, j, value } => {
                write!(f, "{tag}: non-finite value {value} at (i={i}, j={j})")
            }
            ViolationKind::Negative { i, j, value } => {
                write!(f, "{tag}: negative value {value} at (i={i}, j={j})")
            }
            ViolationKind::NonzeroExpired { i, j, value } => write!(
                f,
                "{tag}: nonzero value {value} at (i={i}, j={j}) where t_i ≥ T_j"
            ),
            ViolationKind::NonzeroFirstColumn { i, value } => {
                write!(f, "{tag}: nonzero value {value} at (i={i}, j=0)")
            }
            ViolationKind::DecreasingInMaturity {
                i,
                j,
                previous,
                value,
            } => write!(
                f,
                "{tag}: decreasing in maturity at (i={i}, j={j}): {previous} then {value}"
            ),
            ViolationKind::CoarseMaturityGrid { ratio } => write!(
                f,
                "{tag}: sqrt(n)·max maturity spacing = {ratio:.4} exceeds {GRID_SPACING_WARNING}"
            ),
        }
    }
}

/// The estimator's input: `I[i][j]` on a time grid × maturity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeVarianceSurface {
    time_grid: TimeGrid,
    maturity_grid: MaturityGrid,
    values: Vec<f64>,
}

impl CumulativeVarianceSurface {
    /// Wraps a row-major `(n+1) × (d+1)` matrix. Contents are not validated here;
    /// call [`validate_surface`] for that.
    pub fn from_values(
        time_grid: TimeGrid,
        maturity_grid: MaturityGrid,
        values: Vec<f64>,
    ) -> Result<Self> {
        let expected = (time_grid.n() + 1) * (maturity_grid.d() + 1);
        if values.len() != expected {
            return Err(Error::InvalidInput(format!(
                "surface needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            time_grid,
            maturity_grid,
            values,
        })
    }

    pub fn zeros(time_grid: TimeGrid, maturity_grid: MaturityGrid) -> Self {
        let len = (time_grid.n() + 1) * (maturity_grid.d() + 1);
        Self {
            time_grid,
            maturity_grid,
            values: vec![0.0; len],
        }
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn maturity_grid(&self) -> &MaturityGrid {
        &self.maturity_grid
    }

    pub fn n(&self) -> usize {
        self.time_grid.n()
    }

    pub fn d(&self) -> usize {
        self.maturity_grid.d()
    }

    pub fn maturities(&self) -> &[f64] {
        self.maturity_grid.maturities()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * (self.d() + 1) + j]
    }

    /// Row `i` as `[I_{t_i}^{T_0}, …, I_{t_i}^{T_d}]`.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.d() + 1;
        &self.values[i * w..(i + 1) * w]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.d() + 1;
        &mut self.values[i * w..(i + 1) * w]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// First maturity index alive at row `i` (`T_j > t_i`), `d + 1` when none.
    #[inline]
    pub fn first_alive(&self, i: usize) -> usize {
        self.maturity_grid.first_alive(self.time_grid.time(i))
    }

    /// `ΔI_i` for `1 ≤ i ≤ n`.
    pub fn increment(&self, i: usize) -> Result<IncrementVector> {
        if i == 0 || i > self.n() {
            return Err(Error::IndexOutOfRange {
                index: i,
                max: self.n(),
            });
        }
        let scale = (self.n() as f64).sqrt();
        let (prev, cur) = (self.row(i - 1), self.row(i));
        Ok(IncrementVector(
            cur[1..]
                .iter()
                .zip(&prev[1..])
                .map(|(c, p)| (c - p) * scale)
                .collect(),
        ))
    }

    /// `|ΔI_i|²` without allocating.
    pub(crate) fn increment_norm_sq(&self, i: usize) -> f64 {
        let (prev, cur) = (self.row(i - 1), self.row(i));
        let sq: f64 = cur[1..]
            .iter()
            .zip(&prev[1..])
            .map(|(c, p)| (c - p) * (c - p))
            .sum();
        sq * self.n() as f64
    }
}

/// Checks the surface invariants. Returns an empty list iff all hold; in strict
/// mode a coarse maturity grid is additionally reported as a warning.
pub fn validate_surface(s: &CumulativeVarianceSurface, strict: bool) -> Vec<Violation> {
    let mut out = Vec::new();
    let err = |kind| Violation {
        severity: Severity::Error,
        kind,
    };
    for i in 0..=s.n() {
        let alive = s.first_alive(i);
        let row = s.row(i);
        for (j, &value) in row.iter().enumerate() {
            if !value.is_finite() {
                out.push(err(ViolationKind::NonFinite { i, j, value }));
                continue;
            }
            if value < 0.0 {
                out.push(err(ViolationKind::Negative { i, j, value }));
            }
            if j == 0 {
                if value != 0.0 {
                    out.push(err(ViolationKind::NonzeroFirstColumn { i, value }));
                }
            } else if j < alive {
                if value != 0.0 {
                    out.push(err(ViolationKind::NonzeroExpired { i, j, value }));
                }
            } else {
                let previous = row[j - 1];
                if previous.is_finite() && value < previous {
                    out.push(err(ViolationKind::DecreasingInMaturity {
                        i,
                        j,
                        previous,
                        value,
                    }));
                }
            }
        }
    }
    if strict {
        let ratio = (s.n() as f64).sqrt() * s.maturity_grid().max_spacing();
        if ratio > GRID_SPACING_WARNING {
            out.push(Violation {
                severity: Severity::Warning,
                kind: ViolationKind::CoarseMaturityGrid { ratio },
            });
        }
    }
    out
}

pub fn has_errors(violations: &[Violation]) -> bool {
    violations.iter().any(|v| v.severity == Severity::Error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn toy(n: usize, d: usize, f: impl Fn(f64, f64) -> f64) -> CumulativeVarianceSurface {
        let tg = TimeGrid::new(n).unwrap();
        let mg = MaturityGrid::uniform(d).unwrap();
        let mut s = CumulativeVarianceSurface::zeros(tg, mg.clone());
        for i in 0..=n {
            let t = tg.time(i);
            for j in 1..=d {
                let big_t = mg.maturities()[j];
                if t < big_t {
                    s.row_mut(i)[j] = f(t, big_t);
                }
            }
        }
        s
    }

    #[test]
    fn grids() {
        let g = MaturityGrid::uniform(4).unwrap();
        assert_eq!(g.maturities(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.first_alive(0.0), 1);
        assert_eq!(g.first_alive(0.25), 2);
        assert_eq!(g.first_alive(0.3), 2);
        assert_eq!(g.first_alive(1.0), 5);
        assert!(MaturityGrid::new(vec![0.0, 0.5, 0.5]).is_err());
        assert!(MaturityGrid::new(vec![0.1, 0.5]).is_err());
        assert!(MaturityGrid::new(vec![0.0, 1.5]).is_err());
        assert!(TimeGrid::new(0).is_err());
        assert_eq!(default_maturity_count(2000), 1368);
        assert_eq!(default_maturity_count(10_000), 6310);
    }

    #[test]
    fn increments() {
        let mut s = toy(100, 4, |t, big_t| big_t - t);
        assert_eq!(s.increment(0).unwrap_err().to_string(), "index 0 out of range 1..=100");
        assert!(s.increment(101).is_err());
        s.row_mut(0)[1] = 0.0;
        s.row_mut(1)[1] = 0.01;
        let x = s.increment(1).unwrap();
        assert!((x.0[0] - 0.1).abs() < 1e-15);
        // rows past the last maturity
        let tg = TimeGrid::new(8).unwrap();
        let mg = MaturityGrid::new(vec![0.0, 0.25, 0.5]).unwrap();
        let mut s = CumulativeVarianceSurface::zeros(tg, mg);
        for i in 0..4 {
            s.row_mut(i)[2] = 0.5 - tg.time(i);
        }
        assert!(s.increment(4).unwrap().0.iter().any(|v| *v != 0.0));
        for i in 5..=8 {
            assert!(s.increment(i).unwrap().0.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn increments_match_double_loop() {
        let s = toy(30, 7, |t, big_t| (big_t - t) * (1.0 + (13.0 * t + 5.0 * big_t).sin().abs()));
        let dt: f64 = 1.0 / 30.0;
        for i in 1..=30 {
            let got = s.increment(i).unwrap();
            for j in 1..=7 {
                let want = (s.get(i, j) - s.get(i - 1, j)) / dt.sqrt();
                assert!((got.0[j - 1] - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
            assert!((s.increment_norm_sq(i) - got.norm_sq()).abs() <= 1e-12 * got.norm_sq().max(1e-30));
        }
    }

    #[test]
    fn validation() {
        let s = toy(10, 5, |t, big_t| big_t - t);
        assert!(validate_surface(&s, false).is_empty());

        let mut bad = s.clone();
        bad.row_mut(0)[1] = -0.01;
        let v = validate_surface(&bad, false);
        assert!(v.iter().any(|v| matches!(v.kind, ViolationKind::Negative { i: 0, j: 1, .. })));

        let mut bad = s.clone();
        bad.row_mut(10)[5] = 0.3;
        let v = validate_surface(&bad, false);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0].kind, ViolationKind::NonzeroExpired { i: 10, j: 5, .. }));

        let mut bad = s.clone();
        bad.row_mut(2)[0] = 0.1;
        assert!(has_errors(&validate_surface(&bad, false)));

        let mut bad = s;
        bad.row_mut(0)[3] = 0.1;
        assert!(validate_surface(&bad, false)
            .iter()
            .any(|v| matches!(v.kind, ViolationKind::DecreasingInMaturity { i: 0, j: 3, .. })));
    }

    #[test]
    fn strict_grid_warning() {
        // √100 · (1/5) = 2 > 0.5
        let s = toy(100, 5, |t, big_t| big_t - t);
        let v = validate_surface(&s, true);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].severity, Severity::Warning);
        assert!(validate_surface(&s, false).is_empty());

        // the simulation design: n = 10,000, d = 1,374 gives √n/d ≈ 0.073
        let ratio = 10_000f64.sqrt() / 1374.0;
        assert!(ratio < GRID_SPACING_WARNING);
        assert!((ratio - 0.0728).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn increment_is_linear(a in -3.0..3.0f64, b in -3.0..3.0f64, p in 0.1..2.0f64, q in 0.1..2.0f64, i in 1usize..=12) {
            let s1 = toy(12, 5, |t, big_t| p * (big_t - t));
            let s2 = toy(12, 5, |t, big_t| (big_t - t).powf(q));
            let combo: Vec<f64> = s1.values().iter().zip(s2.values()).map(|(x, y)| a * x + b * y).collect();
            let s = CumulativeVarianceSurface::from_values(*s1.time_grid(), s1.maturity_grid().clone(), combo).unwrap();
            let lhs = s.increment(i).unwrap();
            let (r1, r2) = (s1.increment(i).unwrap(), s2.increment(i).unwrap());
            for m in 0..5 {
                let rhs = a * r1.0[m] + b * r2.0[m];
                prop_assert!((lhs.0[m] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }
        }
    }
}
