//! Shape-preserving piecewise cubic Hermite interpolation (Fritsch–Carlson).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.x, &self.y)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }
}

/// Fits the interpolant. Interior slopes are the weighted harmonic mean of
/// the adjacent secants (zero at local extrema); end slopes use the
/// one-sided three-point formula, limited to preserve shape.
pub fn pchip_fit(x: &[f64], y: &[f64]) -> Result<Pchip> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Interpolation(format!(
            "need at least 2 knots, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Interpolation("non-finite knot".into()));
    }
    if let Some(k) = x.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::Interpolation(format!(
            "knots must be strictly increasing (x[{}] = {} ≥ x[{}] = {})",
            k,
            x[k],
            k + 1,
            x[k + 1]
        )));
    }
    let m = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..m - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    let mut slopes = vec![0.0; m];
    if m == 2 {
        slopes[0] = delta[0];
        slopes[1] = delta[0];
    } else {
        for k in 1..m - 1 {
            let (d0, d1) = (delta[k - 1], delta[k]);
            if d0 * d1 > 0.0 {
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                slopes[k] = (w1 + w2) / (w1 / d0 + w2 / d1);
            }
        }
        slopes[0] = end_slope(h[0], h[1], delta[0], delta[1]);
        slopes[m - 1] = end_slope(h[m - 2], h[m - 3], delta[m - 2], delta[m - 3]);
    }
    Ok(Pchip {
        x: x.to_vec(),
        y: y.to_vec(),
        slopes,
    })
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if s.signum() != d0.signum() || d0 == 0.0 {
        0.0
    } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        s
    }
}

/// Evaluates at `q`; errors outside the knot range.
pub fn pchip_eval(p: &Pchip, q: f64) -> Result<f64> {
    let (lo, hi) = p.range();
    if !(q >= lo && q <= hi) {
        return Err(Error::Interpolation(format!(
            "query {q} outside knot range [{lo}, {hi}]"
        )));
    }
    let k = match p.x.binary_search_by(|v| v.total_cmp(&q)) {
        Ok(k) => return Ok(p.y[k]),
        Err(k) => k - 1,
    };
    let h = p.x[k + 1] - p.x[k];
    let s = (q - p.x[k]) / h;
    let (s2, s3) = (s * s, s * s * s);
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    Ok(h00 * p.y[k] + h10 * h * p.slopes[k] + h01 * p.y[k + 1] + h11 * h * p.slopes[k + 1])
}
