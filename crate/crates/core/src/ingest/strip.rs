//! Log-contract strip: `I_t^T = 2∫₀^S P(K)/K² dK + 2∫_S^∞ C(K)/K² dK`.

use serde::{Deserialize, Serialize};

use super::chain::{ChainGroup, OptionKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StripResult {
    pub value: f64,
    /// Strike range actually integrated; the tails beyond it are truncated.
    pub lowest_strike: f64,
    pub highest_strike: f64,
    pub strikes_used: usize,
}

/// Out-of-the-money integrand `(K, Q(K))`: puts for `K ≤ S`, calls above.
pub fn otm_quotes(group: &ChainGroup, spot: f64) -> Vec<(f64, f64)> {
    group
        .quotes
        .iter()
        .filter(|q| match q.kind {
            OptionKind::Put => q.strike <= spot,
            OptionKind::Call => q.strike > spot,
        })
        .map(|q| (q.strike, q.mid))
        .collect()
}

/// Trapezoid rule for `2 Q(K)/K²` over the available OTM strikes; no extrapolation.
pub fn strip_integrate(group: &ChainGroup, spot: f64) -> Result<StripResult> {
    if !(spot > 0.0 && spot.is_finite()) {
        return Err(Error::Ingest(format!("underlying must be positive, got {spot}")));
    }
    let pts = otm_quotes(group, spot);
    let at = format!("(t={}, T={})", group.t, group.expiry);
    if pts.len() < 2 {
        return Err(Error::Ingest(format!(
            "{at}: need at least 2 out-of-the-money strikes, found {}",
            pts.len()
        )));
    }
    if !pts.iter().any(|p| p.0 <= spot) || !pts.iter().any(|p| p.0 > spot) {
        return Err(Error::Ingest(format!(
            "{at}: out-of-the-money quotes lie on one side of the underlying {spot}"
        )));
    }
    let f = |(k, q): (f64, f64)| 2.0 * q / (k * k);
    let value = pts
        .windows(2)
        .map(|w| 0.5 * (f(w[0]) + f(w[1])) * (w[1].0 - w[0].0))
        .sum();
    Ok(StripResult {
        value,
        lowest_strike: pts[0].0,
        highest_strike: pts[pts.len() - 1].0,
        strikes_used: pts.len(),
    })
}
