//! Closed-form Black–Scholes prices in forward units (zero rate, no dividend).

use statrs::distribution::{ContinuousCDF, Normal};

use super::chain::OptionKind;

/// Price of a European option with total variance `σ²τ = variance`.
pub fn black_scholes_price(kind: OptionKind, spot: f64, strike: f64, variance: f64) -> f64 {
    let intrinsic = match kind {
        OptionKind::Call => (spot - strike).max(0.0),
        OptionKind::Put => (strike - spot).max(0.0),
    };
    if variance <= 0.0 {
        return intrinsic;
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let sd = variance.sqrt();
    let d1 = ((spot / strike).ln() + 0.5 * variance) / sd;
    let d2 = d1 - sd;
    let price = match kind {
        OptionKind::Call => spot * std.cdf(d1) - strike * std.cdf(d2),
        OptionKind::Put => strike * std.cdf(-d2) - spot * std.cdf(-d1),
    };
    // cancellation can dip below the no-arbitrage floor far from the money
    price.max(intrinsic)
}
