//! Assembly of a cumulative variance surface from an option chain.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::black_scholes::black_scholes_price;
use super::chain::{OptionChain, OptionKind, QuoteRecord};
use super::pchip::{pchip_eval, pchip_fit};
use super::strip::{strip_integrate, StripResult};
use crate::error::{Error, Result};
use crate::surface::{CumulativeVarianceSurface, MaturityGrid, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellSource {
    Observed,
    Imputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub i: usize,
    pub j: usize,
    pub source: CellSource,
    pub value: f64,
    pub clamped: bool,
    /// Strike range of the strip (observed cells only).
    pub lowest_strike: Option<f64>,
    pub highest_strike: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CoverageReport {
    pub observed: usize,
    pub imputed: usize,
    pub clamped: usize,
    /// Quote groups that snapped onto an expired cell (`t_i ≥ T_j`).
    pub discarded_expired: usize,
    pub max_time_snap: f64,
    pub max_maturity_snap: f64,
    pub cells: Vec<CellReport>,
}

impl CoverageReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "observed cells: {}", self.observed);
        let _ = writeln!(out, "imputed cells: {}", self.imputed);
        let _ = writeln!(out, "clamped cells: {}", self.clamped);
        let _ = writeln!(out, "discarded expired groups: {}", self.discarded_expired);
        let _ = writeln!(out, "max |t - t_i| snap: {}", self.max_time_snap);
        let _ = writeln!(out, "max |T - T_j| snap: {}", self.max_maturity_snap);
        out.push_str(
            "notes: standard OTM log-contract strip (trapezoid in K, puts for K <= S, calls above); \
             no strike extrapolation, tails beyond the quoted range are truncated; \
             observation times snapped to the nearest grid time, expiries to the nearest maturity; \
             missing maturities imputed by monotone cubic Hermite interpolation through (t_i, 0) \
             and the observed cells of the row, clamped below at 0.\n",
        );
        out.push_str("i,j,source,value,clamped,lowest_strike,highest_strike\n");
        for c in &self.cells {
            let src = match c.source {
                CellSource::Observed => "observed",
                CellSource::Imputed => "imputed",
            };
            let strike = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.i,
                c.j,
                src,
                c.value,
                u8::from(c.clamped),
                strike(c.lowest_strike),
                strike(c.highest_strike)
            );
        }
        out
    }
}

fn snap_maturity(m: &[f64], expiry: f64) -> Option<(usize, f64)> {
    let d = m.len() - 1;
    let j = m.partition_point(|v| *v < expiry).clamp(1, d);
    let cand = if j > 1 && (expiry - m[j - 1]).abs() < (m[j] - expiry).abs() {
        j - 1
    } else {
        j
    };
    let dist = (expiry - m[cand]).abs();
    let left = m[cand] - m[cand - 1];
    let right = if cand < d { m[cand + 1] - m[cand] } else { left };
    (dist <= 0.5 * left.min(right) + 1e-12).then_some((cand, dist))
}

/// Strips every `(t, T)` group, snaps it onto the grid and imputes missing
/// alive cells row by row.
pub fn build_surface(
    chain: &OptionChain,
    time_grid: TimeGrid,
    maturity_grid: MaturityGrid,
) -> Result<(CumulativeVarianceSurface, CoverageReport)> {
    let n = time_grid.n();
    let m = maturity_grid.maturities().to_vec();
    let d = maturity_grid.d();

    let strips: Vec<Result<StripResult>> = chain
        .groups
        .par_iter()
        .map(|g| strip_integrate(g, g.underlying))
        .collect();

    let mut report = CoverageReport::default();
    let mut observed: Vec<Option<StripResult>> = vec![None; (n + 1) * (d + 1)];
    for (g, strip) in chain.groups.iter().zip(strips) {
        let i = (g.t * n as f64).round();
        let t_snap = (g.t - i / n as f64).abs();
        if !(0.0..=n as f64).contains(&i) || t_snap > 0.5 / n as f64 + 1e-12 {
            return Err(Error::Ingest(format!(
                "observation time {} does not snap onto the time grid [0, 1]",
                g.t
            )));
        }
        let i = i as usize;
        let (j, t_mat) = snap_maturity(&m, g.expiry).ok_or_else(|| {
            Error::Ingest(format!("expiry {} does not snap onto the maturity grid", g.expiry))
        })?;
        if time_grid.time(i) >= m[j] {
            report.discarded_expired += 1;
            continue;
        }
        report.max_time_snap = report.max_time_snap.max(t_snap);
        report.max_maturity_snap = report.max_maturity_snap.max(t_mat);
        let cell = &mut observed[i * (d + 1) + j];
        if cell.is_some() {
            return Err(Error::Ingest(format!(
                "two quote groups snap onto cell (i={i}, j={j}); t={}, T={}",
                g.t, g.expiry
            )));
        }
        *cell = Some(strip?);
    }

    let mut values = vec![0.0; (n + 1) * (d + 1)];
    for i in 0..=n {
        let t = time_grid.time(i);
        let first = maturity_grid.first_alive(t);
        let row_obs: Vec<(usize, StripResult)> = (first..=d)
            .filter_map(|j| observed[i * (d + 1) + j].map(|s| (j, s)))
            .collect();
        let missing = (first..=d).count() - row_obs.len();
        let interp = if missing > 0 {
            if row_obs.len() < 2 {
                return Err(Error::Ingest(format!(
                    "row i={i} (t={t}) has {} observed maturities; at least 2 are needed to impute {missing} missing cells",
                    row_obs.len()
                )));
            }
            let mut xs = vec![t];
            let mut ys = vec![0.0];
            for (j, s) in &row_obs {
                xs.push(m[*j]);
                ys.push(s.value);
            }
            Some(pchip_fit(&xs, &ys)?)
        } else {
            None
        };
        let mut obs_iter = row_obs.iter().peekable();
        for j in first..=d {
            let (value, source, strikes) = match obs_iter.peek() {
                Some((oj, s)) if *oj == j => {
                    let s = *s;
                    obs_iter.next();
                    (s.value, CellSource::Observed, Some((s.lowest_strike, s.highest_strike)))
                }
                _ => {
                    let p = interp.as_ref().expect("interpolant for missing cells");
                    let v = pchip_eval(p, m[j]).map_err(|_| {
                        Error::Ingest(format!(
                            "cell (i={i}, j={j}) lies beyond the last observed maturity of its row; extrapolation is not performed"
                        ))
                    })?;
                    (v, CellSource::Imputed, None)
                }
            };
            let clamped = value < 0.0;
            let value = value.max(0.0);
            values[i * (d + 1) + j] = value;
            match source {
                CellSource::Observed => report.observed += 1,
                CellSource::Imputed => report.imputed += 1,
            }
            report.clamped += usize::from(clamped);
            report.cells.push(CellReport {
                i,
                j,
                source,
                value,
                clamped,
                lowest_strike: strikes.map(|s| s.0),
                highest_strike: strikes.map(|s| s.1),
            });
        }
    }
    let surface = CumulativeVarianceSurface::from_values(time_grid, maturity_grid, values)?;
    Ok((surface, report))
}

/// Synthetic chain of flat-volatility Black–Scholes prices on every alive
/// grid cell, with `strikes` log-uniform strikes over `[lo·S, hi·S]`.
pub fn flat_vol_chain(
    time_grid: &TimeGrid,
    maturity_grid: &MaturityGrid,
    spot: f64,
    vol: f64,
    strikes: usize,
    range: (f64, f64),
) -> Result<OptionChain> {
    if strikes < 2 {
        return Err(Error::config("strikes", "need at least 2"));
    }
    let (a, b) = (range.0.ln(), range.1.ln());
    let ks: Vec<f64> = (0..strikes)
        .map(|s| spot * (a + (b - a) * s as f64 / (strikes - 1) as f64).exp())
        .collect();
    let mut records = Vec::new();
    for i in 0..=time_grid.n() {
        let t = time_grid.time(i);
        for &expiry in &maturity_grid.maturities()[maturity_grid.first_alive(t)..] {
            let var = vol * vol * (expiry - t);
            for &k in &ks {
                let kind = if k <= spot { OptionKind::Put } else { OptionKind::Call };
                records.push(QuoteRecord {
                    t,
                    expiry,
                    strike: k,
                    kind,
                    mid: black_scholes_price(kind, spot, k, var),
                    underlying: spot,
                });
            }
        }
    }
    OptionChain::from_records(records)
}
