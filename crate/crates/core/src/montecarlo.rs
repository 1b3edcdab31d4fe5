//! Seeded replication studies of the estimator and its studentized statistics.
//!
//! Replication `r` draws its Brownian path from `stream_seed(master_seed, r)`,
//! so records do not depend on scheduling or worker count. A replication
//! simulates one surface and estimates it once per `ε` of the sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::contrast::{minimize_contrast_with_fixed, ContrastConfig};
use crate::error::{Error, Result};
use crate::inference::{infer, DEFAULT_LEVEL};
use crate::kernels::{Kernel, ParamBox, ParamVector};
use crate::simulate::{simulate_surface, stream_seed, SimConfig};
use crate::surface::default_maturity_count;

pub const DEFAULT_EPSILON_SWEEP: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

/// Named study sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `n = 2000`, `R = 300`.
    Desk,
    /// `n = 10000`, `R = 1000`.
    Paper,
}

impl Profile {
    pub fn n(self) -> usize {
        match self {
            Profile::Desk => 2_000,
            Profile::Paper => 10_000,
        }
    }

    pub fn d(self) -> usize {
        default_maturity_count(self.n())
    }

    pub fn replications(self) -> usize {
        match self {
            Profile::Desk => 300,
            Profile::Paper => 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MCConfig {
    /// Simulation template; its `seed` is replaced per replication and its
    /// `theta0` by [`MCConfig::theta0`].
    pub sim: SimConfig,
    pub contrast: ContrastConfig,
    pub bounds: ParamBox,
    pub replications: usize,
    pub theta0: ParamVector,
    /// Components held at the given value during estimation.
    pub fixed_components: BTreeMap<usize, f64>,
    pub master_seed: u64,
    /// Values of `ε` to estimate with; empty means `contrast.epsilon` only.
    pub epsilon_sweep: Vec<f64>,
    pub level: f64,
}

impl MCConfig {
    pub fn new(sim: SimConfig, contrast: ContrastConfig, bounds: ParamBox, replications: usize) -> Self {
        let theta0 = sim.theta0.clone();
        let master_seed = sim.seed;
        Self {
            sim,
            contrast,
            bounds,
            replications,
            theta0,
            fixed_components: BTreeMap::new(),
            master_seed,
            epsilon_sweep: Vec::new(),
            level: DEFAULT_LEVEL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::config("replications", "must be ≥ 1"));
        }
        self.contrast.validate()?;
        for &e in &self.epsilon_sweep {
            crate::contrast::check_epsilon(e)?;
        }
        let q = self.sim.kernel.dim();
        if self.theta0.dim() != q || self.bounds.dim() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                got: if self.theta0.dim() != q {
                    self.theta0.dim()
                } else {
                    self.bounds.dim()
                },
            });
        }
        if !self.bounds.contains(&self.theta0)? {
            return Err(Error::config("theta0", "outside the parameter box"));
        }
        for (&a, &v) in &self.fixed_components {
            if a >= q {
                return Err(Error::config(
                    "fixed_components",
                    format!("index {a} outside 0..{q}"),
                ));
            }
            if !(v >= self.bounds.lower[a] && v <= self.bounds.upper[a]) {
                return Err(Error::config(
                    "fixed_components",
                    format!("value {v} for index {a} outside the parameter box"),
                ));
            }
        }
        if self.free_components().is_empty() {
            return Err(Error::config("fixed_components", "every component is fixed"));
        }
        crate::inference::normal_quantile(self.level)?;
        self.sim_for(0).validate()
    }

    pub fn free_components(&self) -> Vec<usize> {
        (0..self.theta0.dim())
            .filter(|a| !self.fixed_components.contains_key(a))
            .collect()
    }

    pub fn epsilons(&self) -> Vec<f64> {
        if self.epsilon_sweep.is_empty() {
            vec![self.contrast.epsilon]
        } else {
            self.epsilon_sweep.clone()
        }
    }

    /// Simulation config of replication `r`.
    pub fn sim_for(&self, r: usize) -> SimConfig {
        let mut sim = self.sim.clone();
        sim.theta0 = self.theta0.clone();
        sim.seed = stream_seed(self.master_seed, r as u64);
        sim
    }
}

/// Outcome of one `(replication, ε)` estimation. Statistics cover the free
/// components only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub components: Vec<usize>,
    pub theta_hat: Option<Vec<f64>>,
    pub converged: bool,
    pub at_boundary: Vec<bool>,
    pub condition_number: Option<f64>,
    pub z_marginal: Option<Vec<f64>>,
    pub z_full: Option<Vec<f64>>,
    pub ci_lower: Option<Vec<f64>>,
    pub ci_upper: Option<Vec<f64>>,
    /// `None` on success, otherwise why the record is excluded.
    pub failure: Option<String>,
}

impl ReplicationRecord {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }

    /// Whether the interval for free component `c` contains `θ₀`.
    pub fn hit(&self, c: usize, truth: f64) -> Option<bool> {
        let lo = self.ci_lower.as_ref()?.get(c)?;
        let hi = self.ci_upper.as_ref()?.get(c)?;
        Some(*lo <= truth && truth <= *hi)
    }
}

/// Runs replication `r` for every `ε`. Errors become failed records.
pub fn run_replication(cfg: &MCConfig, r: usize) -> Vec<ReplicationRecord> {
    let sim = cfg.sim_for(r);
    let free = cfg.free_components();
    let fixed: Vec<(usize, f64)> = cfg.fixed_components.iter().map(|(a, v)| (*a, *v)).collect();
    let blank = |epsilon: f64, failure: String| ReplicationRecord {
        replication: r,
        seed: sim.seed,
        epsilon,
        components: free.clone(),
        theta_hat: None,
        converged: false,
        at_boundary: Vec::new(),
        condition_number: None,
        z_marginal: None,
        z_full: None,
        ci_lower: None,
        ci_upper: None,
        failure: Some(failure),
    };
    let surface = match simulate_surface(&sim) {
        Ok(s) => s,
        Err(e) => {
            return cfg
                .epsilons()
                .into_iter()
                .map(|eps| blank(eps, format!("simulation: {e}")))
                .collect()
        }
    };
    cfg.epsilons()
        .into_iter()
        .map(|eps| {
            let mut contrast = cfg.contrast;
            contrast.epsilon = eps;
            let est = match minimize_contrast_with_fixed(&surface, &sim.kernel, &cfg.bounds, &contrast, &fixed) {
                Ok(est) => est,
                Err(e) => return blank(eps, format!("estimation: {e}")),
            };
            let mut rec = blank(eps, String::new());
            rec.theta_hat = Some(est.theta.0.clone());
            rec.converged = est.converged;
            rec.at_boundary = est.at_boundary.clone();
            match infer(&surface, &sim.kernel, &est.theta, eps, &free, Some(&cfg.theta0), cfg.level) {
                Ok(inf) => {
                    rec.condition_number = Some(inf.covariance.condition_number_b);
                    rec.z_marginal = inf.z_marginal;
                    rec.z_full = inf.z_full;
                    rec.ci_lower = Some(inf.ci_lower);
                    rec.ci_upper = Some(inf.ci_upper);
                    rec.failure = if est.converged {
                        None
                    } else {
                        Some("optimizer did not converge".into())
                    };
                }
                Err(e) => rec.failure = Some(format!("inference: {e}")),
            }
            rec
        })
        .collect()
}

/// All records, ordered by replication then by `ε` in sweep order.
pub fn run_study(cfg: &MCConfig, workers: Option<usize>) -> Result<Vec<ReplicationRecord>> {
    cfg.validate()?;
    let run = || -> Vec<ReplicationRecord> {
        (0..cfg.replications)
            .into_par_iter()
            .flat_map_iter(|r| run_replication(cfg, r))
            .collect()
    };
    match workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::config("workers", e.to_string()))?;
            Ok(pool.install(run))
        }
        None => Ok(run()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub epsilon: f64,
    pub parameter: usize,
    pub name: String,
    pub true_value: f64,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    pub z_mean: f64,
    /// Sample variance (denominator `m − 1`); `NaN` with fewer than two successes.
    pub z_var: f64,
    pub coverage: f64,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCSummary {
    pub rows: Vec<ParameterSummary>,
}

impl MCSummary {
    pub fn row(&self, epsilon: f64, parameter: usize) -> Option<&ParameterSummary> {
        self.rows
            .iter()
            .find(|r| r.epsilon == epsilon && r.parameter == parameter)
    }
}

/// One row per `(ε, free parameter)`, in order of first appearance of `ε`.
pub fn summarize(records: &[ReplicationRecord], theta0: &[f64], names: &[String]) -> Result<MCSummary> {
    let mut epsilons: Vec<f64> = Vec::new();
    for r in records {
        if !epsilons.contains(&r.epsilon) {
            epsilons.push(r.epsilon);
        }
    }
    let mut rows = Vec::new();
    for eps in epsilons {
        let group: Vec<&ReplicationRecord> = records.iter().filter(|r| r.epsilon == eps).collect();
        let ok: Vec<&&ReplicationRecord> = group.iter().filter(|r| r.succeeded()).collect();
        if ok.is_empty() {
            return Err(Error::NoSuccesses {
                failures: group.len(),
            });
        }
        let components = &ok[0].components;
        for (c, &a) in components.iter().enumerate() {
            let truth = theta0[a];
            let m = ok.len() as f64;
            let est: Vec<f64> = ok.iter().map(|r| r.theta_hat.as_ref().unwrap()[a]).collect();
            let z: Vec<f64> = ok.iter().map(|r| r.z_marginal.as_ref().unwrap()[c]).collect();
            let hits = ok.iter().filter(|r| r.hit(c, truth) == Some(true)).count();
            let mean = est.iter().sum::<f64>() / m;
            let rmse = (est.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / m).sqrt();
            let (z_mean, z_var) = moments(&z);
            rows.push(ParameterSummary {
                epsilon: eps,
                parameter: a,
                name: names.get(a).cloned().unwrap_or_else(|| format!("theta{a}")),
                true_value: truth,
                mean,
                bias: mean - truth,
                rmse,
                z_mean,
                z_var,
                coverage: hits as f64 / m,
                successes: ok.len(),
                failures: group.len() - ok.len(),
            });
        }
    }
    Ok(MCSummary { rows })
}

/// Mean and unbiased sample variance.
pub fn moments(x: &[f64]) -> (f64, f64) {
    let m = x.len() as f64;
    let mean = x.iter().sum::<f64>() / m;
    let var = if x.len() < 2 {
        f64::NAN
    } else {
        x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
    };
    (mean, var)
}

/// Sorted values paired with `Φ⁻¹((r − 0.5)/R)`, `r = 1..R`.
pub fn qq_pairs(z: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = z.to_vec();
    sorted.sort_by(f64::total_cmp);
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let big_r = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(r, v)| (v, std.inverse_cdf((r as f64 + 0.5) / big_r)))
        .collect()
}

/// Pearson correlation of the QQ pairs; 1 for exactly normal order statistics.
pub fn qq_correlation(z: &[f64]) -> f64 {
    let pairs = qq_pairs(z);
    let m = pairs.len() as f64;
    let (mx, my) = (
        pairs.iter().map(|p| p.0).sum::<f64>() / m,
        pairs.iter().map(|p| p.1).sum::<f64>() / m,
    );
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Successful marginal `Ẑ` for free component `c` at `ε`.
pub fn z_values(records: &[ReplicationRecord], epsilon: f64, c: usize) -> Vec<f64> {
    records
        .iter()
        .filter(|r| r.epsilon == epsilon && r.succeeded())
        .map(|r| r.z_marginal.as_ref().unwrap()[c])
        .collect()
}

pub const SUMMARY_FILE: &str = "summary.csv";
pub const Z_RAW_FILE: &str = "z_raw.csv";
pub const QQ_FILE: &str = "qq.csv";
pub const TABLE_FILE: &str = "summary.txt";

fn write_header(w: &mut impl Write, metadata: &[(String, String)]) -> Result<()> {
    for (k, v) in metadata {
        writeln!(w, "# {k}={v}")?;
    }
    Ok(())
}

fn csv_writer(path: &Path, metadata: &[(String, String)]) -> Result<csv::Writer<File>> {
    let mut f = File::create(path)?;
    write_header(&mut f, metadata)?;
    Ok(csv::Writer::from_writer(f))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the summary, raw `Ẑ`, QQ and text-table files into `dir`; returns their paths.
pub fn export_study(
    summary: &MCSummary,
    records: &[ReplicationRecord],
    names: &[String],
    dir: &Path,
    metadata: &[(String, String)],
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let name = |a: usize| names.get(a).cloned().unwrap_or_else(|| format!("theta{a}"));

    let summary_path = dir.join(SUMMARY_FILE);
    let mut w = csv_writer(&summary_path, metadata)?;
    w.write_record([
        "epsilon", "parameter", "true_value", "mean", "bias", "rmse", "z_mean", "z_var", "coverage",
        "successes", "failures",
    ])?;
    for r in &summary.rows {
        w.write_record([
            r.epsilon.to_string(),
            r.name.clone(),
            r.true_value.to_string(),
            r.mean.to_string(),
            r.bias.to_string(),
            r.rmse.to_string(),
            r.z_mean.to_string(),
            r.z_var.to_string(),
            r.coverage.to_string(),
            r.successes.to_string(),
            r.failures.to_string(),
        ])?;
    }
    w.flush()?;

    let raw_path = dir.join(Z_RAW_FILE);
    let mut w = csv_writer(&raw_path, metadata)?;
    w.write_record([
        "replication", "seed", "epsilon", "parameter", "true_value", "theta_hat", "z_marginal", "z_full",
        "ci_lower", "ci_upper", "hit", "converged", "at_boundary", "condition_number", "status",
    ])?;
    for rec in records {
        for (c, &a) in rec.components.iter().enumerate() {
            let pick = |v: &Option<Vec<f64>>| v.as_ref().map(|v| v[c]);
            let truth = summary
                .rows
                .iter()
                .find(|r| r.parameter == a)
                .map(|r| r.true_value);
            w.write_record([
                rec.replication.to_string(),
                rec.seed.to_string(),
                rec.epsilon.to_string(),
                name(a),
                opt(truth),
                opt(rec.theta_hat.as_ref().map(|t| t[a])),
                opt(pick(&rec.z_marginal)),
                opt(pick(&rec.z_full)),
                opt(pick(&rec.ci_lower)),
                opt(pick(&rec.ci_upper)),
                truth
                    .and_then(|t| rec.hit(c, t))
                    .map(|h| u8::from(h).to_string())
                    .unwrap_or_default(),
                u8::from(rec.converged).to_string(),
                u8::from(rec.at_boundary.get(a).copied().unwrap_or(false)).to_string(),
                opt(rec.condition_number),
                rec.failure.clone().unwrap_or_else(|| "ok".into()),
            ])?;
        }
    }
    w.flush()?;

    let qq_path = dir.join(QQ_FILE);
    let mut w = csv_writer(&qq_path, metadata)?;
    w.write_record(["z_sorted", "normal_quantile", "parameter", "epsilon"])?;
    for row in &summary.rows {
        let c = records
            .iter()
            .find_map(|r| r.components.iter().position(|&a| a == row.parameter))
            .unwrap_or(0);
        for (z, q) in qq_pairs(&z_values(records, row.epsilon, c)) {
            w.write_record([z.to_string(), q.to_string(), row.name.clone(), row.epsilon.to_string()])?;
        }
    }
    w.flush()?;

    let table_path = dir.join(TABLE_FILE);
    let mut f = File::create(&table_path)?;
    write_header(&mut f, metadata)?;
    f.write_all(render_table(summary).as_bytes())?;

    Ok(vec![summary_path, raw_path, qq_path, table_path])
}

/// Fixed-width table with one block per parameter and one line per `ε`.
pub fn render_table(summary: &MCSummary) -> String {
    let mut out = String::new();
    let mut params: Vec<(usize, String)> = Vec::new();
    for r in &summary.rows {
        if !params.iter().any(|(a, _)| *a == r.parameter) {
            params.push((r.parameter, r.name.clone()));
        }
    }
    for (a, name) in params {
        let _ = writeln!(
            out,
            "{:>10} {:>11} {:>11} {:>9} {:>9} {:>9} {:>7}  ({name})",
            "epsilon",
            format!("{name}_Bias"),
            format!("{name}_RMSE"),
            "E[Z]",
            "Var(Z)",
            "P(CI∋θ)",
            "fail"
        );
        for r in summary.rows.iter().filter(|r| r.parameter == a) {
            let _ = writeln!(
                out,
                "{:>10.0e} {:>11.4} {:>11.4} {:>9.3} {:>9.3} {:>9.3} {:>7}",
                r.epsilon, r.bias, r.rmse, r.z_mean, r.z_var, r.coverage, r.failures
            );
        }
        out.push('\n');
    }
    out
}

/// One row of `z_raw.csv`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RawZRow {
    pub replication: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub parameter: String,
    pub true_value: Option<f64>,
    pub theta_hat: Option<f64>,
    pub z_marginal: Option<f64>,
    pub z_full: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub hit: Option<u8>,
    pub converged: u8,
    pub at_boundary: u8,
    pub condition_number: Option<f64>,
    pub status: String,
}

pub fn read_z_raw(path: &Path) -> Result<Vec<RawZRow>> {
    let reader = BufReader::new(File::open(path)?);
    let body: String = reader
        .lines()
        .filter(|l| l.as_ref().map(|l| !l.starts_with('#')).unwrap_or(true))
        .map(|l| l.map(|l| l + "\n"))
        .collect::<std::io::Result<_>>()?;
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    rdr.deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}
