//! Flat JSON run configuration with a strict schema.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use fwdvar::contrast::{ContrastConfig, OptimizerConfig, DEFAULT_EPSILON};
use fwdvar::inference::DEFAULT_LEVEL;
use fwdvar::kernels::{Kernel, KernelSpec, ParamBox, ParamVector};
use fwdvar::montecarlo::{MCConfig, Profile};
use fwdvar::simulate::{ForwardVarianceCurve, SimConfig};
use fwdvar::surface::{default_maturity_count, MaturityGrid, TimeGrid};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_SHIFT: f64 = 0.01;
pub const DEFAULT_LOWER: [f64; 2] = [0.01, -3.0];
pub const DEFAULT_UPPER: [f64; 2] = [10.0, 3.0];

/// A configuration problem attributed to one key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration `{}`: {}", self.key, self.message)
    }
}

impl From<fwdvar::Error> for ConfigError {
    fn from(e: fwdvar::Error) -> Self {
        match e {
            fwdvar::Error::InvalidConfig { key, message } => Self { key, message },
            other => Self::new("config", other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelName {
    Exponential,
    ShiftedPowerLaw,
    NegativePowerLaw,
}

/// Every key the tool understands; each subcommand reads the ones it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub box_lower: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub box_upper: Option<Vec<f64>>,
    /// Flat initial forward variance level.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v0_knots: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v0_values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    /// Explicit maturity grid; overrides `d`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maturities: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refinement: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multistart_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simplex_tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_refine: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_descents: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    /// Components held fixed during estimation, keyed by index.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed: Option<BTreeMap<usize, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_sweep: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    /// Surface CSV (estimate, infer, validate) or chain CSV (ingest).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strict: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verbose: Option<bool>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub input: Option<PathBuf>,
    pub profile: Option<Profile>,
}

pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.to_string();
        // unknown keys are reported at the enclosing path; pull the name out of the message
        let key = match msg.split('`').nth(1) {
            Some(k) if msg.starts_with("unknown field") => k.to_string(),
            _ if path == "." => "config".to_string(),
            _ => path,
        };
        ConfigError::new(key, msg)
    })
}

pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", p.display())))?;
            parse_str(&text)?
        }
        None => RunConfig::default(),
    };
    cfg.apply(overrides);
    cfg.check_ranges()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(p) = &o.input {
            self.input = Some(p.clone());
        }
        if let Some(p) = o.profile {
            self.n = Some(p.n());
            self.d = Some(p.d());
            self.maturities = None;
            self.replications = Some(p.replications());
        }
    }

    /// Range checks that do not depend on the subcommand.
    pub fn check_ranges(&self) -> Result<(), ConfigError> {
        if let Some(e) = self.epsilon {
            if !(e.is_finite() && e > 0.0) {
                return Err(ConfigError::new(
                    "epsilon",
                    format!("the contrast is only defined for ε > 0, got {e}"),
                ));
            }
        }
        if let Some(sweep) = &self.epsilon_sweep {
            if let Some(e) = sweep.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
                return Err(ConfigError::new(
                    "epsilon_sweep",
                    format!("the contrast is only defined for ε > 0, got {e}"),
                ));
            }
        }
        if self.n == Some(0) {
            return Err(ConfigError::new("n", "must be ≥ 1"));
        }
        if self.d == Some(0) {
            return Err(ConfigError::new("d", "must be ≥ 1"));
        }
        if self.refinement == Some(0) {
            return Err(ConfigError::new("refinement", "must be ≥ 1"));
        }
        if self.replications == Some(0) {
            return Err(ConfigError::new("replications", "must be ≥ 1"));
        }
        if let Some(l) = self.level {
            if !(0.0..1.0).contains(&l) {
                return Err(ConfigError::new("level", format!("must lie in [0, 1), got {l}")));
            }
        }
        if let Some(c) = self.shift {
            if !(c.is_finite() && c > 0.0) {
                return Err(ConfigError::new("shift", format!("must be > 0, got {c}")));
            }
        }
        if let Some(v) = self.v0 {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::new("v0", format!("must be > 0, got {v}")));
            }
        }
        if self.v0.is_some() && (self.v0_knots.is_some() || self.v0_values.is_some()) {
            return Err(ConfigError::new("v0", "give either v0 or v0_knots/v0_values, not both"));
        }
        if self.v0_knots.is_some() != self.v0_values.is_some() {
            return Err(ConfigError::new("v0_knots", "v0_knots and v0_values go together"));
        }
        if let Some(p) = &self.input {
            if !p.exists() {
                return Err(ConfigError::new("input", format!("{} does not exist", p.display())));
            }
        }
        let o = self.optimizer();
        ContrastConfig {
            epsilon: self.epsilon.unwrap_or(DEFAULT_EPSILON),
            optimizer: o,
        }
        .validate()?;
        Ok(())
    }

    fn require<T: Clone>(v: &Option<T>, key: &str) -> Result<T, ConfigError> {
        v.clone()
            .ok_or_else(|| ConfigError::new(key, "required by this subcommand"))
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec, ConfigError> {
        let shift = self.shift.unwrap_or(DEFAULT_SHIFT);
        let k = match Self::require(&self.kernel, "kernel")? {
            KernelName::Exponential => KernelSpec::exponential(),
            KernelName::ShiftedPowerLaw => KernelSpec::shifted_power_law(shift)?,
            KernelName::NegativePowerLaw => KernelSpec::negative_power_law(shift)?,
        };
        Ok(k)
    }

    pub fn theta0(&self, kernel: &dyn Kernel) -> Result<ParamVector, ConfigError> {
        let t = Self::require(&self.theta0, "theta0")?;
        self.theta0_checked(t, kernel)
    }

    fn theta0_checked(&self, t: Vec<f64>, kernel: &dyn Kernel) -> Result<ParamVector, ConfigError> {
        if t.len() != kernel.dim() {
            return Err(ConfigError::new(
                "theta0",
                format!("expected {} components, got {}", kernel.dim(), t.len()),
            ));
        }
        ParamVector::new(t).map_err(|e| ConfigError::new("theta0", e.to_string()))
    }

    pub fn optional_theta0(&self, kernel: &dyn Kernel) -> Result<Option<ParamVector>, ConfigError> {
        self.theta0
            .clone()
            .map(|t| self.theta0_checked(t, kernel))
            .transpose()
    }

    pub fn bounds(&self, kernel: &dyn Kernel) -> Result<ParamBox, ConfigError> {
        let q = kernel.dim();
        let lower = self.box_lower.clone().unwrap_or_else(|| DEFAULT_LOWER[..q.min(2)].to_vec());
        let upper = self.box_upper.clone().unwrap_or_else(|| DEFAULT_UPPER[..q.min(2)].to_vec());
        for (key, v) in [("box_lower", &lower), ("box_upper", &upper)] {
            if v.len() != q {
                return Err(ConfigError::new(
                    key,
                    format!("expected {q} components, got {}", v.len()),
                ));
            }
        }
        ParamBox::new(lower, upper).map_err(|e| ConfigError::new("box_lower", e.to_string()))
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        let def = OptimizerConfig::default();
        OptimizerConfig {
            multistart_count: self.multistart_count.unwrap_or(def.multistart_count),
            simplex_tolerance: self.simplex_tolerance.unwrap_or(def.simplex_tolerance),
            max_iterations: self.max_iterations.unwrap_or(def.max_iterations),
            grid_refine: self.grid_refine.unwrap_or(def.grid_refine),
            max_descents: self.max_descents.unwrap_or(def.max_descents),
        }
    }

    pub fn contrast(&self) -> Result<ContrastConfig, ConfigError> {
        let c = ContrastConfig {
            epsilon: self.epsilon.unwrap_or(DEFAULT_EPSILON),
            optimizer: self.optimizer(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn time_grid(&self) -> Result<TimeGrid, ConfigError> {
        let n = Self::require(&self.n, "n")?;
        TimeGrid::new(n).map_err(|e| ConfigError::new("n", e.to_string()))
    }

    pub fn maturity_grid(&self) -> Result<MaturityGrid, ConfigError> {
        if let Some(m) = &self.maturities {
            return MaturityGrid::new(m.clone()).map_err(|e| ConfigError::new("maturities", e.to_string()));
        }
        let d = match self.d {
            Some(d) => d,
            None => default_maturity_count(Self::require(&self.n, "n")?),
        };
        MaturityGrid::uniform(d).map_err(|e| ConfigError::new("d", e.to_string()))
    }

    pub fn v0_curve(&self) -> Result<ForwardVarianceCurve, ConfigError> {
        let curve = match (&self.v0_knots, &self.v0_values) {
            (Some(k), Some(v)) => ForwardVarianceCurve::new(k.clone(), v.clone()),
            _ => ForwardVarianceCurve::constant(self.v0.unwrap_or(1.0)),
        };
        curve.map_err(ConfigError::from)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn level(&self) -> f64 {
        self.level.unwrap_or(DEFAULT_LEVEL)
    }

    pub fn input(&self) -> Result<PathBuf, ConfigError> {
        Self::require(&self.input, "input")
    }

    pub fn sim_config(&self) -> Result<SimConfig, ConfigError> {
        let kernel = self.kernel_spec()?;
        let cfg = SimConfig {
            theta0: self.theta0(&kernel)?,
            kernel,
            v0: self.v0_curve()?,
            time_grid: self.time_grid()?,
            maturity_grid: self.maturity_grid()?,
            u_mesh_refinement: self.refinement.unwrap_or(1),
            seed: self.seed(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fixed components as `(index, value)` pairs, checked against the kernel.
    pub fn fixed_components(&self, kernel: &dyn Kernel) -> Result<Vec<(usize, f64)>, ConfigError> {
        let fixed: Vec<(usize, f64)> = self
            .fixed
            .as_ref()
            .map(|m| m.iter().map(|(&k, &v)| (k, v)).collect())
            .unwrap_or_default();
        if let Some(&(a, _)) = fixed.iter().find(|(a, _)| *a >= kernel.dim()) {
            return Err(ConfigError::new(
                "fixed",
                format!("component {a} out of range for a {}-parameter kernel", kernel.dim()),
            ));
        }
        if fixed.len() >= kernel.dim() {
            return Err(ConfigError::new("fixed", "at least one component must stay free"));
        }
        Ok(fixed)
    }

    pub fn mc_config(&self) -> Result<MCConfig, ConfigError> {
        let sim = self.sim_config()?;
        let bounds = self.bounds(&sim.kernel)?;
        let fixed = self.fixed_components(&sim.kernel)?;
        let replications = Self::require(&self.replications, "replications")?;
        let mut cfg = MCConfig::new(sim, self.contrast()?, bounds, replications);
        cfg.fixed_components = fixed.into_iter().collect();
        cfg.epsilon_sweep = self.epsilon_sweep.clone().unwrap_or_default();
        cfg.level = self.level();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Compact JSON of the effective configuration.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of [`RunConfig::to_json`], hex encoded.
    pub fn digest(&self) -> String {
        Sha256::digest(self.to_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
