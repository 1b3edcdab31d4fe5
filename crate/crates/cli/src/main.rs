mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fwdvar::contrast::minimize_contrast_with_fixed;
use fwdvar::inference::infer;
use fwdvar::ingest::{build_surface, read_chain};
use fwdvar::io::{read_surface_with_metadata, write_surface};
use fwdvar::kernels::Kernel;
use fwdvar::montecarlo::{export_study, render_table, run_study, summarize, Profile};
use fwdvar::simulate::simulate_surface;
use fwdvar::surface::{has_errors, validate_surface, CumulativeVarianceSurface};
use fwdvar::{Error, ErrorClass};
use serde_json::{json, Value};

use config::{ConfigError, Overrides, RunConfig};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "fwdvar", version, about = "Forward variance kernel estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (overrides the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel sections
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Directory for output files
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    /// Study size preset; sets n, d and replications
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,

    /// Input file (overrides `input` in the config file)
    #[arg(long, global = true)]
    input: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Simulate a cumulative forward variance surface
    Simulate,
    /// Minimize the contrast on a surface
    Estimate,
    /// Estimate, then compute the covariance and confidence intervals
    Infer,
    /// Run a Monte Carlo study
    Mc,
    /// Build a surface from an option chain
    Ingest,
    /// Check a surface file
    Validate,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ProfileArg {
    Desk,
    Paper,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        }
    }
}

#[derive(Debug)]
enum CliError {
    Config(ConfigError),
    Core(Error),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    fn class(&self) -> ErrorClass {
        match self {
            CliError::Config(_) => ErrorClass::Config,
            CliError::Core(e) => e.class(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        }
    }

    /// One line: `error class=<c> exit=<code> [key=<k>] message=<json string>`.
    fn line(&self) -> String {
        let class = match self.class() {
            ErrorClass::Config => "config",
            ErrorClass::Data => "data",
            ErrorClass::Numerical => "numerical",
        };
        let (key, message) = match self {
            CliError::Config(e) => (Some(e.key.clone()), e.to_string()),
            CliError::Core(Error::InvalidConfig { key, .. }) => (Some(key.clone()), self.message()),
            CliError::Core(_) => (None, self.message()),
        };
        let key = key.map(|k| format!(" key={k}")).unwrap_or_default();
        format!(
            "error class={class} exit={}{key} message={}",
            self.exit_code(),
            Value::String(message)
        )
    }

    fn message(&self) -> String {
        match self {
            CliError::Config(e) => e.to_string(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

struct Context {
    cfg: RunConfig,
    out_dir: PathBuf,
    workers: Option<usize>,
}

impl Context {
    fn verbose(&self) -> bool {
        self.cfg.verbose.unwrap_or(false)
    }

    fn log(&self, msg: &str) {
        if self.verbose() {
            eprintln!("{msg}");
        }
    }

    /// Header entries embedded in every output file.
    fn metadata(&self) -> Vec<(String, String)> {
        vec![
            ("tool_version".into(), VERSION.into()),
            ("config_digest".into(), self.cfg.digest()),
            ("seed".into(), self.cfg.seed().to_string()),
            ("config".into(), self.cfg.to_json()),
        ]
    }

    fn provenance(&self) -> Value {
        json!({
            "tool_version": VERSION,
            "config_digest": self.cfg.digest(),
            "seed": self.cfg.seed(),
            "config": serde_json::from_str::<Value>(&self.cfg.to_json()).expect("valid json"),
        })
    }

    fn out(&self, name: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out_dir)?;
        Ok(self.out_dir.join(name))
    }

    fn write_json(&self, name: &str, body: Value) -> Result<PathBuf, CliError> {
        let mut doc = self.provenance();
        if let (Value::Object(doc), Value::Object(body)) = (&mut doc, body) {
            doc.extend(body);
        }
        let path = self.out(name)?;
        let mut text = serde_json::to_string_pretty(&doc).expect("serializable");
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let overrides = Overrides {
        seed: cli.seed,
        input: cli.input.clone(),
        profile: cli.profile.map(Profile::from),
    };
    let cfg = config::load(cli.config.as_deref(), &overrides)?;
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(ConfigError::new("workers", "must be ≥ 1").into());
        }
        // ignore the error if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    let ctx = Context {
        cfg,
        out_dir: cli.out_dir.clone(),
        workers: cli.workers,
    };
    match cli.command {
        Command::Simulate => simulate(&ctx),
        Command::Estimate => estimate(&ctx, false),
        Command::Infer => estimate(&ctx, true),
        Command::Mc => monte_carlo(&ctx),
        Command::Ingest => ingest(&ctx),
        Command::Validate => validate(&ctx),
    }
}

fn simulate(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let sim = ctx.cfg.sim_config()?;
    ctx.log(&format!(
        "simulating n={} d={} kernel={}",
        sim.time_grid.n(),
        sim.maturity_grid.d(),
        sim.kernel.family_name()
    ));
    let s = simulate_surface(&sim)?;
    let path = ctx.out("surface.csv")?;
    write_surface(&s, &path, &ctx.metadata())?;
    Ok(vec![path])
}

/// Reads and checks a surface; violations are printed before any error.
fn load_surface(ctx: &Context) -> Result<CumulativeVarianceSurface, CliError> {
    let input = ctx.cfg.input()?;
    let (s, _) = read_surface_with_metadata(&input)?;
    let violations = validate_surface(&s, ctx.cfg.strict.unwrap_or(false));
    for v in &violations {
        eprintln!("{v}");
    }
    if has_errors(&violations) {
        let count = violations.len();
        return Err(Error::InvalidSurface(format!(
            "{}: {count} violation(s), first: {}",
            input.display(),
            violations[0]
        ))
        .into());
    }
    Ok(s)
}

fn estimate(ctx: &Context, with_inference: bool) -> Result<Vec<PathBuf>, CliError> {
    let s = load_surface(ctx)?;
    let kernel = ctx.cfg.kernel_spec()?;
    let bounds = ctx.cfg.bounds(&kernel)?;
    let fixed = ctx.cfg.fixed_components(&kernel)?;
    let contrast = ctx.cfg.contrast()?;
    ctx.log(&format!("estimating on n={} d={}", s.n(), s.d()));
    let est = minimize_contrast_with_fixed(&s, &kernel, &bounds, &contrast, &fixed)?;
    let names = kernel.param_names();
    let mut body = json!({
        "input": ctx.cfg.input()?.display().to_string(),
        "n": s.n(),
        "d": s.d(),
        "kernel": kernel.family_name(),
        "epsilon": contrast.epsilon,
        "parameters": names,
        "theta": est.theta.as_slice(),
        "contrast_value": est.contrast_value,
        "converged": est.converged,
        "at_boundary": est.at_boundary,
        "evaluations": est.evaluations,
    });
    if !with_inference {
        return Ok(vec![ctx.write_json("estimate.json", body)?]);
    }
    let free: Vec<usize> = (0..kernel.dim())
        .filter(|a| !fixed.iter().any(|(f, _)| f == a))
        .collect();
    let theta0 = ctx.cfg.optional_theta0(&kernel)?;
    let inf = infer(
        &s,
        &kernel,
        est.theta.as_slice(),
        contrast.epsilon,
        &free,
        theta0.as_ref().map(|t| t.as_slice()),
        ctx.cfg.level(),
    )?;
    let extra = json!({
        "components": free.iter().map(|&a| names[a].clone()).collect::<Vec<_>>(),
        "level": inf.level,
        "b": inf.covariance.b,
        "d_matrix": inf.covariance.d,
        "gamma": inf.covariance.gamma,
        "condition_number_b": inf.covariance.condition_number_b,
        "ci_lower": inf.ci_lower,
        "ci_upper": inf.ci_upper,
        "z_marginal": inf.z_marginal,
        "z_full": inf.z_full,
    });
    if let (Value::Object(b), Value::Object(e)) = (&mut body, extra) {
        b.extend(e);
    }
    Ok(vec![ctx.write_json("inference.json", body)?])
}

fn monte_carlo(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let mc = ctx.cfg.mc_config()?;
    ctx.log(&format!(
        "monte carlo: R={} n={} d={}",
        mc.replications,
        mc.sim.time_grid.n(),
        mc.sim.maturity_grid.d()
    ));
    let records = run_study(&mc, ctx.workers)?;
    let names = mc.sim.kernel.param_names();
    let summary = summarize(&records, mc.theta0.as_slice(), &names)?;
    fs::create_dir_all(&ctx.out_dir)?;
    let paths = export_study(&summary, &records, &names, &ctx.out_dir, &ctx.metadata())?;
    print!("{}", render_table(&summary));
    Ok(paths)
}

fn ingest(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let input = ctx.cfg.input()?;
    let chain = read_chain(&input)?;
    let tg = ctx.cfg.time_grid()?;
    let mg = ctx.cfg.maturity_grid()?;
    ctx.log(&format!("ingesting {} quotes", chain.len()));
    let (s, report) = build_surface(&chain, tg, mg)?;
    let surface_path = ctx.out("surface.csv")?;
    write_surface(&s, &surface_path, &ctx.metadata())?;
    let report_path = ctx.out("coverage.txt")?;
    let mut text = String::new();
    for (k, v) in ctx.metadata() {
        text.push_str(&format!("# {k}={v}\n"));
    }
    text.push_str(&report.render());
    fs::write(&report_path, text)?;
    Ok(vec![surface_path, report_path])
}

fn validate(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let input = ctx.cfg.input()?;
    let s = load_surface(ctx)?;
    println!("ok {} (n={}, d={})", display(&input), s.n(), s.d());
    Ok(Vec::new())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
