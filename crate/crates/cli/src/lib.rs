//! Command-line front end for the laboratory.
//!
//! `qsd-lab <eigen|evolve|simulate|rates|report> [--config FILE] [flags]`.
//! Exit status: 0 on success, 1 on a validation error, 2 on a numerical
//! failure. Diagnostics are single lines on standard error.

// `!(a < b)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

mod commands;
pub mod config;

pub use config::{validate, ConfigMap, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error(transparent)]
    Core(#[from] qsd_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qsd-lab", version, about = "Quasi-stationary distributions of absorbed diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Principal eigenpair and QSD: eigen.json, eta.csv, alpha.csv.
    Eigen {
        #[command(flatten)]
        common: Common,
    },
    /// Conditioned flow distances to the QSD: curves.csv, alpha.csv.
    Evolve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flow: FlowArgs,
        #[command(flatten)]
        initial: InitialArgs,
    },
    /// Particle simulation: survival.csv, positions.csv, empirical.csv, simulation.json.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mc: McArgs,
        #[command(flatten)]
        initial: InitialArgs,
    },
    /// Gap, certified κ and κ̃: rates.csv.
    Rates {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cdfi: CdfiArgs,
    },
    /// Full decay report: report.json, curves.csv.
    Report {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flow: FlowArgs,
        #[command(flatten)]
        initial: InitialArgs,
        #[command(flatten)]
        cdfi: CdfiArgs,
    },
}

/// Pushes `(key, value)` for every flag that was given.
macro_rules! overrides {
    ($map:expr; $($flag:expr => $key:literal),* $(,)?) => {
        $( if let Some(v) = &$flag { $map.set($key, v.to_string()); } )*
    };
}

#[derive(Debug, Args)]
struct Common {
    /// Configuration file (`key = value`, dotted sections).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Closed-form example: brownian or ou.
    #[arg(long)]
    example: Option<String>,
    /// Half width N of the Brownian box (−N, N).
    #[arg(long = "N")]
    half_width: Option<f64>,
    /// Number of independent coordinates.
    #[arg(long)]
    dim: Option<usize>,
    /// Potential family: zero, quadratic, shifted-power, tabulated.
    #[arg(long)]
    potential: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// CSV table with columns x, v, dv, d2v.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    x_min: Option<f64>,
    #[arg(long)]
    x_max: Option<f64>,
    /// Interior grid nodes.
    #[arg(long)]
    n: Option<usize>,
    /// Any configuration key, as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn apply(&self, m: &mut ConfigMap) -> Result<(), CliError> {
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Validation(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            m.set(k.trim(), v.trim());
        }
        overrides!(m;
            self.output.as_ref().map(|p| p.display().to_string()) => "output",
            self.seed => "seed",
            self.example => "example",
            self.half_width => "example.half_width",
            self.dim => "example.dim",
            self.potential => "potential.family",
            self.lambda => "potential.lambda",
            self.delta => "potential.delta",
            self.table.as_ref().map(|p| p.display().to_string()) => "potential.table",
            self.x_min => "grid.x_min",
            self.x_max => "grid.x_max",
            self.n => "grid.n",
        );
        Ok(())
    }
}

#[derive(Debug, Args)]
struct FlowArgs {
    #[arg(long)]
    t_max: Option<f64>,
    /// Crank–Nicolson step.
    #[arg(long)]
    dt: Option<f64>,
    /// Number of sample times in [0, t_max].
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    fit_lo: Option<f64>,
    #[arg(long)]
    fit_hi: Option<f64>,
}

impl FlowArgs {
    fn apply(&self, m: &mut ConfigMap) {
        overrides!(m;
            self.t_max => "flow.t_max",
            self.dt => "flow.dt",
            self.samples => "flow.samples",
            self.fit_lo => "report.fit_lo",
            self.fit_hi => "report.fit_hi",
        );
    }
}

#[derive(Debug, Args)]
struct InitialArgs {
    /// uniform, gaussian-truncated, qsd or csv.
    #[arg(long)]
    initial: Option<String>,
    #[arg(long)]
    initial_lo: Option<f64>,
    #[arg(long)]
    initial_hi: Option<f64>,
    #[arg(long)]
    initial_mean: Option<f64>,
    #[arg(long)]
    initial_sd: Option<f64>,
    /// CSV with columns x, density on the run's grid.
    #[arg(long)]
    initial_csv: Option<PathBuf>,
}

impl InitialArgs {
    fn apply(&self, m: &mut ConfigMap) {
        overrides!(m;
            self.initial => "initial.family",
            self.initial_lo => "initial.lo",
            self.initial_hi => "initial.hi",
            self.initial_mean => "initial.mean",
            self.initial_sd => "initial.sd",
            self.initial_csv.as_ref().map(|p| p.display().to_string()) => "initial.path",
        );
    }
}

#[derive(Debug, Args)]
struct McArgs {
    #[arg(long)]
    particles: Option<usize>,
    /// Euler–Maruyama step.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Refill absorbed particles from the survivors.
    #[arg(long)]
    resample: bool,
    /// Plain Euler–Maruyama exit test, without the Brownian-bridge correction.
    #[arg(long)]
    no_bridge: bool,
    #[arg(long)]
    record_every: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    /// Survival-fit window for the λ₀ estimate.
    #[arg(long)]
    fit_lo: Option<f64>,
    #[arg(long)]
    fit_hi: Option<f64>,
}

impl McArgs {
    fn apply(&self, m: &mut ConfigMap) {
        if self.resample {
            m.set("mc.resample", "true");
        }
        if self.no_bridge {
            m.set("mc.bridge_correction", "false");
        }
        overrides!(m;
            self.particles => "mc.n_particles",
            self.dt => "mc.dt",
            self.horizon => "mc.horizon",
            self.record_every => "mc.record_every",
            self.threads => "mc.threads",
            self.fit_lo => "mc.fit_lo",
            self.fit_hi => "mc.fit_hi",
        );
    }
}

#[derive(Debug, Args)]
struct CdfiArgs {
    /// Lower bound on λ₀ used in κ̃.
    #[arg(long)]
    lambda0_lower: Option<f64>,
    /// basic or refined.
    #[arg(long)]
    form: Option<String>,
}

impl CdfiArgs {
    fn apply(&self, m: &mut ConfigMap) {
        overrides!(m;
            self.lambda0_lower => "cdfi.lambda0_lower",
            self.form => "cdfi.form",
        );
    }
}

type Handler = fn(&RunConfig) -> Result<(commands::Artifacts, String), CliError>;

fn execute(cli: Cli) -> Result<String, CliError> {
    let (common, handler): (&Common, Handler) = match &cli.command {
        Command::Eigen { common } => (common, commands::eigen),
        Command::Evolve { common, .. } => (common, commands::evolve),
        Command::Simulate { common, .. } => (common, commands::simulate_cmd),
        Command::Rates { common, .. } => (common, commands::rates),
        Command::Report { common, .. } => (common, commands::report),
    };
    let mut map = match &common.config {
        Some(path) => ConfigMap::read(path)?,
        None => ConfigMap::default(),
    };
    common.apply(&mut map)?;
    match &cli.command {
        Command::Eigen { .. } => {}
        Command::Evolve { flow, initial, .. } => {
            flow.apply(&mut map);
            initial.apply(&mut map);
        }
        Command::Simulate { mc, initial, .. } => {
            mc.apply(&mut map);
            initial.apply(&mut map);
        }
        Command::Rates { cdfi, .. } => cdfi.apply(&mut map),
        Command::Report { flow, initial, cdfi, .. } => {
            flow.apply(&mut map);
            initial.apply(&mut map);
            cdfi.apply(&mut map);
        }
    }
    let cfg = RunConfig::from_map(&map)?;
    let problems = validate(&cfg);
    if !problems.is_empty() {
        return Err(CliError::Validation(problems.join("; ")));
    }
    let (artifacts, summary) = handler(&cfg)?;
    let names = artifacts.write(&cfg.output)?;
    Ok(format!("{summary}\nwrote {} to {}", names.join(", "), cfg.output.display()))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}
