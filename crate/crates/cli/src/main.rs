//! `wpcs`: solve single instances, run policy sweeps, audit solutions and
//! sample scenarios.
//!
//! Data goes to `--out` or stdout; diagnostics go to stderr, filtered by
//! `WPCS_LOG` (`error`, `info`, `debug`).
//!
//! Exit codes: 0 ok, 1 I/O or internal error, 2 parse error, 3 validation
//! error, 4 convergence error, 5 audit failure.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use wpcs::iterate::solve_p1;
use wpcs::oracle::{
    audit_allocations, audit_instance_report, run_battery, AuditReport, BatteryConfig,
};
use wpcs::sim::{linspace, mean_stderr, sample_trial, sweep, Axis, Policy};
use wpcs::{Allocation, SensorProfile, SolveReport, SystemConfig, WpcsError};

use config::Config;

#[derive(Debug)]
pub enum CliError {
    Io(String),
    Parse(String),
    Validation(String),
    Convergence(String),
    Audit(String),
    Solver(WpcsError),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Convergence(_) => 4,
            CliError::Audit(_) => 5,
            CliError::Solver(e) => match e {
                WpcsError::Validation { .. }
                | WpcsError::Domain { .. }
                | WpcsError::Infeasible(_)
                | WpcsError::Size(_) => 3,
                WpcsError::Convergence { .. } | WpcsError::NonMonotone { .. } => 4,
                WpcsError::Degenerate(_) => 1,
            },
        }
    }

    fn kind(&self) -> &'static str {
        match self.code() {
            2 => "parse",
            3 => "validation",
            4 => "convergence",
            5 => "audit",
            _ => "internal",
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Io(m)
            | CliError::Parse(m)
            | CliError::Validation(m)
            | CliError::Convergence(m)
            | CliError::Audit(m) => f.write_str(m),
            CliError::Solver(e) => write!(f, "{e}"),
        }
    }
}

impl From<WpcsError> for CliError {
    fn from(e: WpcsError) -> Self {
        CliError::Solver(e)
    }
}

#[derive(Parser)]
#[command(
    name = "wpcs",
    version,
    about = "Wirelessly powered crowd sensing solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and write the report with the allocation table.
    Solve(Common),
    /// Sweep P0 or T and write mean rewards per policy as CSV.
    Sweep(SweepArgs),
    /// Audit a given instance, or a random battery when no sensors are given.
    Verify(Common),
    /// Sample a scenario and write it as a loadable config.
    Sample(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a config key, e.g. `--set scenario.n_sensors=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Trials per sweep point, or instances in the verify battery.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    axis: Option<AxisArg>,
    /// Comma-separated sweep points.
    #[arg(long)]
    values: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    P0,
    T,
}

/// Resolved inputs of one command.
struct RunManifest {
    config: Config,
    out: Option<PathBuf>,
    trials: Option<usize>,
}

impl RunManifest {
    fn from_args(args: &Common) -> Result<Self, CliError> {
        let mut overrides = args.overrides.clone();
        if let Some(seed) = args.seed {
            overrides.push(format!("scenario.seed={seed}"));
        }
        let config = config::load(args.config.as_deref(), &overrides)?;
        config.validate()?;
        Ok(Self {
            config,
            out: args.out.clone(),
            trials: args.trials,
        })
    }

    /// Explicit sensors, or trial 0 of the scenario.
    fn instance(&self) -> (SystemConfig, Vec<SensorProfile>) {
        match &self.config.sensors {
            Some(sensors) => (self.config.system(), sensors.clone()),
            None => sample_trial(&self.config.scenario(), 0),
        }
    }

    fn write(&self, text: &str) -> Result<(), CliError> {
        match &self.out {
            Some(path) => std::fs::write(path, text)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    report: &'a SolveReport,
    allocations: &'a [Allocation],
    system: &'a SystemConfig,
    sensors: &'a [SensorProfile],
}

fn cmd_solve(args: &Common) -> Result<(), CliError> {
    let m = RunManifest::from_args(args)?;
    let (cfg, profiles) = m.instance();
    info!("solving {} sensors", profiles.len());
    let (allocs, report) = solve_p1(&profiles, &cfg, &m.config.iterate)?;
    info!(
        "reward {} after {} iterations (converged: {})",
        report.reward, report.iterations, report.converged
    );
    m.write(&to_json(&SolveOutput {
        report: &report,
        allocations: &allocs,
        system: &cfg,
        sensors: &profiles,
    }))?;
    if !report.converged {
        return Err(CliError::Convergence(format!(
            "no convergence within {} iterations",
            m.config.iterate.max_iters
        )));
    }
    Ok(())
}

fn default_values(axis: Axis) -> Vec<f64> {
    match axis {
        Axis::P0 => linspace(0.01, 0.1, 10),
        Axis::T => linspace(0.2, 2.0, 10),
    }
}

fn parse_values(raw: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse()
                .map_err(|_| CliError::Parse(format!("--values: cannot parse '{v}'")))
        })
        .collect()
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let m = RunManifest::from_args(&args.common)?;
    if m.config.sensors.is_some() {
        return Err(CliError::Validation(
            "sensors: sweeps sample scenarios; remove the sensors section".into(),
        ));
    }
    let run = &m.config.run;
    let axis = match args.axis {
        Some(AxisArg::P0) => Axis::P0,
        Some(AxisArg::T) => Axis::T,
        None => run.axis,
    };
    let values = match &args.values {
        Some(v) => parse_values(v)?,
        None if !run.values.is_empty() => run.values.clone(),
        None => default_values(axis),
    };
    let trials = m.trials.unwrap_or(run.trials);
    info!(
        "sweeping {} over {} points, {trials} trials",
        axis.name(),
        values.len()
    );
    let res = sweep(
        axis,
        &values,
        &m.config.scenario(),
        trials,
        &Policy::standard(),
        &m.config.iterate,
    )?;
    m.write(&res.to_csv())?;

    // decreases of the mean beyond one paired standard error
    for (pi, name) in res.policies.iter().enumerate() {
        let mut drops = Vec::new();
        for i in 0..values.len().saturating_sub(1) {
            let xs: Vec<f64> = res
                .rewards
                .iter()
                .map(|t| t[i + 1][pi] - t[i][pi])
                .collect();
            let (d, se) = mean_stderr(&xs);
            if d + se < 0.0 {
                drops.push(format!("{}->{}", values[i], values[i + 1]));
            }
        }
        if drops.is_empty() {
            eprintln!("monotone {name}: ok");
        } else {
            eprintln!("monotone {name}: decreases at {}", drops.join(", "));
        }
    }
    Ok(())
}

fn cmd_verify(args: &Common) -> Result<(), CliError> {
    let m = RunManifest::from_args(args)?;
    let c = &m.config;
    let bc = BatteryConfig {
        instances: m.trials.unwrap_or(c.run.instances),
        scenario: c.scenario(),
        iterate: c.iterate,
        tol: c.run.tol,
        ..Default::default()
    };
    let report: AuditReport = match (&c.sensors, &c.allocations) {
        (Some(sensors), Some(allocs)) => {
            info!("auditing the given allocation");
            audit_allocations(sensors, allocs, &c.system(), c.run.tol)
        }
        (Some(sensors), None) => {
            info!("auditing a solve of the given {} sensors", sensors.len());
            let mut report = audit_instance_report(sensors, &c.system(), &bc)?;
            let (allocs, _) = solve_p1(sensors, &c.system(), &c.iterate)?;
            report
                .checks
                .extend(audit_allocations(sensors, &allocs, &c.system(), c.run.tol).checks);
            report
        }
        (None, _) => {
            info!("running a battery of {} instances", bc.instances);
            run_battery(&bc)?
        }
    };
    m.write(&to_json(&report))?;
    eprint!("{}", report.to_text());
    let failed: Vec<String> = report
        .failures()
        .map(|f| {
            if f.detail.is_empty() {
                f.name.clone()
            } else {
                f.detail.clone()
            }
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Audit(format!("failed: {}", failed.join("; "))))
    }
}

fn cmd_sample(args: &Common) -> Result<(), CliError> {
    let m = RunManifest::from_args(args)?;
    if m.config.sensors.is_some() {
        warn!("config already lists sensors; writing them unchanged");
    }
    let (cfg, profiles) = m.instance();
    let out = Config {
        system: Some(cfg),
        sensors: Some(profiles),
        allocations: None,
        ..m.config.clone()
    };
    m.write(&to_json(&out))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("WPCS_LOG", "error"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Sample(a) => cmd_sample(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(e.code())
        }
    }
}
