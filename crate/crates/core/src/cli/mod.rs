//! The `farey-skew` command line: argument parsing, configuration files,
//! dispatch and output.
//!
//! Exit status is 0 when a command passes or only reports, 1 when a check
//! fails or a computation errors, and 2 on usage or configuration errors.

mod commands;
pub mod config;
pub mod output;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::checks::CheckError;
use crate::dynamics::DynamicsError;
use crate::limits::LimitsError;
use crate::minkowski::MinkowskiError;
use crate::observable::ObservableError;
use crate::rational::FareyError;
use crate::renewal::RenewalError;
use crate::transfer::TransferError;

use config::{ConfigError, ConfigFile, CONFIG_ENV};
use output::{write_target, Report};
use plot::{emit_plot, Plot, PlotError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Farey(#[from] FareyError),
    #[error(transparent)]
    Minkowski(#[from] MinkowskiError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Observable(#[from] ObservableError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Renewal(#[from] RenewalError),
    #[error(transparent)]
    Limits(#[from] LimitsError),
    #[error(transparent)]
    Check(#[from] CheckError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "farey-skew", version, about = "Farey map skew product: exact constructions, transfer operators and limit-theorem checks")]
pub struct Cli {
    /// Configuration file of `key = value` lines (default from $FAREY_SKEW_CONFIG).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Farey level as CSV `num,den[,logq_mod]`.
    Farey(FareyArgs),
    /// Exact values of the question-mark function, or quadrature nodes for the measure on Y.
    Minkowski(MinkowskiArgs),
    /// Trajectory of the skew product.
    Orbit(OrbitArgs),
    /// Eigenvalues of the discretized twisted transfer operator.
    Spectrum(SpectrumArgs),
    /// Leading eigenvalue of the perturbed operator along t.
    LambdaCurve(LambdaArgs),
    /// Deviation of renewal partial sums from their limit.
    Renewal(RenewalArgs),
    /// Exact mixing errors over Farey levels and their geometric fit.
    Mixing(MixingArgs),
    /// Central limit theorem check by Monte Carlo.
    Clt(CltArgs),
    /// Local limit theorem check by Monte Carlo.
    Llt(LltArgs),
    /// Characteristic function of Birkhoff sums against its Gaussian prediction.
    Charfn(CharfnArgs),
    /// Structural checks: federer, cohomology or tower.
    Check(CheckArgs),
}

/// Output targets. `-` sends JSON or CSV to stdout.
#[derive(Clone, Debug, Default, Args)]
pub struct OutputArgs {
    /// Write the JSON result envelope here.
    #[arg(long, value_name = "PATH")]
    pub json: Option<PathBuf>,
    /// Write the table as CSV here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    /// Write an SVG plot here.
    #[arg(long, value_name = "PATH")]
    pub svg: Option<PathBuf>,
    /// Logarithmic y axis in the plot.
    #[arg(long)]
    pub log_y: bool,
}

/// Monte Carlo settings shared by the sampling commands.
#[derive(Clone, Debug, Args, Serialize)]
pub struct SamplingArgs {
    /// Observable: cos, coboundary, step or one.
    #[arg(long, default_value = "cos", value_parser = ["cos", "coboundary", "step", "one"])]
    pub psi: String,
    #[arg(long, default_value_t = 0x5eed)]
    pub seed: u64,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Fiber circle is R/(log r)Z.
    #[arg(long, default_value_t = 2.0)]
    pub r: f64,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct FareyArgs {
    #[arg(long)]
    pub level: u32,
    /// Add the column `log q mod log r`.
    #[arg(long, value_name = "R")]
    pub lift: Option<f64>,
    #[command(flatten)]
    #[serde(skip)]
    pub output: OutputArgs,
}

#[derive(Clone, Debug, Args, Serialize)]
#[group(id = "minkowski_mode", required = true, multiple = false, args = ["eval", "nodes"])]
pub struct MinkowskiArgs {
    /// Rational p/q in [0, 1].
    #[arg(long, value_name = "P/Q")]
    pub eval: Option<String>,
    /// Number of equal-mass quadrature nodes on Y.
    #[arg(long, value_name = "N")]
    pub nodes: Option<usize>,
    #[command(flatten)]
    #[serde(skip)]
    pub output: OutputArgs,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct OrbitArgs {
    #[arg(long)]
    pub x: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub omega: f64,
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    #[arg(long, default_value_t = 2.0)]
    pub r: f64,
    #[command(flatten)]
    #[serde(skip)]
    pub output: OutputArgs,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct SpectrumArgs {
    /// Fiber frequency.
    #[arg(long, default_value_t = 1, allow_hyphen_values = true)]
    pub k: i64,
    /// Spectral parameter as RE,IM.
    #[arg(long, default_value = "1,0", allow_hyphen_values = true, value_name = "RE,IM")]
    pub z: String,
    #[arg(long, default_value_t = crate::transfer::DEFAULT_GRID)]
    pub grid: usize,
    #[arg(long, default_value_t = crate::transfer::DEFAULT_RMAX)]
    pub rmax: u32,
    #[arg(long, default_value_t = 2.0)]
    pub r: f64,
    #[command(flatten)]
    #[serde(skip)]
    pub output: OutputArgs,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct LambdaArgs {
    #[arg(long, default_value = "cos", value_parser = ["cos", "coboundary", "step", "one"])]
    pub psi: String,
    /// Largest t; the path runs from 0 in `steps` equal steps of at most 0.05.
    #[arg(long, default_value_t = 0.2, allow_hyphen_values = true)]
    pub tmax: f64,
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    /// Step of the curvature fit.
    #[arg(long, default_value_t = 0.02)]
    pub h: f64,
    /// Fiber Fourier band kept in the perturbed operator.
    #[arg(long, default_value_t = 8)]
    pub band: usize,
    #[arg(long, default_value_t = crate::transfer::DEFAULT_GRID)]
    pub grid: usize,
    #[arg(long, default_value_t = 25)]
    pub rmax: u32,
    #[arg(long, default_value_t = 2.0)]
    pub r: f64,
    #[command(flatten)]
    #[serde(skip)]
    pub output: OutputArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RenewalDemo {
    Geometric,
    Lattice,
    Farey,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct RenewalArgs {
    #[arg(long, value_enum)]
    pub demo: RenewalDemo,
    #[arg(long, default_value_t = 60)]
    pub nmax: usize,
    /// Perturbation parameter (lattice and farey demos).
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub t: f64,
    /// Parameter of the geometric demo.
    #[arg(long, default_value_t = 0.3)]
    pub p: f64,
    /// Observable of the perturbed farey demo.
    #[arg(long, default_value = "cos", value_parser = ["cos", "coboundary", "step", "one"])]
    pub psi: String,
    #[arg(long, default_value_t = 8)]
    pub band: usize,
    #[arg(long, default_value_t = crate::transfer::DEFAULT_GRID)]
    pub grid: usize,
    #[arg(long, default_value_t = crate::transfer::DEFAULT_RMAX)]
    pub rmax: u32,
    #[command(flatten)]
    #[serde(skip)]
    pub output: OutputArgs,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct MixingArgs {
    #[arg(long, default_value = "cos", value_parser = ["cos", "coboundary", "step", "one"])]
    pub psi: String,
    /// Deepest Farey level.
    #[arg(long, default_value_t = 20)]
    pub n: u32,
    /// First level of the fit window.
    #[arg(long, default_value_t = 6)]
    pub from: u32,
    #[arg(long, default_value_t = 2.0)]
    pub r: f64,
    #[command(flatten)]
    #[serde(skip)]
    pub output: OutputArgs,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct CltArgs {
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[command(flatten)]
    #[serde(skip)]
    pub output: OutputArgs,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct LltArgs {
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long, default_value_t = 4000)]
    pub n: usize,
    /// Interval [a, b].
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub a: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub b: f64,
    /// Shift in units of sqrt n.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub kappa: f64,
    #[command(flatten)]
    #[serde(skip)]
    pub output: OutputArgs,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct CharfnArgs {
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Comma-separated trajectory lengths.
    #[arg(long, value_delimiter = ',', default_value = "200,400,800,1600")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
    pub t: f64,
    /// Test function at the end of the trajectory.
    #[arg(long, default_value = "one", value_parser = ["cos", "coboundary", "step", "one"])]
    pub f: String,
    /// Test function at the start of the trajectory.
    #[arg(long, default_value = "one", value_parser = ["cos", "coboundary", "step", "one"])]
    pub g: String,
    #[command(flatten)]
    #[serde(skip)]
    pub output: OutputArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckKind {
    Federer,
    Cohomology,
    Tower,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct CheckArgs {
    #[arg(value_enum)]
    pub kind: CheckKind,
    /// Federer constant, a rational.
    #[arg(long, default_value = "2")]
    pub c: String,
    /// Scales 2^-from ..= 2^-to.
    #[arg(long, default_value_t = 9)]
    pub eta_from: u32,
    #[arg(long, default_value_t = 20)]
    pub eta_to: u32,
    #[command(flatten)]
    #[serde(skip)]
    pub output: OutputArgs,
}

/// Parses with config entries injected ahead of the user's flags.
pub fn parse(argv: Vec<String>) -> Result<Cli, ParseFailure> {
    let config_path = find_config(&argv).or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from));
    let mut cmd = Cli::command();
    cmd.build();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in &names {
        cmd = cmd.mut_subcommand(name, |s| s.args_override_self(true));
    }
    let argv = match config_path {
        Some(path) => {
            let file = ConfigFile::load(&path).map_err(|e| ParseFailure::Cli(e.into()))?;
            inject(argv, &file, &cmd).map_err(|e| ParseFailure::Cli(e.into()))?
        }
        None => argv,
    };
    let matches = cmd.try_get_matches_from(argv).map_err(ParseFailure::Clap)?;
    Cli::from_arg_matches(&matches).map_err(ParseFailure::Clap)
}

#[derive(Debug)]
pub enum ParseFailure {
    Clap(clap::Error),
    Cli(CliError),
}

fn find_config(argv: &[String]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    let mut found = None;
    while let Some(a) = it.next() {
        if a == "--" {
            break;
        }
        if a == "--config" {
            found = it.next().map(PathBuf::from);
        } else if let Some(v) = a.strip_prefix("--config=") {
            found = Some(PathBuf::from(v));
        }
    }
    found
}

/// Index of the subcommand token, skipping global options and their values.
fn subcommand_position(argv: &[String], names: &[String]) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let a = &argv[i];
        if names.contains(a) {
            return Some(i);
        }
        if a == "--config" || a == "--workers" {
            i += 1;
        } else if !a.starts_with('-') {
            return None;
        }
        i += 1;
    }
    None
}

fn inject(mut argv: Vec<String>, file: &ConfigFile, cmd: &clap::Command) -> Result<Vec<String>, ConfigError> {
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    let Some(pos) = subcommand_position(&argv, &names) else {
        return Ok(argv);
    };
    let sub = cmd.find_subcommand(&argv[pos]).expect("position names a subcommand");
    let mut injected = Vec::new();
    for (key, value, in_section) in file.entries_for(sub.get_name()) {
        let arg = sub.get_arguments().find(|a| a.get_long() == Some(key) && key != "config");
        let Some(arg) = arg else {
            if in_section {
                return Err(ConfigError::UnknownKey { section: sub.get_name().to_string(), key: key.to_string() });
            }
            continue;
        };
        if arg.get_action().takes_values() {
            injected.push(format!("--{key}={value}"));
        } else if config::parse_bool(key, value)? {
            injected.push(format!("--{key}"));
        }
    }
    argv.splice(pos + 1..pos + 1, injected);
    Ok(argv)
}

/// Runs one invocation and returns its exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Result<Vec<String>, OsString> = args.into_iter().map(|a| a.into().into_string()).collect();
    let argv = match argv {
        Ok(v) => v,
        Err(bad) => {
            eprintln!("error: argument {bad:?} is not valid UTF-8");
            return 2;
        }
    };
    let cli = match parse(argv) {
        Ok(cli) => cli,
        Err(ParseFailure::Clap(e)) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
        Err(ParseFailure::Cli(e)) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(report) => match report.pass {
            Some(false) => 1,
            _ => 0,
        },
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs the parsed command on a pool of `--workers` threads and writes its outputs.
pub fn execute(cli: &Cli) -> Result<Report, CliError> {
    let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    if workers == 0 {
        return Err(CliError::Usage("--workers must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {workers} workers: {e}")))?;
    let (report, plot) = pool.install(|| commands::dispatch(&cli.command, workers))?;
    emit(&report, plot, output_of(&cli.command))?;
    Ok(report)
}

fn output_of(c: &Command) -> &OutputArgs {
    match c {
        Command::Farey(a) => &a.output,
        Command::Minkowski(a) => &a.output,
        Command::Orbit(a) => &a.output,
        Command::Spectrum(a) => &a.output,
        Command::LambdaCurve(a) => &a.output,
        Command::Renewal(a) => &a.output,
        Command::Mixing(a) => &a.output,
        Command::Clt(a) => &a.output,
        Command::Llt(a) => &a.output,
        Command::Charfn(a) => &a.output,
        Command::Check(a) => &a.output,
    }
}

fn is_stdout(p: &Option<PathBuf>) -> bool {
    p.as_ref().is_some_and(|p| p.as_os_str() == "-")
}

fn emit(report: &Report, plot: Option<Plot>, out: &OutputArgs) -> Result<(), CliError> {
    if is_stdout(&out.json) && is_stdout(&out.csv) {
        return Err(CliError::Usage("only one of --json and --csv can go to stdout".into()));
    }
    if out.csv.is_some() && report.table.is_none() {
        return Err(CliError::Usage(format!("`{}` has no table for --csv", report.command)));
    }
    if let Some(path) = &out.svg {
        let mut plot = plot.ok_or_else(|| CliError::Usage(format!("`{}` has no plot for --svg", report.command)))?;
        plot.log_y |= out.log_y;
        emit_plot(&plot, path)?;
    }
    if let Some(path) = &out.json {
        write_target(path, &report.to_json())?;
    }
    if let (Some(path), Some(table)) = (&out.csv, &report.table) {
        write_target(path, &table.to_csv())?;
    }
    let stdout_taken = is_stdout(&out.json) || is_stdout(&out.csv);
    match (&report.table, out.csv.is_none() && !stdout_taken) {
        (Some(table), true) => {
            write_target(std::path::Path::new("-"), &table.to_csv())?;
            for line in &report.summary {
                eprintln!("{line}");
            }
        }
        _ if stdout_taken => {
            for line in &report.summary {
                eprintln!("{line}");
            }
        }
        _ => {
            let text: String = report.summary.iter().map(|l| format!("{l}\n")).collect();
            write_target(std::path::Path::new("-"), &text)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn config_injection_is_overridden_by_flags() {
        let file = ConfigFile::parse("seed = 9\n[clt]\nn = 50\ntrials = 10\n", "t").unwrap();
        let mut cmd = Cli::command();
        cmd.build();
        let out = inject(argv("farey-skew clt --n 70"), &file, &cmd).unwrap();
        assert_eq!(out, argv("farey-skew clt --seed=9 --n=50 --trials=10 --n 70"));
        // global keys a subcommand lacks are skipped
        let out = inject(argv("farey-skew --workers 2 farey --level 1"), &file, &cmd).unwrap();
        assert_eq!(out, argv("farey-skew --workers 2 farey --level 1"));
    }

    #[test]
    fn unknown_section_key_is_rejected() {
        let file = ConfigFile::parse("[farey]\nlevle = 3\n", "t").unwrap();
        let mut cmd = Cli::command();
        cmd.build();
        let err = inject(argv("farey-skew farey"), &file, &cmd).unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { .. }));
    }

    #[test]
    fn boolean_keys() {
        let file = ConfigFile::parse("log-y = true\n", "t").unwrap();
        let mut cmd = Cli::command();
        cmd.build();
        let out = inject(argv("farey-skew mixing"), &file, &cmd).unwrap();
        assert_eq!(out, argv("farey-skew mixing --log-y"));
    }

    #[test]
    fn finds_config_flag() {
        assert_eq!(find_config(&argv("x farey --config a.cfg")), Some(PathBuf::from("a.cfg")));
        assert_eq!(find_config(&argv("x --config=b farey")), Some(PathBuf::from("b")));
        assert_eq!(find_config(&argv("x farey")), None);
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
