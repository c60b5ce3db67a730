//! `rachsim` command line. Exit codes: 0 ok, 2 configuration error, 3 runtime error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rachsim::analytic::{analytic_report, optimize_retx_probability, AnalyticError, ContentionModel};
use rachsim::kernel::SimTime;
use rachsim::report::{render_csv, render_json, ReportError};
use rachsim::scenario::{load_scenario, ConfigError};
use rachsim::sweep::{load_sweep, render_sweep_csv, run_sweep, SweepError};
use rachsim::{emit_report, Format, MetricsReport, SimError, Simulation};

#[derive(Parser)]
#[command(name = "rachsim", version, about = "Massive machine-type random access simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Simulate {
        scenario: PathBuf,
        /// Overrides the seed in the file and RACHSIM_SEED.
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: OutFormat,
        /// Keep per-device records (written to <stem>.trace.csv for CSV output).
        #[arg(long)]
        trace: bool,
    },
    /// Run a parameter sweep; one CSV row per (point, seed).
    Sweep {
        spec: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Model predictions for M channels, U devices and transmit probability p.
    Analyze {
        #[arg(long = "M")]
        m: u32,
        #[arg(long = "U")]
        u: u32,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: OutFormat,
    },
    /// Throughput-optimal transmit probability, reported like `analyze`.
    Optimize {
        #[arg(long = "M")]
        m: u32,
        #[arg(long = "U")]
        u: u32,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: OutFormat,
    },
    /// Load a scenario and print every effective parameter.
    Validate { scenario: PathBuf },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => c.into(),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<SweepError> for Failure {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Config(_) | SweepError::CapExceeded { .. } => Failure::Config(e.to_string()),
            SweepError::Run { .. } | SweepError::Pool(_) => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<AnalyticError> for Failure {
    fn from(e: AnalyticError) -> Self {
        match e {
            AnalyticError::InvalidModel(_) | AnalyticError::InstanceTooLarge { .. } => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn write_out(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .lock()
            .write_all(bytes)
            .map_err(|e| Failure::Runtime(format!("stdout: {e}"))),
    }
}

fn emit(report: &MetricsReport, format: Format, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => Ok(emit_report(report, format, path)?),
        None => write_out(
            None,
            &match format {
                Format::Csv => render_csv(report),
                Format::Json => render_json(report),
            },
        ),
    }
}

fn model(m: u32, u: u32, p: f64) -> Result<ContentionModel, Failure> {
    Ok(ContentionModel::new(m, u, p)?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate {
            scenario,
            seed,
            out,
            format,
            trace,
        } => {
            let loaded = load_scenario(&scenario)?;
            let mut sc = loaded.scenario;
            let mut defaulted = loaded.defaulted;
            if let Some(seed) = seed {
                sc.seed = seed;
                defaulted.retain(|k| k != "seed");
            }
            sc.trace |= trace;
            let end = SimTime(sc.duration_sf);
            let report = Simulation::with_defaults(sc, defaulted)?.run_until(end)?;
            emit(&report, format.into(), out.as_deref())
        }
        Command::Sweep { spec, jobs, out } => {
            let spec = load_sweep(&spec)?;
            let rows = run_sweep(&spec, jobs)?;
            write_out(out.as_deref(), &render_sweep_csv(&spec, &rows))
        }
        Command::Analyze { m, u, p, out, format } => {
            let report = analytic_report(&model(m, u, p)?)?;
            emit(&report, format.into(), out.as_deref())
        }
        Command::Optimize { m, u, out, format } => {
            if m == 0 {
                return Err(Failure::Config("--M must be >= 1".into()));
            }
            let p = optimize_retx_probability(m, u);
            let report = analytic_report(&model(m, u, p)?)?;
            emit(&report, format.into(), out.as_deref())
        }
        Command::Validate { scenario } => {
            let loaded = load_scenario(&scenario)?;
            let mut text = loaded.scenario.echo_lines(&loaded.defaulted).join("\n");
            text.push('\n');
            write_out(None, text.as_bytes())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("rachsim: configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("rachsim: {msg}");
            ExitCode::from(3)
        }
    }
}
