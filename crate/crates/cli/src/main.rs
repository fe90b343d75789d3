//! `alphafair` scenario runner.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "alphafair", version, about = "Flow-level alpha-fair bandwidth sharing scenarios")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Network (or multi-path) document in JSON.
    #[arg(long, global = true)]
    pub spec: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Also write the JSON summary here when the main output is CSV.
    #[arg(long, global = true)]
    pub summary: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeArg {
    Bridge,
    Euler,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Alpha-fair allocation and prices at a state.
    Allocate {
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<f64>,
    },
    /// Integrate the fluid model.
    FluidRun {
        #[arg(long, value_delimiter = ',', required = true)]
        n0: Vec<f64>,
        #[arg(long = "T")]
        t: f64,
        /// Step size; defaults to 1e-3 / max mu.
        #[arg(long)]
        h: Option<f64>,
        #[arg(long, default_value_t = 1)]
        record_every: usize,
    },
    /// Lift a workload to the invariant state.
    Lift {
        #[arg(long, value_delimiter = ',', required = true)]
        w: Vec<f64>,
    },
    /// Workload-cone geometry for proportional fairness.
    ConeReport {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        theta: Vec<f64>,
    },
    /// Simulate the flow-count chain.
    Simulate {
        #[command(flatten)]
        run: ChainRun,
    },
    /// State space collapse statistic across a heavy-traffic family.
    SscSweep {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        theta: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        r_list: Vec<f64>,
        /// Number of seeds per scale, counting up from --seed.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Horizon in diffusion-scaled time.
        #[arg(long = "T", default_value_t = 10.0)]
        t: f64,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long, default_value_t = alphafair::ctmc::DEFAULT_EVENT_BUDGET)]
        max_events: usize,
    },
    /// Simulate the reflected Brownian motion in the workload cone.
    SrbmRun {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        theta: Vec<f64>,
        #[arg(long, default_value_t = 1e-3)]
        h: f64,
        #[arg(long = "T")]
        t: f64,
        /// Number of seeds, counting up from --seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Initial workload; the origin when omitted.
        #[arg(long, value_delimiter = ',')]
        w0: Option<Vec<f64>>,
        #[arg(long, default_value_t = 100)]
        record_every: usize,
        #[arg(long, value_enum, default_value_t = SchemeArg::Bridge)]
        scheme: SchemeArg,
    },
    /// Compare simulated stationary means with the exact or approximate law.
    StationaryCompare {
        #[arg(long, conflicts_with = "approx", required_unless_present = "approx")]
        exact: bool,
        #[arg(long)]
        approx: bool,
        #[command(flatten)]
        run: ChainRun,
    },
    /// Reduce a multi-path network to a single constraint matrix.
    ProjectMultipath,
    /// Split routes into exponential copies following document-size mixtures.
    ExtendMixture {
        /// JSON array with, per route, a list of {"fraction", "rate"}.
        #[arg(long)]
        mixture: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
pub struct ChainRun {
    /// Initial counts; empty network when omitted.
    #[arg(long, value_delimiter = ',')]
    pub n0: Option<Vec<u32>>,
    #[arg(long = "T")]
    pub t: f64,
    #[arg(long, default_value_t = alphafair::ctmc::DEFAULT_EVENT_BUDGET)]
    pub max_events: usize,
    #[arg(long, default_value_t = alphafair::ctmc::DEFAULT_BURN_IN)]
    pub burn_in: f64,
    #[arg(long, default_value_t = alphafair::ctmc::DEFAULT_BATCHES)]
    pub batches: usize,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Core(alphafair::Error),
}

impl CliError {
    pub fn io(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }

    fn parts(&self) -> (&'static str, &'static str, String) {
        match self {
            CliError::Config(m) => ("cli", "ConfigInvalid", m.clone()),
            CliError::Io(m) => ("cli", "Io", m.clone()),
            CliError::Core(e) => (e.module(), e.code(), e.to_string()),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub fn core<E: Into<alphafair::Error>>(e: E) -> CliError {
    CliError::Core(e.into())
}

fn report(err: &CliError) -> ExitCode {
    let (module, code, message) = err.parts();
    let doc = json!({
        "schema": alphafair::SCHEMA_VERSION,
        "error": { "module": module, "code": code, "message": message },
    });
    eprintln!("{doc}");
    ExitCode::from(err.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(&CliError::Config(e.to_string().trim_end().to_string())),
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
