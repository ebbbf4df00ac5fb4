//! Command-line front end: argument parsing, config resolution and output
//! files for the `lsmtune` binary.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use lsmtune::Family;
use serde::Serialize;

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "lsmtune", version, about = "Nominal and robust LSM-tree tuning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads for parallel sweeps (default: all cores).
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Overrides the config design family.
    #[arg(long, global = true)]
    pub family: Option<Family>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Tune for the expected workload.
    TuneNominal,
    /// Tune for the worst case in a KL region around the expected workload.
    TuneRobust,
    /// Estimate the region radius from a workload history.
    EstimateRho {
        /// CSV with z0,z1,q,w columns, one workload per row.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Sample a benchmark set of workloads.
    BenchGen,
    /// Nominal vs robust tunings over centers and radii.
    EvaluateSweep,
    /// Cost against divergence from the expected workload, per family.
    DriftExperiment,
    /// Run a workload session on the simulator for nominal and robust tunings.
    SimulateSession,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::TuneNominal => "tune-nominal",
            Command::TuneRobust => "tune-robust",
            Command::EstimateRho { .. } => "estimate-rho",
            Command::BenchGen => "bench-gen",
            Command::EvaluateSweep => "evaluate-sweep",
            Command::DriftExperiment => "drift-experiment",
            Command::SimulateSession => "simulate-session",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Config(String),
    Solver(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Solver(_) => "solver",
            CliError::Io(_) => "io",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Solver(m) | CliError::Io(m) => m,
        }
    }

    /// Single-line JSON object for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            error: &'a str,
            message: &'a str,
            exit_code: i32,
        }
        serde_json::to_string(&Report { error: self.kind(), message: self.message(), exit_code: self.exit_code() })
            .expect("error report serializes")
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} error: {}", self.kind(), self.message())
    }
}

impl std::error::Error for CliError {}

impl From<lsmtune::Error> for CliError {
    fn from(e: lsmtune::Error) -> Self {
        use lsmtune::Error as E;
        match e {
            E::Io(_) => CliError::Io(e.to_string()),
            E::SolverFailed(_) | E::InfeasibleBounds(_) => CliError::Solver(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter("ENDURE_LOG");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported as JSON on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let err = CliError::Config(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(f) = cli.family {
        cfg.family = f;
    }
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.parallelism {
            if n == 0 {
                return Err(CliError::Config("--parallelism must be at least 1".into()));
            }
            b = b.num_threads(n);
        }
        b.build().map_err(|e| CliError::Config(e.to_string()))?
    };
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", cli.out.display())))?;
    pool.install(|| commands::dispatch(&cli.command, &cfg, &cli.out))
}
