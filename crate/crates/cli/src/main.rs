use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use explvar::simulation::{run_scenario_with_threads, EstimatorKind, ScenarioConfig};
use explvar::{Error, VarianceMethod};

mod estimate;
mod mp_check;

#[derive(Debug, Parser)]
#[command(name = "explvar", version, about = "Explained variation with high-dimensional covariates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate r² for a CSV file.
    Estimate(EstimateArgs),
    /// Run a simulation scenario file.
    Simulate(SimulateArgs),
    /// Compare τ̂² on a random normal design with its Marchenko–Pastur limit.
    MpCheck(MpCheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    EeLambda,
    EeLs,
    TransEe,
}

impl From<Method> for EstimatorKind {
    fn from(m: Method) -> Self {
        match m {
            Method::EeLambda => EstimatorKind::EeLambda,
            Method::EeLs => EstimatorKind::EeLs,
            Method::TransEe => EstimatorKind::TransEe,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variance {
    Null,
    Normal,
    Robust,
}

impl From<Variance> for VarianceMethod {
    fn from(v: Variance) -> Self {
        match v {
            Variance::Null => VarianceMethod::NullCase,
            Variance::Normal => VarianceMethod::NormalError,
            Variance::Robust => VarianceMethod::Robust,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Outcome column: a header name, or a 0-based index.
    #[arg(long, default_value = "y")]
    pub outcome: String,
    /// Defaults to ee-ls when n > p + 1, ee-lambda otherwise.
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long, value_enum, default_value = "robust")]
    pub variance: Variance,
    /// Comma-separated confidence levels.
    #[arg(long, value_delimiter = ',', default_value = "0.95")]
    pub level: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub lambda0: f64,
    #[arg(long, default_value_t = 5)]
    pub iterations: usize,
    /// Add all pairwise products of the covariates.
    #[arg(long)]
    pub interactions: bool,
    /// Take natural logs of the covariates first (all must be positive).
    #[arg(long)]
    pub log_covariates: bool,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Recorded in the report; the estimate itself uses no randomness.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Recorded in the report; estimation runs on one thread.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario file in key = value form.
    scenario: PathBuf,
    /// Write the JSON report here (default: stdout).
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write the CSV report here.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MpCheckArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub p: usize,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Exit status for a library error: 3 for numerical failures, 2 otherwise.
fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        3
    } else {
        2
    }
}

fn write_file(path: &PathBuf, contents: &str) -> explvar::Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io { path: path.clone(), source })
}

fn simulate(args: &SimulateArgs) -> explvar::Result<()> {
    let cfg = ScenarioConfig::from_file(&args.scenario)?;
    let report = run_scenario_with_threads(&cfg, args.threads)?;
    let json = report.to_json()?;
    if let Some(path) = &args.csv {
        write_file(path, &report.to_csv()?)?;
    }
    match &args.json {
        Some(path) => write_file(path, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Estimate(args) => estimate::run(args).map(|out| print!("{out}")),
        Command::Simulate(args) => simulate(args),
        Command::MpCheck(args) => mp_check::run(args).map(|out| println!("{out}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
