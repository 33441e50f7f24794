//! `dagperm`: generate synthetic benchmarks, fit the variational posterior,
//! evaluate it against a known graph, and draw posterior samples.
//!
//! Exit codes: 0 success, 1 usage, 2 data or I/O, 3 numerical failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<dagperm::Error> for CliError {
    fn from(e: dagperm::Error) -> Self {
        use dagperm::Error as E;
        match e {
            E::InvalidArgument(_) => CliError::Usage(e.to_string()),
            E::Domain(_) | E::NonFinite { .. } | E::NonFiniteGradient { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "dagperm", version, about = "Variational DAG structure learning over node orderings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a random DAG and data from it.
    Generate(GenerateArgs),
    /// Fit the variational posterior to a dataset.
    Fit(FitArgs),
    /// Score a fitted posterior against the true graph.
    Evaluate(EvaluateArgs),
    /// Draw graphs from a fitted posterior.
    Sample(SampleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum GraphArg {
    Er,
    Sf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SemArg {
    LinearGaussian,
    RandomMlp,
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Run config whose `synth` section provides defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub edges: Option<f64>,
    #[arg(long, value_enum)]
    pub graph: Option<GraphArg>,
    #[arg(long, value_enum)]
    pub sem: Option<SemArg>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub noise_var: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Writes `rep_000`, `rep_001`, ... with consecutive seeds.
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV data file (overrides the config's `data`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub perm_samples: Option<usize>,
    #[arg(long)]
    pub graph_samples: Option<usize>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// True adjacency as CSV grid or JSON edge list.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub posterior_samples: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Label written to the replicate column of plot_data.csv.
    #[arg(long, default_value = "0")]
    pub replicate: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = config::DEFAULT_POSTERIOR_SAMPLES)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub overwrite: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Sample(a) => commands::sample(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dagperm: {e}");
            ExitCode::from(e.code())
        }
    }
}
