mod commands;
mod input;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Kernel Hotelling-Lawley tests on multivariate data.
#[derive(Parser, Debug)]
#[command(name = "tkhl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Test a linear hypothesis on the factor effects.
    Test(RunArgs),
    /// Compare every pair of levels of one factor, with BH adjustment.
    Pairwise(PairwiseArgs),
    /// Projection tables, discriminant coordinates and Cook distances.
    Diagnostics(DiagnosticsArgs),
    /// Monte Carlo level and power experiments.
    Simulate(SimulateArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum KernelKind {
    Gaussian,
    Linear,
    Polynomial,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    Uniform,
    Stratified,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// CSV with a header row; response columns start with `y_`.
    #[arg(long)]
    pub data: PathBuf,
    /// One or two factor column names, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub factors: Vec<String>,
    /// `global:FACTOR`, `pair:FACTOR:LEVEL_A:LEVEL_B` or `custom:PATH` (CSV of coefficients).
    /// Defaults to the global test of the first factor.
    #[arg(long)]
    pub contrast: Option<String>,
    #[arg(long, value_enum, default_value_t = KernelKind::Gaussian)]
    pub kernel: KernelKind,
    /// Gaussian bandwidth; the median heuristic when omitted.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, default_value_t = 2)]
    pub degree: u32,
    #[arg(long, default_value_t = 1.0)]
    pub offset: f64,
    /// Spectral truncation(s), comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [5])]
    pub truncation: Vec<usize>,
    /// Level used for the `reject` flag.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Use the Nyström test with this many landmarks.
    #[arg(long)]
    pub nystrom_landmarks: Option<usize>,
    /// Number of Nyström anchors (implies the Nyström test).
    #[arg(long)]
    pub nystrom_anchors: Option<usize>,
    #[arg(long, value_enum, default_value_t = Strategy::Uniform)]
    pub nystrom_strategy: Strategy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct PairwiseArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Factor whose levels are compared (default: the first factor).
    #[arg(long)]
    pub pairwise_factor: Option<String>,
}

#[derive(Args, Debug)]
pub struct DiagnosticsArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Number of discriminant axes (default `min(T, d)`).
    #[arg(long)]
    pub axes: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Simulation config as JSON.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in config.
    #[arg(long, value_parser = ["small"])]
    pub preset: Option<String>,
    /// Report output file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV of per-replicate statistics.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            let err = commands::CliError::Usage(first.to_string());
            output::emit_error(&err);
            return ExitCode::from(err.exit_code());
        }
    };
    let result = match cli.command {
        Command::Test(a) => commands::cmd_test(&a),
        Command::Pairwise(a) => commands::cmd_pairwise(&a),
        Command::Diagnostics(a) => commands::cmd_diagnostics(&a),
        Command::Simulate(a) => commands::cmd_simulate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            output::emit_error(&err);
            ExitCode::from(err.exit_code())
        }
    }
}
