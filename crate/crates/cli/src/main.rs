mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "bdr",
    version,
    about = "Approximate Bayesian doubly-robust ATE estimation"
)]
pub struct Cli {
    /// Flat `key = value` file; keys are flag names.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; a random one is generated and printed when absent.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for output artifacts (default: current directory).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the five-configuration simulation study.
    Simulate(SimulateArgs),
    /// Estimate the ATE from a CSV file.
    Estimate(EstimateArgs),
    /// Propensity-score matching only; writes pairs and the trimmed sample.
    Match(MatchArgs),
    /// Add a post-minus-pre outcome column to a CSV file.
    Difference(DifferenceArgs),
    /// Merge estimate JSON files into one table and overlaid histogram.
    Report(ReportArgs),
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub outcome_col: Option<String>,
    #[arg(long)]
    pub treatment_col: Option<String>,
    /// Comma-separated covariate column names.
    #[arg(long, value_delimiter = ',')]
    pub covariate_cols: Option<Vec<String>>,
}

#[derive(Debug, Args, Clone)]
pub struct PriorArgs {
    /// Normal prior mean for the treatment coefficient.
    #[arg(long, allow_hyphen_values = true)]
    pub prior_mean: Option<f64>,
    #[arg(long)]
    pub prior_sd: Option<f64>,
    /// Measure of faith k (≥ 1).
    #[arg(long)]
    pub faith_k: Option<f64>,
}

#[derive(Debug, Args, Clone)]
pub struct MatchFlags {
    #[arg(long)]
    pub ratio: Option<usize>,
    #[arg(long)]
    pub caliper: Option<f64>,
    #[arg(long)]
    pub with_replacement: bool,
    #[arg(long)]
    pub ps_degree: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Posterior refits per run (L = M).
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long = "resample-V")]
    pub resample_v: Option<usize>,
    #[command(flatten)]
    pub prior: PriorArgs,
    /// Run without prior mixing.
    #[arg(long)]
    pub no_prior: bool,
    /// Write one generated dataset to this CSV path and skip the study.
    #[arg(long)]
    pub emit_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated subset of or,ipw,dr,naive.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    #[command(flatten)]
    pub matching: MatchFlags,
    /// Estimate OR/IPW/DR on the full sample instead of the matched one.
    #[arg(long)]
    pub no_match: bool,
    #[command(flatten)]
    pub prior: PriorArgs,
    /// M: posterior refits and ATE samples.
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long = "resample-V")]
    pub resample_v: Option<usize>,
    /// B: frequentist bootstrap resamples (0 disables).
    #[arg(long)]
    pub freq_reps: Option<usize>,
    /// Polynomial degree of the outcome-model basis.
    #[arg(long)]
    pub degree: Option<usize>,
    /// Refit the propensity model inside every replicate.
    #[arg(long)]
    pub reestimate_ps: bool,
    /// Column whose mean converts ATEs to percentages.
    #[arg(long)]
    pub baseline_col: Option<String>,
    /// Keep the ATE samples in the JSON output.
    #[arg(long)]
    pub include_samples: bool,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub matching: MatchFlags,
}

#[derive(Debug, Args)]
pub struct DifferenceArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub pre_col: Option<String>,
    #[arg(long)]
    pub post_col: Option<String>,
    /// Name of the new column (default `y`).
    #[arg(long)]
    pub output_col: Option<String>,
    /// Output CSV (default `<out-dir>/differenced.csv`).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Estimate JSON files.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
