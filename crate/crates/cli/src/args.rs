use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pafmsm::{Estimand, Estimator, TiePolicy};

#[derive(Debug, Parser)]
#[command(name = "pafmsm", version, about = "Population-attributable fractions for hospital event-history data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a cohort CSV against the schema and report adjusted rows.
    Validate(InputArgs),
    /// Counts by exposure status and outcome.
    Summary(InputArgs),
    /// PAF curve for one estimand and estimator.
    Estimate(EstimateArgs),
    /// PAF curve with a pointwise percentile bootstrap band.
    Bootstrap(BootstrapArgs),
    /// Cox hazard ratios for the time-dependent exposure.
    Cox(CoxArgs),
    /// Simulate a cohort from a hazard specification.
    Simulate(SimulateArgs),
    /// Analytic curves of a hazard specification.
    Oracle(OracleArgs),
    /// Run the estimator equivalence checks on a cohort.
    Check(InputArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Cohort CSV: id,inf_time,end_time,end_status[,covariates...]
    #[arg(long)]
    pub input: PathBuf,

    /// `reject` or `shift:<eps>` for exposures recorded at the terminal time.
    #[arg(long, default_value = "shift")]
    pub tie_policy: TiePolicy,

    /// Output directory; results go to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Grid {
    /// Integer days 1..ceil(tau).
    Days,
    /// Jump times of the estimate.
    Jumps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Weights {
    Nonparametric,
    Logistic,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: InputArgs,

    #[arg(long)]
    pub estimand: Estimand,

    #[arg(long, default_value = "multistate")]
    pub estimator: Estimator,

    #[arg(long, value_enum, default_value_t = Grid::Days)]
    pub grid: Grid,

    /// Report the estimate at this time only.
    #[arg(long)]
    pub at: Option<f64>,

    /// Exposure model for the ipw estimator; logistic when covariates are given.
    #[arg(long, value_enum)]
    pub weights: Option<Weights>,

    /// Baseline covariates of the logistic exposure model.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,

    /// Drop censored subjects for the daily-panel estimators.
    #[arg(long)]
    pub allow_drop_censored: bool,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub estimate: EstimateArgs,

    /// Number of bootstrap replicates.
    #[arg(long = "B", visible_alias = "replicates")]
    pub replicates: usize,

    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CoxArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// Baseline covariates added to the exposure term.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,

    /// Also regress the post-exposure hazards on the exposure time.
    #[arg(long)]
    pub markov_test: bool,
}

#[derive(Debug, Args)]
pub struct SpecArgs {
    /// Hazard specification JSON.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub input: Option<PathBuf>,

    /// Built-in specification: constant, decreasing-discharge or harmful-exposure.
    #[arg(long)]
    pub preset: Option<String>,

    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub spec: SpecArgs,

    /// Number of subjects.
    #[arg(long)]
    pub n: usize,

    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub spec: SpecArgs,

    /// Evaluate at this time only instead of every day up to the horizon.
    #[arg(long)]
    pub at: Option<f64>,
}
