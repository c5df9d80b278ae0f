use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "otcf",
    version,
    about = "Counterfactual treatment effects via optimal transport"
)]
pub struct Cli {
    /// Master seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (defaults to all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// key=value file supplying defaults for any long option.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw a dataset from the Gaussian SEM and write its analytic curves.
    Simulate(SimulateArgs),
    /// Fit a transport map between the control and treated covariates.
    Transport(TransportArgs),
    /// Match control rows to treated rows.
    Match(MatchArgs),
    /// Estimate a CATE curve.
    Cate(CateArgs),
    /// Bootstrap bands around a CATE curve.
    Bootstrap(BootstrapArgs),
    /// Re-estimate a curve on subsamples of increasing size.
    Stability(StabilityArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Reference,
    Homogeneous,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Mediator correlation in both arms.
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Input data and its column mapping.
#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Outcome column (default `y`).
    #[arg(long)]
    pub outcome: Option<String>,
    /// Treatment column (default `t`).
    #[arg(long)]
    pub treatment: Option<String>,
    /// Covariate columns (default: every other header column).
    #[arg(long)]
    pub covariates: Option<String>,
    /// Roles per covariate, `m` (mediator) or `c` (collider).
    #[arg(long)]
    pub roles: Option<String>,
    #[arg(long)]
    pub delimiter: Option<String>,
    /// Treatment label map such as `yes:1,no:0,unknown:drop`.
    #[arg(long)]
    pub labels: Option<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransportMethod {
    Quantile,
    Gaussian,
    Coupling,
}

#[derive(Args, Debug)]
pub struct TransportArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub method: Option<TransportMethod>,
    /// Comma-separated covariate names (default: all mediators).
    #[arg(long)]
    pub columns: Option<String>,
    /// Grid per column: `lo:hi:n` or a comma list; repeat for each column.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Vec<String>,
    /// Allow collider columns in fitted maps and oversize couplings.
    #[arg(long)]
    pub force: bool,
    /// Rescale cost columns to unit variance before coupling.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchMethod {
    Greedy,
    Optimal,
}

#[derive(Args, Debug)]
pub struct MatchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub method: Option<MatchMethod>,
    #[arg(long)]
    pub columns: Option<String>,
    #[arg(long)]
    pub force: bool,
    /// Rescale matching columns to unit variance first.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorKind {
    IpwKernel,
    IpwKnn,
    Matched,
    Coupled,
    ScateQuantile,
    ScateQuantileGaussian,
    Qcate,
    ScateGaussian,
    ScateGaussianMarginal,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutcomeModel {
    Kernel,
    Knn,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Features {
    Linear,
    Quadratic,
}

/// Estimator choice and hyperparameters.
#[derive(Args, Debug, Clone, Default)]
pub struct EstimatorArgs {
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorKind>,
    /// Covariate names the estimator works on.
    #[arg(long)]
    pub columns: Option<String>,
    /// For the marginal Gaussian curve: the mediator on the x axis.
    #[arg(long)]
    pub along: Option<String>,
    /// Outcome regression used by the transport estimators.
    #[arg(long, value_enum)]
    pub outcome_model: Option<OutcomeModel>,
    /// `auto`, one bandwidth, or one per column.
    #[arg(long)]
    pub bandwidth: Option<String>,
    /// Neighbor count for k-NN smoothers and matched/coupled curves.
    #[arg(long)]
    pub k: Option<usize>,
    /// Propensity covariates; empty for the intercept-only model.
    #[arg(long)]
    pub propensity_columns: Option<String>,
    #[arg(long, value_enum)]
    pub propensity_features: Option<Features>,
    #[arg(long, value_enum)]
    pub pairing: Option<MatchMethod>,
    /// Gauss-Hermite nodes per integrated dimension.
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Vec<String>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct CateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Rows per replicate (default: full sample).
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Comma-separated subsample sizes.
    #[arg(long)]
    pub sizes: Option<String>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
