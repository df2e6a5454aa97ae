//! Command-line flags. Every struct serializes so the run manifest can echo
//! the resolved configuration.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use spatial_aft::model::{Family, ModelTag};
use spatial_aft::sampler::HmcConfig;
use spatial_aft::topology::{GridSpec, Relabeling};

#[derive(Debug, Parser, Serialize)]
#[command(name = "spatial-aft", version, about = "Dual-spatial AFT survival models fitted by HMC")]
pub struct Cli {
    /// Worker threads for chains and replications (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output directory (default: runs/<timestamp>-seed<seed>).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Generate synthetic datasets, or run a recovery study with --study.
    Simulate(SimulateArgs),
    /// Fit one model and write draws plus diagnostics.
    Fit(FitArgs),
    /// Summarize a draws file.
    Summarize(SummarizeArgs),
    /// Kaplan-Meier curves and the log-rank test by stratum.
    Km(KmArgs),
    /// Log marginal likelihoods and Bayes factors across models.
    Compare(CompareArgs),
    /// Minimum-eigenvalue sweep of correlation matrices over a parameter grid.
    ValidateKernel(ValidateKernelArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaKind {
    Gpu,
    Generic,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    Euclidean,
    Torus,
}

/// Where the data come from and how units map onto the grid.
#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// Input CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "gpu")]
    pub schema: SchemaKind,
    /// JSON column-role descriptor for the generic schema.
    #[arg(long)]
    pub descriptor: Option<PathBuf>,
    /// Grid as ROWSxCOLS.
    #[arg(long)]
    pub grid: GridSpec,
    #[arg(long, default_value = "folded")]
    pub relabeling: Relabeling,
    /// Keep only records whose `batch` column equals this value.
    #[arg(long)]
    pub filter_batch: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct SamplerArgs {
    #[arg(long, default_value_t = 4000)]
    pub warmup: usize,
    #[arg(long, default_value_t = 4000)]
    pub draws: usize,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub target_accept: f64,
    #[arg(long, default_value_t = 64)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
}

impl SamplerArgs {
    pub fn hmc(&self) -> HmcConfig {
        HmcConfig {
            n_warmup: self.warmup,
            n_draws: self.draws,
            n_chains: self.chains,
            seed: self.seed,
            target_accept: self.target_accept,
            max_leapfrog_steps: self.max_steps,
            thin: self.thin,
            ..HmcConfig::default()
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value = "5x5")]
    pub grid: GridSpec,
    #[arg(long, default_value_t = 52)]
    pub replicates: usize,
    /// Target censoring rate.
    #[arg(long, default_value_t = 0.5)]
    pub censoring: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "lognormal")]
    pub family: Family,
    #[arg(long, default_value = "folded")]
    pub relabeling: Relabeling,
    /// JSON file of generating parameter values (default: built-in truth).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Number of independent datasets.
    #[arg(long, default_value_t = 1)]
    pub datasets: usize,

    /// Fit M2 to every dataset and report RMSE and coverage.
    #[arg(long)]
    pub study: bool,
    /// Study grids, comma separated (default: --grid).
    #[arg(long, value_delimiter = ',')]
    pub grids: Vec<GridSpec>,
    /// Study replicate counts, comma separated (default: --replicates).
    #[arg(long, value_delimiter = ',')]
    pub replicate_counts: Vec<usize>,
    /// Prior preset name or JSON file for study fits.
    #[arg(long, default_value = "simulation")]
    pub priors: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1000)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "m2")]
    pub model: ModelTag,
    #[arg(long, default_value = "lognormal")]
    pub family: Family,
    /// Prior preset name or JSON file.
    #[arg(long, default_value = "analysis")]
    pub priors: String,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Exit with status 5 when any R-hat exceeds 1.1.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SummarizeArgs {
    /// Draws CSV written by `fit`.
    #[arg(long)]
    pub draws: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Largest row and column distance of the correlation grids.
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 10])]
    pub max_distance: Vec<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct KmArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Column whose values define the strata.
    #[arg(long, default_value = "cage")]
    pub strata: String,
    #[arg(long, default_value = "time")]
    pub time_col: String,
    #[arg(long, default_value = "event")]
    pub event_col: String,
    #[arg(long)]
    pub filter_batch: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "m0,m1,m2")]
    pub models: Vec<ModelTag>,
    #[arg(long, default_value = "lognormal")]
    pub family: Family,
    #[arg(long, default_value = "analysis")]
    pub priors: String,
    /// Number of stepping-stone ratios.
    #[arg(long, default_value_t = 32)]
    pub rungs: usize,
    /// Temperatures are (k / rungs)^exponent.
    #[arg(long, default_value_t = 5.0)]
    pub exponent: f64,
    /// Warmup for the first tempered rung.
    #[arg(long, default_value_t = 500)]
    pub warmup: usize,
    /// Warmup for each later, warm-started rung.
    #[arg(long, default_value_t = 150)]
    pub rung_warmup: usize,
    /// Draws per chain and rung.
    #[arg(long, default_value_t = 250)]
    pub draws: usize,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub max_steps: usize,
    /// Exit with status 5 when any estimate is flagged unreliable.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateKernelArgs {
    #[arg(long, default_value = "10x10")]
    pub grid: GridSpec,
    #[arg(long, value_enum, default_value = "torus")]
    pub topology: TopologyKind,
    /// Shape values, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 0.75, 1.0])]
    pub kappa: Vec<f64>,
    /// Length scales used for both directions, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.5, 1.0, 2.0, 5.0])]
    pub nu: Vec<f64>,
    #[arg(long, default_value = "folded")]
    pub relabeling: Relabeling,
}
