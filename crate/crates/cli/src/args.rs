use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hicorr_core::{Method, UvcPolicy, VDenominator};

#[derive(Debug, Parser)]
#[command(
    name = "hicorr",
    version,
    about = "Correlations between latent higher-level variables"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    /// Master seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads; 1 gives the bit-exact reference path.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Report unique-variable counts and check the unique-variable condition.
    Validate {
        #[arg(long)]
        binding: PathBuf,
    },
    /// Direct covariance and correlation estimates.
    Estimate {
        #[command(flatten)]
        input: InputArgs,
        /// Also write the shrinkage estimate.
        #[arg(long)]
        shrink: bool,
        #[command(flatten)]
        shrink_args: ShrinkArgs,
        #[arg(long, default_value = "mixed")]
        v_denominator: VDenominator,
    },
    /// Pairwise threshold tests on the direct estimate.
    Infer {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        test: TestArgs,
    },
    /// Positive-definite shrinkage of the direct estimate.
    Shrink {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        shrink_args: ShrinkArgs,
        #[arg(long, default_value = "mixed")]
        v_denominator: VDenominator,
    },
    /// Aggregation baselines: per-sample scores and their correlations.
    Aggregate {
        #[command(flatten)]
        input: InputArgs,
        /// Comma-separated methods; default all.
        #[arg(long, value_delimiter = ',')]
        method: Vec<Method>,
    },
    /// Direct method and baselines side by side on one data set.
    Compare {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        test: TestArgs,
        #[arg(long, value_delimiter = ',')]
        method: Vec<Method>,
    },
    /// Monte Carlo study from a key = value config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override the number of replications in the config.
        #[arg(long)]
        reps: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Sample table: one row per sample, one column per lower-level variable.
    #[arg(long)]
    pub data: PathBuf,
    /// Dense 0/1 table or sparse `lower,higher` list.
    #[arg(long)]
    pub binding: PathBuf,
    /// Subtract column means (default).
    #[arg(long, overrides_with = "no_center")]
    pub center: bool,
    #[arg(long = "no-center", overrides_with = "center")]
    pub no_center: bool,
    #[arg(long, default_value = "strict")]
    pub uvc: UvcPolicy,
}

impl InputArgs {
    pub fn centered(&self) -> bool {
        !self.no_center
    }
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// Threshold for the null |r| <= xi.
    #[arg(long, default_value_t = 0.0)]
    pub xi: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value = "mixed")]
    pub v_denominator: VDenominator,
}

#[derive(Debug, Args)]
pub struct ShrinkArgs {
    /// A positive number, or `cv` to cross-validate over the grid.
    #[arg(long, default_value = "cv")]
    pub kappa: String,
    #[arg(long, value_delimiter = ',')]
    pub cv_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = hicorr_core::shrinkage::DEFAULT_CV_SPLITS)]
    pub cv_splits: usize,
    #[arg(long, default_value_t = hicorr_core::shrinkage::DEFAULT_SPLIT_RATIO)]
    pub split_ratio: f64,
}
