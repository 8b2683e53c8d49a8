// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line arguments. Every flag can also be set through a `TBFL_`
//! environment variable.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tbfl::pipeline::BlockSize;

use crate::io::ModelArg;

#[derive(Debug, Parser)]
#[command(name = "tbfl", version, about = "Change-point detection with the threshold block fused lasso")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect change points in a CSV dataset.
    Detect(DetectArgs),
    /// Choose the block size by HBIC and report the winning detection.
    SelectBlockSize(SelectArgs),
    /// Run Monte-Carlo replicates of a simulation scenario.
    Simulate(SimulateArgs),
}

/// `auto` or a positive integer.
pub fn parse_block_size(s: &str) -> Result<BlockSize, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(BlockSize::Auto);
    }
    s.parse::<usize>()
        .map(BlockSize::Fixed)
        .map_err(|_| format!("expected a positive integer or \"auto\", got {s:?}"))
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    #[arg(long, value_enum, default_value = "mean", env = "TBFL_MODEL")]
    pub model: ModelArg,
    /// Input CSV file(s) with a header row; regression accepts predictors and responses as two files.
    #[arg(long, required = true, num_args = 1..=2, value_delimiter = ',', env = "TBFL_INPUT")]
    pub input: Vec<PathBuf>,
    /// Lag order for the lagged model.
    #[arg(long, default_value_t = 1, env = "TBFL_LAG")]
    pub lag: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TuningArgs {
    /// HBIC penalty multiplier.
    #[arg(long, default_value_t = tbfl::block_select::DEFAULT_GAMMA, env = "TBFL_GAMMA")]
    pub gamma: f64,
    /// Comma-separated fusion penalties (default: a log grid from the data).
    #[arg(long, value_delimiter = ',', env = "TBFL_LAMBDA1_GRID")]
    pub lambda1_grid: Option<Vec<f64>>,
    /// Comma-separated sparsity penalties (default: a log grid from the data).
    #[arg(long, value_delimiter = ',', env = "TBFL_LAMBDA2_GRID")]
    pub lambda2_grid: Option<Vec<f64>>,
    /// Length of the first and last blocks.
    #[arg(long, env = "TBFL_BOUNDARY_BLOCK_SIZE")]
    pub boundary_block_size: Option<usize>,
    /// Candidate block sizes for automatic selection, comma-separated.
    #[arg(long, value_delimiter = ',', env = "TBFL_SEARCH_DOMAIN")]
    pub search_domain: Option<Vec<usize>>,
    #[arg(long, env = "TBFL_TOL")]
    pub tol: Option<f64>,
    #[arg(long, env = "TBFL_MAX_ITER")]
    pub max_iter: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "TBFL_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Report path (default: standard output).
    #[arg(long, env = "TBFL_OUTPUT")]
    pub output: Option<PathBuf>,
    /// Include full coefficient and precision matrices.
    #[arg(long, env = "TBFL_FULL_MATRICES")]
    pub full_matrices: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[command(flatten)]
    pub out: OutputArgs,
    /// Block size, or "auto" for HBIC selection.
    #[arg(long, default_value = "auto", value_parser = parse_block_size, env = "TBFL_BLOCK_SIZE")]
    pub block_size: BlockSize,
    #[arg(long, default_value_t = 0, env = "TBFL_SEED")]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[command(flatten)]
    pub out: OutputArgs,
    #[arg(long, default_value_t = 0, env = "TBFL_SEED")]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Built-in scenario: g, null, a, b2, c1, c1-half, c4, d1, d2, d3.
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec", env = "TBFL_SCENARIO")]
    pub scenario: Option<String>,
    /// JSON scenario specification file.
    #[arg(long, env = "TBFL_SPEC")]
    pub spec: Option<PathBuf>,
    /// Number of true change points for scenario `a`.
    #[arg(long, env = "TBFL_M0")]
    pub m0: Option<usize>,
    #[arg(long, default_value_t = 100, env = "TBFL_REPS")]
    pub reps: usize,
    /// Master seed (overrides the seed of a spec file).
    #[arg(long, env = "TBFL_SEED")]
    pub seed: Option<u64>,
    /// Override the scenario's block size ("auto" for HBIC selection).
    #[arg(long, value_parser = parse_block_size, env = "TBFL_BLOCK_SIZE")]
    pub block_size: Option<BlockSize>,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[arg(long, env = "TBFL_OUTPUT")]
    pub output: Option<PathBuf>,
}
