// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use tbfl::block_select::{select_block_size_with, HbicConfig};
use tbfl::evalsim::{builtin, run_replicate, summarize, ScenarioSpec, ScenarioSummary};
use tbfl::pipeline::{detect_with_block_size, BlockSize, DetectOptions, DetectionResult};
use tbfl::solver::SolverOptions;
use tbfl::Dataset;

use crate::args::{Cli, Command, DetectArgs, SelectArgs, SimulateArgs, TuningArgs};
use crate::error::CliError;
use crate::io::read_dataset;
use crate::report::{write_report, DetectReport, SimulateReport, Timing};

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Detect(a) => cmd_detect(a),
        Command::SelectBlockSize(a) => cmd_select(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {threads:?} worker threads: {e}")))
}

/// Pipeline options from the shared tuning flags.
pub fn detect_options(t: &TuningArgs, block_size: BlockSize, seed: u64) -> Result<DetectOptions, CliError> {
    if t.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let defaults = SolverOptions::default();
    let solver = SolverOptions {
        tol: t.tol.unwrap_or(defaults.tol),
        max_iter: t.max_iter.unwrap_or(defaults.max_iter),
    };
    solver.validate()?;
    Ok(DetectOptions {
        block_size,
        boundary_block_size: t.boundary_block_size,
        lambda1_grid: t.lambda1_grid.clone(),
        lambda2_grid: t.lambda2_grid.clone(),
        solver,
        gamma: t.gamma,
        search_domain: t.search_domain.clone(),
        seed,
    })
}

/// Detection with block sizes evaluated concurrently when selected automatically.
pub fn detect_parallel(
    dataset: &Dataset,
    options: &DetectOptions,
    pool: &rayon::ThreadPool,
) -> Result<DetectionResult, CliError> {
    let result = match options.block_size {
        BlockSize::Fixed(b) => detect_with_block_size(dataset, b, options)?,
        BlockSize::Auto => {
            let config = HbicConfig {
                gamma: options.gamma,
                domain: options.search_domain.clone(),
            };
            let evaluate = |domain: &[usize]| {
                let mut sizes = domain.to_vec();
                sizes.sort_unstable();
                sizes.dedup();
                pool.install(|| {
                    sizes
                        .par_iter()
                        .map(|&b| (b, detect_with_block_size(dataset, b, options)))
                        .collect()
                })
            };
            select_block_size_with(dataset, &config, evaluate)?.1
        }
    };
    Ok(result)
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), CliError> {
    match output {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn detect_report(
    command: &str,
    args_input: &crate::args::InputArgs,
    options: &DetectOptions,
    threads: Option<usize>,
    full_matrices: bool,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let started_at = now_unix();
    let clock = Instant::now();
    let dataset = read_dataset(&args_input.input, args_input.model, args_input.lag)?;
    let read_seconds = clock.elapsed().as_secs_f64();
    let workers = pool(threads)?;
    let result = detect_parallel(&dataset, options, &workers)?;
    let total_seconds = clock.elapsed().as_secs_f64();
    let timing = Timing {
        started_at,
        read_seconds,
        compute_seconds: total_seconds - read_seconds,
        total_seconds,
    };
    let report = DetectReport::new(command, args_input.model, &dataset, &result, full_matrices, timing);
    emit(output, &write_report(&report))
}

fn cmd_detect(a: DetectArgs) -> Result<(), CliError> {
    let options = detect_options(&a.tuning, a.block_size, a.seed)?;
    detect_report("detect", &a.input, &options, a.tuning.threads, a.out.full_matrices, a.out.output.as_deref())
}

fn cmd_select(a: SelectArgs) -> Result<(), CliError> {
    let options = detect_options(&a.tuning, BlockSize::Auto, a.seed)?;
    detect_report(
        "select-block-size",
        &a.input,
        &options,
        a.tuning.threads,
        a.out.full_matrices,
        a.out.output.as_deref(),
    )
}

/// The scenario named on the command line, with overrides applied.
pub fn resolve_scenario(a: &SimulateArgs) -> Result<ScenarioSpec, CliError> {
    let mut spec = match (&a.scenario, &a.spec) {
        (Some(id), _) => builtin(id, a.m0, a.seed.unwrap_or(0))?,
        (None, Some(path)) => read_spec(path)?,
        (None, None) => return Err(CliError::Usage("either --scenario or --spec is required".into())),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    match a.block_size {
        Some(BlockSize::Fixed(b)) => spec.block_size = Some(b),
        Some(BlockSize::Auto) => spec.block_size = None,
        None => {}
    }
    if a.tuning.boundary_block_size.is_some() {
        spec.boundary_block_size = a.tuning.boundary_block_size;
    }
    if a.tuning.search_domain.is_some() {
        spec.search_domain = a.tuning.search_domain.clone();
    }
    spec.validate()?;
    Ok(spec)
}

fn read_spec(path: &PathBuf) -> Result<ScenarioSpec, CliError> {
    if !path.exists() {
        return Err(CliError::InputNotFound(path.clone()));
    }
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Format {
        path: path.clone(),
        message: format!("invalid scenario specification: {e}"),
    })
}

/// Run the replicates on `threads` workers. Outcomes are collected in
/// replicate order, so the summary does not depend on scheduling.
pub fn simulate(spec: &ScenarioSpec, reps: usize, base: &DetectOptions, threads: Option<usize>) -> Result<ScenarioSummary, CliError> {
    if reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let workers = pool(threads)?;
    let outcomes = workers.install(|| (0..reps).into_par_iter().map(|r| run_replicate(spec, r, base)).collect());
    Ok(summarize(spec, outcomes))
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), CliError> {
    let started_at = now_unix();
    let clock = Instant::now();
    if a.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let spec = resolve_scenario(&a)?;
    let base = detect_options(&a.tuning, BlockSize::Auto, 0)?;
    let read_seconds = clock.elapsed().as_secs_f64();
    let summary = simulate(&spec, a.reps, &base, a.tuning.threads)?;
    let total_seconds = clock.elapsed().as_secs_f64();
    let report = SimulateReport {
        command: "simulate".into(),
        reps: a.reps,
        scenario: spec,
        summary,
        timing: Timing {
            started_at,
            read_seconds,
            compute_seconds: total_seconds - read_seconds,
            total_seconds,
        },
    };
    emit(a.output.as_deref(), &write_report(&report))
}
