// SPDX-License-Identifier: MIT OR Apache-2.0

//! Simulation scenarios, Monte-Carlo replicates and accuracy metrics.

pub mod metrics;
pub mod run;
pub mod scenario;

pub use metrics::{
    acceptance_intervals, estimation_metrics, hausdorff_distance, tpcp_metrics, BreakOutcome, EstimationMetrics,
    TpcpMetrics,
};
pub use run::{
    mean_std, median, replicate_seeds, run_replicate, run_scenario, scenario_options, summarize, BreakSummary,
    CountHistogram, EvalReport, MeanStd, ReplicateFailure, ScenarioSummary,
};
pub use scenario::{builtin, equally_spaced, generate, Family, Generated, PrecisionLaw, ScenarioSpec, SupportRule, ValueLaw, BUILTIN_SCENARIOS};
