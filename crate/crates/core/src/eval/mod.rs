// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment runner, metrics and parameter sweeps.

mod bench;
mod experiment;
mod metrics;
mod sweep;

pub use bench::{Benchmark, MultiLayerOutcome};
pub use experiment::{
    run_experiment, run_experiment_with, ExperimentData, ExperimentOutcome, ExperimentSpec, LayerPaths, LayerSets,
};
pub use metrics::{auroc, compute_metrics, truncate_1dp, Confusion, EvalReport, ScoredSample};
pub use sweep::{sweep, SweepParam, SweepRow, SweepTable, SWEEP_HEADER};
