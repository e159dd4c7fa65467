//! Experiment specs, the runner and report/manifest emission.

pub mod manifest;
pub mod report;
pub mod runner;
pub mod spec;

pub use manifest::{sha256_hex, RunManifest};
pub use report::Reports;
pub use runner::{
    run_experiment, train_single, write_data_files, write_needle_files, ExperimentOutcome,
    PipelineKind,
};
pub use spec::{
    BudgetSpec, DataSpec, ExperimentKind, ExperimentSpec, FreezeRanges, NeedleSpec, ProbeSpec,
};
