//! Objectives, optimizer, schedules, freeze interventions and pipelines.

pub mod adamw;
pub mod freeze;
pub mod metrics;
pub mod phase;
pub mod pipeline;
pub mod schedule;

pub use adamw::{AdamHyperparams, OptimizerState};
pub use freeze::{apply_freeze, FreezeSpec};
pub use metrics::MetricsRecord;
pub use phase::{clm_loss, mix_seed, mlm_loss, train_phase, Objective, PhaseConfig, TokenStream, TrainContext};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineOutcome, PipelineSettings, RunSettings};
pub use schedule::{lr_at, Schedule};
