//! Needle-in-haystack long-context retrieval benchmark.

pub mod dataset;
pub mod eval;
pub mod probe;
pub mod template;

pub use dataset::{
    contains_subsequence, generate_needle_dataset, NeedleDataset, NeedleDatasetConfig,
    NeedleExample, PositionBucket,
};
pub use eval::{evaluate_needle, evaluate_predictions, NeedleCell, NeedleReport};
pub use probe::{pool_examples, train_needle_probe, NeedleProbe, NeedleProbeConfig};
pub use template::{desk_templates, FactTemplate, PatternToken};
