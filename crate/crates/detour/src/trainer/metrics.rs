//! Training metrics records (one JSON object per line on disk).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub phase: usize,
    pub step: u64,
    /// Cumulative tokens consumed within the phase.
    pub tokens: u64,
    pub loss: f64,
    pub lr: f64,
    pub wall_secs: f64,
}
