//! Bucketed needle evaluation: binary accuracy per (length, position) cell.

use super::dataset::{NeedleExample, PositionBucket};
use super::probe::{pool_examples, NeedleProbe};
use crate::error::{DetourError, Result};
use crate::model::{AttentionMaskMode, TransformerModel};
use crate::numerics::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleCell {
    pub length: usize,
    pub position: PositionBucket,
    pub correct: usize,
    pub total: usize,
}

impl NeedleCell {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleReport {
    pub cells: Vec<NeedleCell>,
    pub overall_correct: usize,
    pub overall_total: usize,
}

impl NeedleReport {
    pub fn overall_accuracy(&self) -> f64 {
        self.overall_correct as f64 / self.overall_total as f64
    }

    pub fn cell(&self, length: usize, position: PositionBucket) -> Option<&NeedleCell> {
        self.cells
            .iter()
            .find(|c| c.length == length && c.position == position)
    }
}

/// Score per-example predictions into the bucketed report.
pub fn evaluate_predictions(examples: &[NeedleExample], preds: &[bool]) -> Result<NeedleReport> {
    if examples.is_empty() {
        return Err(DetourError::InvalidInput("needle eval: no examples".into()));
    }
    if preds.len() != examples.len() {
        return Err(DetourError::ShapeMismatch(format!(
            "needle eval: {} examples, {} predictions",
            examples.len(),
            preds.len()
        )));
    }
    let mut cells: Vec<NeedleCell> = Vec::new();
    let mut overall_correct = 0usize;
    for (e, &p) in examples.iter().zip(preds) {
        let hit = p == e.present;
        overall_correct += hit as usize;
        match cells
            .iter_mut()
            .find(|c| c.length == e.length_bucket && c.position == e.position)
        {
            Some(c) => {
                c.total += 1;
                c.correct += hit as usize;
            }
            None => cells.push(NeedleCell {
                length: e.length_bucket,
                position: e.position,
                correct: hit as usize,
                total: 1,
            }),
        }
    }
    if cells.iter().any(|c| c.total == 0) {
        return Err(DetourError::InvalidInput("needle eval: empty cell".into()));
    }
    cells.sort_by_key(|c| (c.length, c.position.name()));
    Ok(NeedleReport {
        cells,
        overall_correct,
        overall_total: examples.len(),
    })
}

/// Run the probe over the frozen encoder's pooled test representations.
pub fn evaluate_needle<E: Scalar>(
    probe: &NeedleProbe,
    encoder: &TransformerModel<E>,
    test: &[NeedleExample],
    mode: AttentionMaskMode,
    eos_id: u32,
    pad_id: u32,
) -> Result<NeedleReport> {
    if test.is_empty() {
        return Err(DetourError::InvalidInput("needle eval: empty test split".into()));
    }
    let feats = pool_examples(encoder, test, probe.layer, mode, eos_id, pad_id)?;
    let preds: Vec<bool> = (0..feats.rows()).map(|r| probe.predict(feats.row(r))).collect();
    evaluate_predictions(test, &preds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn examples() -> Vec<NeedleExample> {
        let mut out = Vec::new();
        for &len in &[32usize, 64] {
            for pos in [PositionBucket::Start, PositionBucket::End] {
                for i in 0..10 {
                    out.push(NeedleExample {
                        haystack: vec![5; len - 9],
                        inserted: vec![3, 4],
                        query: vec![3, 4],
                        present: i % 2 == 0,
                        length_bucket: len,
                        position: pos,
                    });
                }
            }
        }
        out
    }

    #[test]
    fn oracle_predictions_score_one_everywhere() {
        let ex = examples();
        let preds: Vec<bool> = ex.iter().map(|e| e.present).collect();
        let report = evaluate_predictions(&ex, &preds).unwrap();
        assert_eq!(report.overall_accuracy(), 1.0);
        for c in &report.cells {
            assert_eq!(c.accuracy(), 1.0);
        }
    }

    #[test]
    fn constant_predictions_score_half_on_balanced_cells() {
        let ex = examples();
        let preds = vec![true; ex.len()];
        let report = evaluate_predictions(&ex, &preds).unwrap();
        for c in &report.cells {
            assert_eq!(c.accuracy(), 0.5);
        }
        assert_eq!(report.overall_accuracy(), 0.5);
    }

    #[test]
    fn cell_accuracies_aggregate_to_overall() {
        let ex = examples();
        // arbitrary deterministic predictions
        let preds: Vec<bool> = (0..ex.len()).map(|i| i % 3 == 0).collect();
        let report = evaluate_predictions(&ex, &preds).unwrap();
        let sum_correct: usize = report.cells.iter().map(|c| c.correct).sum();
        let sum_total: usize = report.cells.iter().map(|c| c.total).sum();
        assert_eq!(sum_correct, report.overall_correct);
        assert_eq!(sum_total, report.overall_total);
    }

    #[test]
    fn empty_inputs_error() {
        assert!(evaluate_predictions(&[], &[]).is_err());
        let ex = examples();
        assert!(evaluate_predictions(&ex, &vec![true; 3]).is_err());
    }
}
