//! Objective-specific batch construction from packed windows.

use super::pack::PackedSequence;
use super::vocab::VocabLayout;
use crate::error::{DetourError, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// How selected MLM positions are corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MaskingScheme {
    /// Pure mask-token replacement (default).
    MaskOnly,
    /// BERT-style 80% mask / 10% random token / 10% keep.
    Bert801010,
}

impl Default for MaskingScheme {
    fn default() -> Self {
        MaskingScheme::MaskOnly
    }
}

/// Masked-language-modeling batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    pub input_ids: Vec<Vec<u32>>,
    pub target_ids: Vec<Vec<u32>>,
    pub supervision_mask: Vec<Vec<bool>>,
    pub mask_rate: f64,
}

impl MaskedBatch {
    pub fn supervised_count(&self) -> usize {
        self.supervision_mask
            .iter()
            .map(|row| row.iter().filter(|&&m| m).count())
            .sum()
    }
}

/// Causal-language-modeling batch: targets are inputs shifted left by one,
/// every position except the last is supervised.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalBatch {
    pub input_ids: Vec<Vec<u32>>,
    pub target_ids: Vec<Vec<u32>>,
    pub supervision_mask: Vec<Vec<bool>>,
}

impl CausalBatch {
    pub fn supervised_count(&self) -> usize {
        self.supervision_mask
            .iter()
            .map(|row| row.iter().filter(|&&m| m).count())
            .sum()
    }
}

/// Mask each maskable (non-EOS, non-pad) position independently with
/// probability `rate`; masked inputs are replaced per `scheme`.
pub fn apply_mlm_masking(
    seqs: &[PackedSequence],
    rate: f64,
    vocab: &VocabLayout,
    scheme: MaskingScheme,
    rng: &mut ChaCha8Rng,
) -> Result<MaskedBatch> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(DetourError::InvalidInput(format!(
            "mask rate {} outside [0, 1]",
            rate
        )));
    }
    let mask_id = vocab.mask_id.ok_or_else(|| {
        DetourError::InvalidInput("apply_mlm_masking: vocabulary has no mask token".into())
    })?;
    let mut input_ids = Vec::with_capacity(seqs.len());
    let mut target_ids = Vec::with_capacity(seqs.len());
    let mut supervision = Vec::with_capacity(seqs.len());
    let mut maskable_total = 0usize;
    for seq in seqs {
        let mut inputs = seq.tokens.clone();
        let targets = seq.tokens.clone();
        let mut mask = vec![false; seq.tokens.len()];
        for (i, t) in seq.tokens.iter().enumerate() {
            if *t == vocab.eos_id || *t == vocab.pad_id {
                continue;
            }
            maskable_total += 1;
            if rate > 0.0 && rng.gen::<f64>() < rate {
                mask[i] = true;
                inputs[i] = match scheme {
                    MaskingScheme::MaskOnly => mask_id,
                    MaskingScheme::Bert801010 => {
                        let r: f64 = rng.gen();
                        if r < 0.8 {
                            mask_id
                        } else if r < 0.9 {
                            random_content_token(vocab, rng)
                        } else {
                            inputs[i]
                        }
                    }
                };
            }
        }
        input_ids.push(inputs);
        target_ids.push(targets);
        supervision.push(mask);
    }
    if rate > 0.0 && maskable_total == 0 {
        return Err(DetourError::InvalidInput(
            "apply_mlm_masking: no maskable positions".into(),
        ));
    }
    Ok(MaskedBatch {
        input_ids,
        target_ids,
        supervision_mask: supervision,
        mask_rate: rate,
    })
}

fn random_content_token(vocab: &VocabLayout, rng: &mut ChaCha8Rng) -> u32 {
    // any non-special token
    let lo = 3u32;
    let hi = vocab.vocab_size as u32;
    rng.gen_range(lo..hi)
}

/// Shift-by-one causal batch over packed windows.
pub fn make_clm_batch(seqs: &[PackedSequence]) -> Result<CausalBatch> {
    let mut input_ids = Vec::with_capacity(seqs.len());
    let mut target_ids = Vec::with_capacity(seqs.len());
    let mut supervision = Vec::with_capacity(seqs.len());
    for seq in seqs {
        let l = seq.tokens.len();
        if l < 2 {
            return Err(DetourError::InvalidInput(
                "make_clm_batch: window must be >= 2".into(),
            ));
        }
        let mut targets = seq.tokens[1..].to_vec();
        // last position has no next token; target is a placeholder and
        // supervision excludes it
        targets.push(seq.tokens[l - 1]);
        let mut mask = vec![true; l];
        mask[l - 1] = false;
        input_ids.push(seq.tokens.clone());
        target_ids.push(targets);
        supervision.push(mask);
    }
    Ok(CausalBatch {
        input_ids,
        target_ids,
        supervision_mask: supervision,
    })
}
