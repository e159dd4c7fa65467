//! Templated synthetic facts for the needle-in-haystack protocol.

use crate::data::VocabLayout;
use crate::error::{DetourError, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatternToken {
    /// Fixed marker token.
    Marker(u32),
    /// Slot index into `slot_lexicons`.
    Slot(usize),
}

/// A fact template: marker tokens interleaved with 2-4 slots, each slot
/// filled from a small lexicon. Distinct fillings yield distinct token
/// sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactTemplate {
    pub id: usize,
    pub pattern: Vec<PatternToken>,
    pub slot_lexicons: Vec<Vec<u32>>,
}

impl FactTemplate {
    pub fn n_slots(&self) -> usize {
        self.slot_lexicons.len()
    }

    pub fn len(&self) -> usize {
        self.pattern.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pattern.is_empty()
    }

    /// Expand the pattern with one lexicon choice per slot.
    pub fn instantiate(&self, fill: &[usize]) -> Result<Vec<u32>> {
        if fill.len() != self.n_slots() {
            return Err(DetourError::InvalidInput(format!(
                "template {}: {} slots, {} fills",
                self.id,
                self.n_slots(),
                fill.len()
            )));
        }
        self.pattern
            .iter()
            .map(|p| match p {
                PatternToken::Marker(t) => Ok(*t),
                PatternToken::Slot(s) => {
                    self.slot_lexicons[*s].get(fill[*s]).copied().ok_or_else(|| {
                        DetourError::InvalidInput(format!(
                            "template {}: fill {} outside lexicon {}",
                            self.id, fill[*s], s
                        ))
                    })
                }
            })
            .collect()
    }

    pub fn random_fill(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        self.slot_lexicons
            .iter()
            .map(|lex| rng.gen_range(0..lex.len()))
            .collect()
    }

    /// A fill differing from `fill` in at least one slot.
    pub fn distractor_fill(&self, fill: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = fill.to_vec();
        // re-draw one slot to a guaranteed different value
        let slot = rng.gen_range(0..self.n_slots());
        let lex_len = self.slot_lexicons[slot].len();
        let shift = rng.gen_range(1..lex_len);
        out[slot] = (fill[slot] + shift) % lex_len;
        // remaining slots may or may not change
        for (s, v) in out.iter_mut().enumerate() {
            if s != slot && rng.gen::<f64>() < 0.5 {
                *v = rng.gen_range(0..self.slot_lexicons[s].len());
            }
        }
        out
    }
}

/// The eight desk fact templates over the reserved needle token pools.
/// Template markers never occur in corpus text, so a fact sequence can only
/// appear in a haystack through insertion.
pub fn desk_templates(vocab: &VocabLayout) -> Result<Vec<FactTemplate>> {
    let markers: Vec<u32> = vocab.needle_markers.clone().collect();
    let values: Vec<u32> = vocab.needle_values.clone().collect();
    if markers.len() < 32 || values.len() < 40 {
        return Err(DetourError::InvalidConfig(
            "vocab lacks needle token pools".into(),
        ));
    }
    let lex_chunk = values.len() / 4;
    let lexicons: Vec<Vec<u32>> = (0..4)
        .map(|j| values[j * lex_chunk..(j + 1) * lex_chunk].to_vec())
        .collect();
    let mut out = Vec::with_capacity(8);
    for id in 0..8 {
        let n_slots = 2 + id % 3; // 2, 3 or 4 slots
        let tpl_markers = &markers[id * 4..id * 4 + 4];
        let mut pattern = Vec::with_capacity(2 * n_slots);
        let mut slot_lexicons = Vec::with_capacity(n_slots);
        for s in 0..n_slots {
            pattern.push(PatternToken::Marker(tpl_markers[s % 4]));
            pattern.push(PatternToken::Slot(s));
            slot_lexicons.push(lexicons[(id + s) % 4].clone());
        }
        out.push(FactTemplate {
            id,
            pattern,
            slot_lexicons,
        });
    }
    Ok(out)
}
