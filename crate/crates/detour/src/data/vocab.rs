//! Synthetic vocabulary layout.
//!
//! Fixed special ids (`pad`=0, `eos`=1, mask=2 when present) followed by
//! disjoint content pools: needle-template tokens, grammar field markers and
//! slot values, each with a shared and a domain-exclusive half.

use crate::error::{DetourError, Result};
use serde::{Deserialize, Serialize};
use std::ops::Range;

pub const PAD_ID: u32 = 0;
pub const EOS_ID: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabLayout {
    pub vocab_size: usize,
    pub pad_id: u32,
    pub eos_id: u32,
    /// `Some(2)` for encoder-style vocabularies; `None` for decoder-style
    /// models that gain a mask token only at an objective switch.
    pub mask_id: Option<u32>,
    /// Markers for the needle fact templates; never emitted by the corpus
    /// grammar, so a fact can only occur in a haystack by insertion.
    pub needle_markers: Range<u32>,
    /// Slot-value lexicon pool for needle facts.
    pub needle_values: Range<u32>,
    pub markers_shared: Range<u32>,
    pub markers_exclusive: Range<u32>,
    pub values_shared: Range<u32>,
    pub values_exclusive: Range<u32>,
}

impl VocabLayout {
    /// Standard encoder layout with a mask token at id 2.
    pub fn encoder(vocab_size: usize) -> Result<Self> {
        Self::build(vocab_size, true)
    }

    /// Decoder layout: same pools, no mask token (id 2 stays unused so that
    /// ids are stable across the two layouts).
    pub fn decoder(vocab_size: usize) -> Result<Self> {
        Self::build(vocab_size, false)
    }

    fn build(vocab_size: usize, with_mask: bool) -> Result<Self> {
        if vocab_size < 128 {
            return Err(DetourError::InvalidConfig(format!(
                "vocab_size {} too small for the synthetic layout (need >= 128)",
                vocab_size
            )));
        }
        let content_start = 3u32;
        let needle_markers = content_start..content_start + 32;
        let needle_values = needle_markers.end..needle_markers.end + 40;
        let rest = vocab_size as u32 - needle_values.end;
        let marker_pool = (rest / 8).max(8);
        let markers_shared = needle_values.end..needle_values.end + marker_pool / 2;
        let markers_exclusive = markers_shared.end..markers_shared.end + marker_pool / 2;
        let value_pool = vocab_size as u32 - markers_exclusive.end;
        let values_shared = markers_exclusive.end..markers_exclusive.end + value_pool / 2;
        let values_exclusive = values_shared.end..vocab_size as u32;
        Ok(VocabLayout {
            vocab_size,
            pad_id: PAD_ID,
            eos_id: EOS_ID,
            mask_id: with_mask.then_some(2),
            needle_markers,
            needle_values,
            markers_shared,
            markers_exclusive,
            values_shared,
            values_exclusive,
        })
    }

    /// Human-readable name for a token id, used by the vocab file.
    pub fn token_name(&self, id: u32) -> String {
        if id == self.pad_id {
            return "<pad>".into();
        }
        if id == self.eos_id {
            return "<eos>".into();
        }
        if Some(id) == self.mask_id {
            return "<mask>".into();
        }
        if self.needle_markers.contains(&id) {
            return format!("nm{:02}", id - self.needle_markers.start);
        }
        if self.needle_values.contains(&id) {
            return format!("nv{:02}", id - self.needle_values.start);
        }
        if self.markers_shared.contains(&id) {
            return format!("ms{:02}", id - self.markers_shared.start);
        }
        if self.markers_exclusive.contains(&id) {
            return format!("mx{:02}", id - self.markers_exclusive.start);
        }
        if self.values_shared.contains(&id) {
            return format!("vs{:03}", id - self.values_shared.start);
        }
        if self.values_exclusive.contains(&id) {
            return format!("vx{:03}", id - self.values_exclusive.start);
        }
        format!("tok{}", id)
    }
}
