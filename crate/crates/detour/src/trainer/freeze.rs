//! Layer-freeze interventions: a contiguous block of layers has its
//! gradients zeroed after each backward pass and is skipped by the optimizer,
//! so parameters and moments stay bit-identical across the frozen phase.
//! Embeddings, head and final norm are never frozen.

use crate::error::{DetourError, Result};
use crate::model::{GradStore, ParamId};
use crate::numerics::Scalar;
use serde::{Deserialize, Serialize};

/// Inclusive layer range `[lo, hi]`; `hi < lo` denotes the empty range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeSpec {
    pub lo: usize,
    pub hi: usize,
}

impl FreezeSpec {
    pub fn new(lo: usize, hi: usize) -> Self {
        FreezeSpec { lo, hi }
    }

    pub fn empty() -> Self {
        FreezeSpec { lo: 1, hi: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }

    pub fn contains(&self, layer: usize) -> bool {
        self.lo <= layer && layer <= self.hi
    }

    pub fn covers(&self, id: ParamId) -> bool {
        id.block_index().map_or(false, |l| self.contains(l))
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if !self.is_empty() && self.hi >= n_layers {
            return Err(DetourError::InvalidInput(format!(
                "freeze range [{}, {}] outside {} layers",
                self.lo, self.hi, n_layers
            )));
        }
        Ok(())
    }
}

/// Zero every gradient entry of the frozen layers; all others untouched.
pub fn apply_freeze<E: Scalar>(grads: &mut GradStore<E>, spec: &FreezeSpec) -> Result<()> {
    spec.validate(grads.0.blocks.len())?;
    for (id, t) in grads.0.fields_mut() {
        if spec.covers(id) {
            t.fill(E::ZERO);
        }
    }
    Ok(())
}
