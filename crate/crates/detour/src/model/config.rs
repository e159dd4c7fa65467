//! Model hyperparameters.

use crate::error::{DetourError, Result};
use serde::{Deserialize, Serialize};

/// Architecture and initialization hyperparameters.
///
/// The same architecture serves CLM and MLM; only the attention mask mode
/// and the loss differ between phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub rope_base: f64,
    /// Dropout rate, active only while training.
    pub dropout_rate: f64,
    /// Std of the truncated-normal weight init.
    pub init_std: f64,
    /// Layer-norm epsilon.
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f64,
    /// Id of the `<mask>` token, when the vocabulary has one.
    #[serde(default)]
    pub mask_token_id: Option<u32>,
}

fn default_ln_eps() -> f64 {
    1e-5
}

impl ModelConfig {
    /// Desk-scale default: 8 layers, hidden 64, 4 heads, vocab 512, window 256.
    pub fn desk_default() -> Self {
        ModelConfig {
            n_layers: 8,
            hidden_dim: 64,
            n_heads: 4,
            vocab_size: 512,
            max_seq_len: 256,
            rope_base: 10_000.0,
            dropout_rate: 0.1,
            init_std: 0.02,
            ln_eps: 1e-5,
            mask_token_id: Some(2),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(DetourError::InvalidConfig("n_layers must be >= 1".into()));
        }
        if self.hidden_dim == 0 || self.hidden_dim % self.n_heads != 0 {
            return Err(DetourError::InvalidConfig(format!(
                "hidden_dim {} must be a positive multiple of n_heads {}",
                self.hidden_dim, self.n_heads
            )));
        }
        if self.head_dim() % 2 != 0 {
            return Err(DetourError::InvalidConfig(format!(
                "head_dim {} must be even for rotary embeddings",
                self.head_dim()
            )));
        }
        if self.max_seq_len < 2 {
            return Err(DetourError::InvalidConfig("max_seq_len must be >= 2".into()));
        }
        // pad, eos, mask and at least one content token
        if self.vocab_size < 4 {
            return Err(DetourError::InvalidConfig("vocab_size must be >= 4".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(DetourError::InvalidConfig(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.rope_base <= 0.0 {
            return Err(DetourError::InvalidConfig("rope_base must be > 0".into()));
        }
        if self.init_std < 0.0 {
            return Err(DetourError::InvalidConfig("init_std must be >= 0".into()));
        }
        if self.ln_eps <= 0.0 {
            return Err(DetourError::InvalidConfig("ln_eps must be > 0".into()));
        }
        if let Some(m) = self.mask_token_id {
            if m as usize >= self.vocab_size {
                return Err(DetourError::InvalidConfig(format!(
                    "mask_token_id {} outside vocab {}",
                    m, self.vocab_size
                )));
            }
        }
        Ok(())
    }
}
