//! Objectives, losses and the single-phase training loop.
//!
//! Two independent RNG streams keep the seed-noise control constructible:
//! document order is fixed by the data seed that built the stream, while
//! masking and dropout derive from the per-run seed only.

use super::adamw::OptimizerState;
use super::freeze::{apply_freeze, FreezeSpec};
use super::metrics::MetricsRecord;
use super::schedule::{lr_at, Schedule};
use crate::data::{
    apply_mlm_masking, make_clm_batch, CausalBatch, MaskedBatch, MaskingScheme, PackedSequence,
    VocabLayout,
};
use crate::error::{DetourError, Result};
use crate::model::{AttentionMaskMode, GradStore, TransformerModel};
use crate::numerics::ops::cross_entropy_with_grad_sums;
use crate::numerics::Scalar;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    Clm,
    Mlm,
}

impl Objective {
    /// The attention mask mode this objective requires.
    pub fn required_mode(&self) -> AttentionMaskMode {
        match self {
            Objective::Clm => AttentionMaskMode::Causal,
            Objective::Mlm => AttentionMaskMode::Bidirectional,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub objective: Objective,
    pub mask_mode: AttentionMaskMode,
    /// Tokens consumed by this phase; must be a multiple of the window.
    pub token_budget: u64,
    /// MLM masking rate; ignored for CLM phases.
    pub mask_rate: f64,
    pub schedule: Schedule,
    pub freeze: Option<FreezeSpec>,
    pub peak_lr: f64,
}

impl PhaseConfig {
    pub fn validate(&self, window: usize, n_layers: usize) -> Result<()> {
        if self.mask_mode != self.objective.required_mode() {
            return Err(DetourError::InvalidConfig(format!(
                "{:?} requires {:?} attention",
                self.objective,
                self.objective.required_mode()
            )));
        }
        if self.token_budget == 0 {
            return Err(DetourError::InvalidConfig("token_budget must be > 0".into()));
        }
        if self.token_budget % window as u64 != 0 {
            return Err(DetourError::InvalidConfig(format!(
                "token_budget {} not a multiple of window {}",
                self.token_budget, window
            )));
        }
        if self.objective == Objective::Mlm && !(0.0 < self.mask_rate && self.mask_rate <= 1.0) {
            return Err(DetourError::InvalidConfig(format!(
                "MLM mask_rate {} outside (0, 1]",
                self.mask_rate
            )));
        }
        if self.peak_lr <= 0.0 {
            return Err(DetourError::InvalidConfig("peak_lr must be > 0".into()));
        }
        if let Some(f) = &self.freeze {
            f.validate(n_layers)?;
        }
        Ok(())
    }
}

/// A finite supply of packed windows in a fixed (data-seeded) order.
#[derive(Debug, Clone)]
pub struct TokenStream {
    seqs: Vec<PackedSequence>,
    cursor: usize,
    window: usize,
}

impl TokenStream {
    pub fn new(seqs: Vec<PackedSequence>) -> Result<Self> {
        let window = seqs
            .first()
            .map(|s| s.window())
            .ok_or_else(|| DetourError::InvalidInput("empty token stream".into()))?;
        if seqs.iter().any(|s| s.window() != window) {
            return Err(DetourError::InvalidInput(
                "token stream windows are not uniform".into(),
            ));
        }
        Ok(TokenStream {
            seqs,
            cursor: 0,
            window,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn remaining_tokens(&self) -> u64 {
        ((self.seqs.len() - self.cursor) * self.window) as u64
    }

    fn take(&mut self, n: usize) -> Result<&[PackedSequence]> {
        if self.cursor + n > self.seqs.len() {
            return Err(DetourError::InvalidInput(format!(
                "token stream exhausted: need {} more windows, {} left",
                n,
                self.seqs.len() - self.cursor
            )));
        }
        let out = &self.seqs[self.cursor..self.cursor + n];
        self.cursor += n;
        Ok(out)
    }
}

/// Deterministic seed mixing for derived RNG streams.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        let mut z = p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        h = h.rotate_left(13) ^ z;
    }
    h
}

fn batch_loss_and_grads<E: Scalar>(
    model: &TransformerModel<E>,
    inputs: &[Vec<u32>],
    targets: &[Vec<u32>],
    mask: &[Vec<bool>],
    mode: AttentionMaskMode,
    dropout_seeds: Option<&[u64]>,
) -> Result<(f64, GradStore<E>)> {
    let per_seq_counts: Vec<usize> = mask
        .iter()
        .map(|m| m.iter().filter(|&&b| b).count())
        .collect();
    let total_count: usize = per_seq_counts.iter().sum();
    if total_count == 0 {
        return Err(DetourError::EmptySupervision);
    }
    // sequences without a single supervised position contribute nothing
    let per_seq: Vec<Result<Option<(f64, GradStore<E>)>>> = (0..inputs.len())
        .into_par_iter()
        .map(|si| {
            if per_seq_counts[si] == 0 {
                return Ok(None);
            }
            let mut rng = dropout_seeds.map(|s| ChaCha8Rng::seed_from_u64(s[si]));
            let (logits, cache) = model.forward_train(&inputs[si], mode, rng.as_mut())?;
            let (loss_sum, _, dlogits) = cross_entropy_with_grad_sums(
                &logits,
                &targets[si],
                &mask[si],
                Some(total_count),
            )?;
            Ok(Some((loss_sum, model.backward(&cache, &dlogits))))
        })
        .collect();
    // fixed-order reduction keeps the result identical for any thread count
    let mut loss_sum = 0.0f64;
    let mut grads: Option<GradStore<E>> = None;
    for r in per_seq {
        let Some((l, g)) = r? else { continue };
        loss_sum += l;
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => acc.0.add_assign(&g.0),
        }
    }
    Ok((loss_sum / total_count as f64, grads.unwrap()))
}

use rand::SeedableRng;

/// Next-token loss and gradients over a causal batch.
pub fn clm_loss<E: Scalar>(
    model: &TransformerModel<E>,
    batch: &CausalBatch,
    mode: AttentionMaskMode,
) -> Result<(f64, GradStore<E>)> {
    if mode != AttentionMaskMode::Causal {
        return Err(DetourError::InvalidInput(
            "clm_loss requires the causal mask mode".into(),
        ));
    }
    batch_loss_and_grads(
        model,
        &batch.input_ids,
        &batch.target_ids,
        &batch.supervision_mask,
        mode,
        None,
    )
}

/// Masked-token loss and gradients over an MLM batch.
pub fn mlm_loss<E: Scalar>(
    model: &TransformerModel<E>,
    batch: &MaskedBatch,
    mode: AttentionMaskMode,
) -> Result<(f64, GradStore<E>)> {
    if mode != AttentionMaskMode::Bidirectional {
        return Err(DetourError::InvalidInput(
            "mlm_loss requires the bidirectional mask mode".into(),
        ));
    }
    batch_loss_and_grads(
        model,
        &batch.input_ids,
        &batch.target_ids,
        &batch.supervision_mask,
        mode,
        None,
    )
}

/// Settings shared by every phase of a run.
#[derive(Debug, Clone)]
pub struct TrainContext<'a> {
    pub vocab: &'a VocabLayout,
    pub batch_sequences: usize,
    /// Emit a metrics record every this many steps (the last step always logs).
    pub metrics_every: u64,
    pub masking_scheme: MaskingScheme,
    pub phase_index: usize,
    pub run_seed: u64,
}

/// Train for exactly `phase.token_budget` tokens from the stream.
///
/// Deterministic in (stream order, run seed); the scheduler clock starts at
/// zero, the optimizer state is whatever the caller hands in.
pub fn train_phase<E: Scalar>(
    model: &mut TransformerModel<E>,
    opt: &mut OptimizerState<E>,
    phase: &PhaseConfig,
    stream: &mut TokenStream,
    ctx: &TrainContext,
) -> Result<Vec<MetricsRecord>> {
    let window = stream.window();
    phase.validate(window, model.config.n_layers)?;
    if model.config.max_seq_len < window {
        return Err(DetourError::InvalidConfig(format!(
            "window {} exceeds model max_seq_len {}",
            window, model.config.max_seq_len
        )));
    }
    if stream.remaining_tokens() < phase.token_budget {
        return Err(DetourError::InvalidInput(format!(
            "stream has {} tokens, phase needs {}",
            stream.remaining_tokens(),
            phase.token_budget
        )));
    }
    let start = std::time::Instant::now();
    let mut metrics = Vec::new();
    let mut consumed = 0u64;
    let mut step = 0u64;
    let batch_tokens = (ctx.batch_sequences * window) as u64;
    let mut vocab = ctx.vocab.clone();
    vocab.mask_id = model.config.mask_token_id;

    while consumed < phase.token_budget {
        let remaining = phase.token_budget - consumed;
        let n_seqs = (remaining.min(batch_tokens) / window as u64) as usize;
        let seqs = stream.take(n_seqs)?.to_vec();
        let lr = lr_at(&phase.schedule, consumed, phase.token_budget, phase.peak_lr)?;

        let dropout_seeds: Vec<u64> = (0..n_seqs)
            .map(|si| mix_seed(&[ctx.run_seed, ctx.phase_index as u64, step, si as u64, 0xD0]))
            .collect();
        let step_err = |e: crate::error::DetourError| {
            crate::error::DetourError::InvalidInput(format!(
                "phase {} step {}: {}",
                ctx.phase_index, step, e
            ))
        };
        let (loss, mut grads) = match phase.objective {
            Objective::Clm => {
                let batch = make_clm_batch(&seqs)?;
                batch_loss_and_grads(
                    model,
                    &batch.input_ids,
                    &batch.target_ids,
                    &batch.supervision_mask,
                    phase.mask_mode,
                    Some(&dropout_seeds),
                )
                .map_err(step_err)?
            }
            Objective::Mlm => {
                let mut mask_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                    ctx.run_seed,
                    ctx.phase_index as u64,
                    step,
                    0xA5,
                ]));
                let batch = apply_mlm_masking(
                    &seqs,
                    phase.mask_rate,
                    &vocab,
                    ctx.masking_scheme,
                    &mut mask_rng,
                )
                .map_err(step_err)?;
                batch_loss_and_grads(
                    model,
                    &batch.input_ids,
                    &batch.target_ids,
                    &batch.supervision_mask,
                    phase.mask_mode,
                    Some(&dropout_seeds),
                )
                .map_err(step_err)?
            }
        };
        if let Some(freeze) = &phase.freeze {
            apply_freeze(&mut grads, freeze)?;
        }
        opt.step(model, &grads, lr, phase.freeze.as_ref())?;
        consumed += (n_seqs * window) as u64;
        step += 1;
        let last = consumed >= phase.token_budget;
        if step % ctx.metrics_every == 0 || last {
            metrics.push(MetricsRecord {
                phase: ctx.phase_index,
                step,
                tokens: consumed,
                loss,
                lr,
                wall_secs: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(metrics)
}
