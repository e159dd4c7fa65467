//! Decoupled AdamW over the model's parameter set.

use super::freeze::FreezeSpec;
use crate::error::{DetourError, Result};
use crate::model::{GradStore, ModelConfig, ParamSet, TransformerModel};
use crate::numerics::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyperparams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Bias correction of the moment estimates (default on).
    pub bias_correction: bool,
    /// Global-norm gradient clipping threshold; 0 disables (default off).
    pub grad_clip: f64,
}

impl Default for AdamHyperparams {
    fn default() -> Self {
        AdamHyperparams {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 1e-5,
            bias_correction: true,
            grad_clip: 0.0,
        }
    }
}

/// First/second moments plus the step counter; carried across phase
/// boundaries, never reset by the scheduler.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<E: Scalar> {
    pub m: ParamSet<E>,
    pub v: ParamSet<E>,
    pub step: u64,
    pub hp: AdamHyperparams,
}

impl<E: Scalar> OptimizerState<E> {
    pub fn new(config: &ModelConfig, hp: AdamHyperparams) -> Self {
        OptimizerState {
            m: ParamSet::zeros(config),
            v: ParamSet::zeros(config),
            step: 0,
            hp,
        }
    }

    /// One AdamW step. Parameters of layers covered by `frozen` are skipped
    /// entirely: their values and moments stay bit-identical.
    pub fn step(
        &mut self,
        model: &mut TransformerModel<E>,
        grads: &GradStore<E>,
        lr: f64,
        frozen: Option<&FreezeSpec>,
    ) -> Result<()> {
        grads.check_finite().map_err(|e| {
            DetourError::NonFinite(format!("adamw_step: {} at step {}", e, self.step + 1))
        })?;
        let clip_scale = self.clip_scale(grads);
        self.step += 1;
        let t = self.step;
        let hp = self.hp;
        let (c1, c2) = if hp.bias_correction {
            (
                1.0 - hp.beta1.powi(t as i32),
                1.0 - hp.beta2.powi(t as i32),
            )
        } else {
            (1.0, 1.0)
        };
        let b1 = E::from_f64(hp.beta1);
        let b1c = E::from_f64(1.0 - hp.beta1);
        let b2 = E::from_f64(hp.beta2);
        let b2c = E::from_f64(1.0 - hp.beta2);
        let inv_c1 = E::from_f64(1.0 / c1);
        let inv_c2 = E::from_f64(1.0 / c2);
        let lr_e = E::from_f64(lr);
        let eps = E::from_f64(hp.eps);
        let decay = E::from_f64(lr * hp.weight_decay);
        let clip = E::from_f64(clip_scale);

        let gs = grads.0.fields();
        let ms = self.m.fields_mut();
        let vs = self.v.fields_mut();
        let ps = model.params.fields_mut();
        for ((((pid, p), (_, g)), (_, m)), (_, v)) in
            ps.into_iter().zip(gs).zip(ms).zip(vs)
        {
            if frozen.map_or(false, |f| f.covers(pid)) {
                continue;
            }
            for i in 0..p.len() {
                let gi = g.data()[i] * clip;
                let mi = b1 * m.data()[i] + b1c * gi;
                let vi = b2 * v.data()[i] + b2c * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi * inv_c1;
                let vhat = vi * inv_c2;
                let pi = p.data()[i];
                p.data_mut()[i] = pi - lr_e * (mhat / (vhat.sqrt() + eps)) - decay * pi;
            }
        }
        Ok(())
    }

    fn clip_scale(&self, grads: &GradStore<E>) -> f64 {
        if self.hp.grad_clip <= 0.0 {
            return 1.0;
        }
        let mut sq = 0.0f64;
        for (_, t) in grads.0.fields() {
            for &g in t.data() {
                let g = g.to_f64();
                sq += g * g;
            }
        }
        let norm = sq.sqrt();
        if norm > self.hp.grad_clip {
            self.hp.grad_clip / norm
        } else {
            1.0
        }
    }

    /// Grow the embedding moments by `n` zero rows after a vocab extension.
    pub fn extend_embed_rows(&mut self, n: usize) {
        for set in [&mut self.m, &mut self.v] {
            let old = &set.embed;
            let d = old.cols();
            let rows = old.rows();
            let mut grown = Tensor::zeros(&[rows + n, d]);
            grown.data_mut()[..rows * d].copy_from_slice(old.data());
            set.embed = grown;
        }
    }
}
