//! Pre-norm transformer forward and hand-written backward.
//!
//! One architecture serves both objectives: the attention mask mode is a
//! per-call argument, never baked into the weights.

use super::config::ModelConfig;
use super::params::{fill_trunc_normal, seeded_rng, GradStore, ParamSet};
use super::rope::RopeTable;
use crate::error::{DetourError, Result};
use crate::numerics::ops::{
    gelu, gelu_backward, layer_norm, layer_norm_backward, matmul, matmul_at_b_into, matmul_bt,
    matmul_bt_into, softmax_in_place, LayerNormCache,
};
use crate::numerics::{Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Attention mask mode, fixed per forward call and switchable per phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AttentionMaskMode {
    /// Position i attends to positions <= i.
    Causal,
    /// Every position attends to every position.
    Bidirectional,
}

/// Per-layer hidden states captured at block outputs (embedding output at
/// index -1 via `embedding_output`).
#[derive(Debug, Clone)]
pub struct ActivationCache<E: Scalar> {
    pub embedding_output: Tensor<E>,
    pub block_outputs: Vec<Tensor<E>>,
}

struct BlockCache<E: Scalar> {
    ln1: LayerNormCache<E>,
    xn1: Tensor<E>,
    q_rot: Tensor<E>,
    k_rot: Tensor<E>,
    v: Tensor<E>,
    /// Per-head attention probabilities, rows softmaxed over the allowed range.
    probs: Vec<Tensor<E>>,
    ctx: Tensor<E>,
    attn_drop: Option<Tensor<E>>,
    ln2: LayerNormCache<E>,
    xn2: Tensor<E>,
    h_pre: Tensor<E>,
    h_act: Tensor<E>,
    mlp_drop: Option<Tensor<E>>,
}

/// Everything the backward pass needs from a training forward.
pub struct TrainCache<E: Scalar> {
    token_ids: Vec<u32>,
    mask_mode: AttentionMaskMode,
    rope: RopeTable<E>,
    blocks: Vec<BlockCache<E>>,
    final_ln: LayerNormCache<E>,
    /// Final-norm output feeding the tied LM head.
    xf: Tensor<E>,
}

/// A small pre-norm transformer with a tied input/output embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerModel<E: Scalar> {
    pub config: ModelConfig,
    pub params: ParamSet<E>,
}

/// Deterministic weight init: truncated normal for projections and
/// embeddings, identity layer norms.
pub fn init_model<E: Scalar>(config: &ModelConfig, seed: u64) -> Result<TransformerModel<E>> {
    config.validate()?;
    let mut rng = seeded_rng(seed);
    let mut params = ParamSet::zeros(config);
    fill_trunc_normal(&mut params.embed, config.init_std, &mut rng);
    for b in &mut params.blocks {
        b.ln1_gamma.fill(E::ONE);
        fill_trunc_normal(&mut b.wq, config.init_std, &mut rng);
        fill_trunc_normal(&mut b.wk, config.init_std, &mut rng);
        fill_trunc_normal(&mut b.wv, config.init_std, &mut rng);
        fill_trunc_normal(&mut b.wo, config.init_std, &mut rng);
        b.ln2_gamma.fill(E::ONE);
        fill_trunc_normal(&mut b.w1, config.init_std, &mut rng);
        fill_trunc_normal(&mut b.w2, config.init_std, &mut rng);
    }
    params.final_gamma.fill(E::ONE);
    Ok(TransformerModel {
        config: config.clone(),
        params,
    })
}

use crate::numerics::ops::dot_lanes as dot;

#[inline(always)]
fn axpy<E: Scalar>(alpha: E, x: &[E], y: &mut [E]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

fn gather_head<E: Scalar>(x: &Tensor<E>, h: usize, dh: usize) -> Tensor<E> {
    let rows = x.rows();
    let mut out = Tensor::zeros(&[rows, dh]);
    for r in 0..rows {
        out.row_mut(r).copy_from_slice(&x.row(r)[h * dh..(h + 1) * dh]);
    }
    out
}

/// Head slice transposed to `[dh x L]` so attention inner loops run over
/// the contiguous sequence axis.
fn gather_head_t<E: Scalar>(x: &Tensor<E>, h: usize, dh: usize) -> Tensor<E> {
    let rows = x.rows();
    let mut out = Tensor::zeros(&[dh, rows]);
    for r in 0..rows {
        let src = &x.row(r)[h * dh..(h + 1) * dh];
        for (c, &v) in src.iter().enumerate() {
            out.row_mut(c)[r] = v;
        }
    }
    out
}

fn scatter_head<E: Scalar>(dst: &mut Tensor<E>, src: &Tensor<E>, h: usize, dh: usize) {
    for r in 0..src.rows() {
        dst.row_mut(r)[h * dh..(h + 1) * dh].copy_from_slice(src.row(r));
    }
}

fn scatter_head_add<E: Scalar>(dst: &mut Tensor<E>, src: &Tensor<E>, h: usize, dh: usize) {
    for r in 0..src.rows() {
        axpy(E::ONE, src.row(r), &mut dst.row_mut(r)[h * dh..(h + 1) * dh]);
    }
}

/// Accumulate a `[dh x L]` transposed head buffer into `[L x d]` layout.
fn scatter_head_add_t<E: Scalar>(dst: &mut Tensor<E>, src_t: &Tensor<E>, h: usize, dh: usize) {
    let rows = dst.rows();
    for c in 0..dh {
        let srow = src_t.row(c);
        for r in 0..rows {
            dst.row_mut(r)[h * dh + c] += srow[r];
        }
    }
}

fn dropout_mask<E: Scalar>(shape: &[usize], rate: f64, rng: &mut ChaCha8Rng) -> Tensor<E> {
    let keep = E::from_f64(1.0 / (1.0 - rate));
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = if rng.gen::<f64>() < rate { E::ZERO } else { keep };
    }
    t
}

fn hadamard<E: Scalar>(a: &Tensor<E>, m: &Tensor<E>) -> Tensor<E> {
    let mut out = a.clone();
    for (o, &w) in out.data_mut().iter_mut().zip(m.data()) {
        *o *= w;
    }
    out
}

impl<E: Scalar> TransformerModel<E> {
    pub fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(DetourError::InvalidInput("forward: empty sequence".into()));
        }
        if ids.len() > self.config.max_seq_len {
            return Err(DetourError::InvalidInput(format!(
                "forward: sequence length {} exceeds max_seq_len {}",
                ids.len(),
                self.config.max_seq_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(DetourError::InvalidInput(format!(
                "forward: token id {} outside vocab {}",
                bad, self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Inference forward; dropout is never active. With `capture`, per-layer
    /// block outputs (plus the embedding output) are returned.
    pub fn forward(
        &self,
        ids: &[u32],
        mode: AttentionMaskMode,
        capture: bool,
    ) -> Result<(Tensor<E>, Option<ActivationCache<E>>)> {
        let (logits, act, _) = self.forward_inner(ids, mode, capture, false, None)?;
        Ok((logits, act))
    }

    /// Training forward: keeps the full backward cache; dropout is applied
    /// when an RNG is supplied and the configured rate is nonzero.
    pub fn forward_train(
        &self,
        ids: &[u32],
        mode: AttentionMaskMode,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor<E>, TrainCache<E>)> {
        let (logits, _, cache) = self.forward_inner(ids, mode, false, true, dropout_rng)?;
        Ok((logits, cache.expect("train cache requested")))
    }

    fn forward_inner(
        &self,
        ids: &[u32],
        mode: AttentionMaskMode,
        capture: bool,
        keep_train_cache: bool,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor<E>, Option<ActivationCache<E>>, Option<TrainCache<E>>)> {
        self.check_ids(ids)?;
        let cfg = &self.config;
        let (l, d) = (ids.len(), cfg.hidden_dim);
        let (heads, dh) = (cfg.n_heads, cfg.head_dim());
        let scale = E::from_f64(1.0 / (dh as f64).sqrt());
        let positions: Vec<usize> = (0..l).collect();
        let rope = RopeTable::new(&positions, dh, cfg.rope_base)?;

        // embedding lookup
        let mut x = Tensor::zeros(&[l, d]);
        for (i, &t) in ids.iter().enumerate() {
            x.row_mut(i).copy_from_slice(self.params.embed.row(t as usize));
        }

        let mut act = capture.then(|| ActivationCache {
            embedding_output: x.clone(),
            block_outputs: Vec::with_capacity(cfg.n_layers),
        });
        let mut blocks = keep_train_cache.then(Vec::new);

        for bp in &self.params.blocks {
            let (xn1, ln1) = layer_norm(&x, &bp.ln1_gamma, &bp.ln1_beta, E::from_f64(cfg.ln_eps))?;
            let q = matmul(&xn1, &bp.wq);
            let k = matmul(&xn1, &bp.wk);
            let v = matmul(&xn1, &bp.wv);
            let mut q_rot = q;
            let mut k_rot = k;
            rope.apply_in_place(&mut q_rot, heads, false);
            rope.apply_in_place(&mut k_rot, heads, false);

            let mut ctx = Tensor::zeros(&[l, d]);
            let mut probs_all = keep_train_cache.then(|| Vec::with_capacity(heads));
            for h in 0..heads {
                let qh = gather_head(&q_rot, h, dh);
                let kht = gather_head_t(&k_rot, h, dh);
                let vht = gather_head_t(&v, h, dh);
                let mut probs = Tensor::zeros(&[l, l]);
                let mut ctx_h = Tensor::zeros(&[l, dh]);
                for i in 0..l {
                    let lim = match mode {
                        AttentionMaskMode::Causal => i + 1,
                        AttentionMaskMode::Bidirectional => l,
                    };
                    let qrow = qh.row(i);
                    let prow = &mut probs.row_mut(i)[..lim];
                    for (c, &qv) in qrow.iter().enumerate() {
                        axpy(qv, &kht.row(c)[..lim], prow);
                    }
                    for p in prow.iter_mut() {
                        *p *= scale;
                    }
                    softmax_in_place(prow);
                    let crow = ctx_h.row_mut(i);
                    for (c, cv) in crow.iter_mut().enumerate() {
                        *cv = dot(prow, &vht.row(c)[..lim]);
                    }
                }
                scatter_head(&mut ctx, &ctx_h, h, dh);
                if let Some(ps) = probs_all.as_mut() {
                    ps.push(probs);
                }
            }

            let mut attn_out = matmul(&ctx, &bp.wo);
            let attn_drop = match (&mut dropout_rng, cfg.dropout_rate > 0.0) {
                (Some(rng), true) => {
                    let m = dropout_mask(&[l, d], cfg.dropout_rate, rng);
                    attn_out = hadamard(&attn_out, &m);
                    Some(m)
                }
                _ => None,
            };
            let mut x_attn = x.clone();
            x_attn.add_assign(&attn_out);

            let (xn2, ln2) =
                layer_norm(&x_attn, &bp.ln2_gamma, &bp.ln2_beta, E::from_f64(cfg.ln_eps))?;
            let h_pre = matmul(&xn2, &bp.w1);
            let h_act = gelu(&h_pre);
            let mut mlp_out = matmul(&h_act, &bp.w2);
            let mlp_drop = match (&mut dropout_rng, cfg.dropout_rate > 0.0) {
                (Some(rng), true) => {
                    let m = dropout_mask(&[l, d], cfg.dropout_rate, rng);
                    mlp_out = hadamard(&mlp_out, &m);
                    Some(m)
                }
                _ => None,
            };
            let mut x_out = x_attn;
            x_out.add_assign(&mlp_out);

            if let Some(a) = act.as_mut() {
                a.block_outputs.push(x_out.clone());
            }
            if let Some(bs) = blocks.as_mut() {
                bs.push(BlockCache {
                    ln1,
                    xn1,
                    q_rot,
                    k_rot,
                    v,
                    probs: probs_all.take().unwrap(),
                    ctx,
                    attn_drop,
                    ln2,
                    xn2,
                    h_pre,
                    h_act,
                    mlp_drop,
                });
            }
            x = x_out;
        }

        let (xf, final_ln) = layer_norm(
            &x,
            &self.params.final_gamma,
            &self.params.final_beta,
            E::from_f64(cfg.ln_eps),
        )?;
        // tied head: logits = xf · embedᵀ
        let logits = matmul_bt(&xf, &self.params.embed);

        let train_cache = blocks.map(|blocks| TrainCache {
            token_ids: ids.to_vec(),
            mask_mode: mode,
            rope,
            blocks,
            final_ln,
            xf,
        });
        Ok((logits, act, train_cache))
    }

    /// Backward from logit gradients to a full parameter gradient set.
    pub fn backward(&self, cache: &TrainCache<E>, dlogits: &Tensor<E>) -> GradStore<E> {
        let cfg = &self.config;
        let l = cache.token_ids.len();
        let d = cfg.hidden_dim;
        let (heads, dh) = (cfg.n_heads, cfg.head_dim());
        let scale = E::from_f64(1.0 / (dh as f64).sqrt());
        let mut g = GradStore::zeros(cfg);

        // tied head
        let mut dx = matmul(dlogits, &self.params.embed);
        matmul_at_b_into(dlogits, &cache.xf, &mut g.0.embed);

        // final norm
        {
            let (dxn, dgam, dbeta) =
                layer_norm_backward(&dx, &cache.final_ln, &self.params.final_gamma);
            g.0.final_gamma.add_assign(&dgam);
            g.0.final_beta.add_assign(&dbeta);
            dx = dxn;
        }

        for (li, bc) in cache.blocks.iter().enumerate().rev() {
            let bp = &self.params.blocks[li];
            let gb = &mut g.0.blocks[li];

            // MLP branch
            let d_mlp_out = match &bc.mlp_drop {
                Some(m) => hadamard(&dx, m),
                None => dx.clone(),
            };
            matmul_at_b_into(&bc.h_act, &d_mlp_out, &mut gb.w2);
            let d_h_act = matmul_bt(&d_mlp_out, &bp.w2);
            let d_h_pre = gelu_backward(&d_h_act, &bc.h_pre);
            matmul_at_b_into(&bc.xn2, &d_h_pre, &mut gb.w1);
            let d_xn2 = matmul_bt(&d_h_pre, &bp.w1);
            let (dx2, dgam2, dbeta2) = layer_norm_backward(&d_xn2, &bc.ln2, &bp.ln2_gamma);
            gb.ln2_gamma.add_assign(&dgam2);
            gb.ln2_beta.add_assign(&dbeta2);
            dx.add_assign(&dx2);

            // attention branch
            let d_attn_out = match &bc.attn_drop {
                Some(m) => hadamard(&dx, m),
                None => dx.clone(),
            };
            matmul_at_b_into(&bc.ctx, &d_attn_out, &mut gb.wo);
            let d_ctx = matmul_bt(&d_attn_out, &bp.wo);

            let mut d_q_rot = Tensor::zeros(&[l, d]);
            let mut d_k_rot = Tensor::zeros(&[l, d]);
            let mut d_v = Tensor::zeros(&[l, d]);
            for h in 0..heads {
                let qh = gather_head(&bc.q_rot, h, dh);
                let kht = gather_head_t(&bc.k_rot, h, dh);
                let vht = gather_head_t(&bc.v, h, dh);
                let d_ctx_h = gather_head(&d_ctx, h, dh);
                let probs = &bc.probs[h];
                let mut d_qh = Tensor::zeros(&[l, dh]);
                let mut d_kht = Tensor::zeros(&[dh, l]);
                let mut d_vht = Tensor::zeros(&[dh, l]);
                let mut dp = vec![E::ZERO; l];
                let mut ds = vec![E::ZERO; l];
                for i in 0..l {
                    let lim = match cache.mask_mode {
                        AttentionMaskMode::Causal => i + 1,
                        AttentionMaskMode::Bidirectional => l,
                    };
                    let prow = &probs.row(i)[..lim];
                    let dc = d_ctx_h.row(i);
                    // dp = d_ctx_i · Vᵀ over the allowed range
                    let dpl = &mut dp[..lim];
                    dpl.iter_mut().for_each(|v| *v = E::ZERO);
                    for (c, &dcv) in dc.iter().enumerate() {
                        axpy(dcv, &vht.row(c)[..lim], dpl);
                    }
                    let dot_p = dot(prow, dpl);
                    // softmax backward, then through the scaled dot
                    let dsl = &mut ds[..lim];
                    for ((s, &p), &dpv) in dsl.iter_mut().zip(prow).zip(dpl.iter()) {
                        *s = p * (dpv - dot_p) * scale;
                    }
                    for (c, &dcv) in dc.iter().enumerate() {
                        axpy(dcv, prow, &mut d_vht.row_mut(c)[..lim]);
                    }
                    let dq = d_qh.row_mut(i);
                    for (c, q) in dq.iter_mut().enumerate() {
                        *q = dot(dsl, &kht.row(c)[..lim]);
                    }
                    let qrow = qh.row(i);
                    for (c, &qv) in qrow.iter().enumerate() {
                        axpy(qv, dsl, &mut d_kht.row_mut(c)[..lim]);
                    }
                }
                scatter_head_add(&mut d_q_rot, &d_qh, h, dh);
                scatter_head_add_t(&mut d_k_rot, &d_kht, h, dh);
                scatter_head_add_t(&mut d_v, &d_vht, h, dh);
            }
            // rope backward is the inverse rotation
            cache.rope.apply_in_place(&mut d_q_rot, heads, true);
            cache.rope.apply_in_place(&mut d_k_rot, heads, true);
            let (d_q, d_k) = (d_q_rot, d_k_rot);

            matmul_at_b_into(&bc.xn1, &d_q, &mut gb.wq);
            matmul_at_b_into(&bc.xn1, &d_k, &mut gb.wk);
            matmul_at_b_into(&bc.xn1, &d_v, &mut gb.wv);
            let mut d_xn1 = matmul_bt(&d_q, &bp.wq);
            matmul_bt_into(&d_k, &bp.wk, &mut d_xn1);
            matmul_bt_into(&d_v, &bp.wv, &mut d_xn1);
            let (dx1, dgam1, dbeta1) = layer_norm_backward(&d_xn1, &bc.ln1, &bp.ln1_gamma);
            gb.ln1_gamma.add_assign(&dgam1);
            gb.ln1_beta.add_assign(&dbeta1);
            dx.add_assign(&dx1);
        }

        // embedding lookup backward
        for (i, &t) in cache.token_ids.iter().enumerate() {
            axpy(E::ONE, dx.row(i), g.0.embed.row_mut(t as usize));
        }
        g
    }

    /// Mean-pooled hidden states at one layer, in 64-bit.
    ///
    /// `layer` -1 addresses the embedding output; 0..n_layers-1 the block
    /// outputs. Trailing `pad_id` tokens are stripped before the forward, so
    /// the result is invariant to appended padding. Dropout is never active.
    pub fn extract_representations(
        &self,
        texts: &[Vec<u32>],
        layer: i32,
        mode: AttentionMaskMode,
        pad_id: u32,
    ) -> Result<Tensor<f64>> {
        if texts.is_empty() {
            return Err(DetourError::InvalidInput("extract: no texts".into()));
        }
        if layer < -1 || layer >= self.config.n_layers as i32 {
            return Err(DetourError::InvalidInput(format!(
                "extract: layer {} outside [-1, {})",
                layer, self.config.n_layers
            )));
        }
        let d = self.config.hidden_dim;
        let mut out = Tensor::zeros(&[texts.len(), d]);
        for (ti, text) in texts.iter().enumerate() {
            let end = text
                .iter()
                .rposition(|&t| t != pad_id)
                .map(|p| p + 1)
                .ok_or_else(|| {
                    DetourError::InvalidInput(format!("extract: text {} is all padding", ti))
                })?;
            let ids = &text[..end];
            let (_, act) = self.forward(ids, mode, true)?;
            let act = act.unwrap();
            let states = if layer < 0 {
                &act.embedding_output
            } else {
                &act.block_outputs[layer as usize]
            };
            let row = out.row_mut(ti);
            for r in 0..states.rows() {
                for (acc, &v) in row.iter_mut().zip(states.row(r)) {
                    *acc += v.to_f64();
                }
            }
            let inv = 1.0 / states.rows() as f64;
            for acc in row.iter_mut() {
                *acc *= inv;
            }
        }
        Ok(out)
    }

    /// Append a `<mask>` row to the tied embedding. All existing parameters
    /// carry over bit-identically; the new row is freshly initialized.
    pub fn extend_vocab_with_mask(&self, seed: u64) -> Result<TransformerModel<E>> {
        if self.config.mask_token_id.is_some() {
            return Err(DetourError::InvalidInput(
                "extend_vocab_with_mask: model already has a mask token".into(),
            ));
        }
        let old_v = self.config.vocab_size;
        let d = self.config.hidden_dim;
        let mut new_row = Tensor::zeros(&[1, d]);
        let mut rng = seeded_rng(seed);
        fill_trunc_normal(&mut new_row, self.config.init_std, &mut rng);

        let mut config = self.config.clone();
        config.vocab_size = old_v + 1;
        config.mask_token_id = Some(old_v as u32);

        let mut params = self.params.clone();
        let mut embed = Tensor::zeros(&[old_v + 1, d]);
        embed.data_mut()[..old_v * d].copy_from_slice(self.params.embed.data());
        embed.row_mut(old_v).copy_from_slice(new_row.row(0));
        params.embed = embed;
        Ok(TransformerModel { config, params })
    }
}
