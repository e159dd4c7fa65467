//! The shared encoder/decoder-mode transformer and its parameter plumbing.

pub mod config;
pub mod forward;
pub mod params;
pub mod rope;

pub use config::ModelConfig;
pub use forward::{init_model, ActivationCache, AttentionMaskMode, TrainCache, TransformerModel};
pub use params::{BlockField, BlockParams, GradStore, ParamId, ParamSet};
pub use rope::apply_rope;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ops::{cross_entropy, cross_entropy_with_grad};
    use crate::numerics::{grad_check, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            hidden_dim: 8,
            n_heads: 2,
            vocab_size: 12,
            max_seq_len: 16,
            rope_base: 10_000.0,
            dropout_rate: 0.0,
            init_std: 0.15,
            ln_eps: 1e-5,
            mask_token_id: None,
        }
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let cfg = ModelConfig::desk_default();
        let a = init_model::<f32>(&cfg, 99).unwrap();
        let b = init_model::<f32>(&cfg, 99).unwrap();
        assert_eq!(a.params, b.params);
        let c = init_model::<f32>(&cfg, 100).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn zero_init_std_gives_constant_logits() {
        let mut cfg = tiny_config();
        cfg.init_std = 0.0;
        let m = init_model::<f64>(&cfg, 1).unwrap();
        let (logits, _) = m
            .forward(&[3, 7, 1, 9], AttentionMaskMode::Bidirectional, false)
            .unwrap();
        // all projections zero: every position's logits are identical
        for r in 1..logits.rows() {
            assert_eq!(logits.row(r), logits.row(0));
        }
    }

    #[test]
    fn length_one_modes_agree_bitwise() {
        let m = init_model::<f32>(&tiny_config(), 3).unwrap();
        let (a, _) = m.forward(&[5], AttentionMaskMode::Causal, false).unwrap();
        let (b, _) = m
            .forward(&[5], AttentionMaskMode::Bidirectional, false)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn causal_prefix_is_immune_to_suffix_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let cfg = tiny_config();
        for trial in 0..5 {
            let m = init_model::<f32>(&cfg, trial).unwrap();
            let l = 10;
            let ids: Vec<u32> = (0..l).map(|_| rng.gen_range(0..12)).collect();
            let j = rng.gen_range(1..l);
            let mut perturbed = ids.clone();
            perturbed[j] = (perturbed[j] + 1 + rng.gen_range(0..10)) % 12;
            let (a, _) = m.forward(&ids, AttentionMaskMode::Causal, false).unwrap();
            let (b, _) = m
                .forward(&perturbed, AttentionMaskMode::Causal, false)
                .unwrap();
            for i in 0..j {
                assert_eq!(a.row(i), b.row(i), "trial {} row {}", trial, i);
            }
        }
    }

    #[test]
    fn bidirectional_mode_propagates_perturbations_backward() {
        let m = init_model::<f32>(&tiny_config(), 8).unwrap();
        let ids = vec![1, 2, 3, 4, 5, 6];
        let mut perturbed = ids.clone();
        perturbed[4] = 9;
        let (a, _) = m
            .forward(&ids, AttentionMaskMode::Bidirectional, false)
            .unwrap();
        let (b, _) = m
            .forward(&perturbed, AttentionMaskMode::Bidirectional, false)
            .unwrap();
        let delta: f32 = a
            .row(0)
            .iter()
            .zip(b.row(0))
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(delta > 0.0, "position 0 logits unchanged: {}", delta);
    }

    #[test]
    fn overlong_and_out_of_vocab_inputs_error() {
        let m = init_model::<f32>(&tiny_config(), 0).unwrap();
        let long = vec![0u32; 17];
        assert!(m.forward(&long, AttentionMaskMode::Causal, false).is_err());
        assert!(m.forward(&[13], AttentionMaskMode::Causal, false).is_err());
    }

    #[test]
    fn extraction_is_mean_of_captured_states_and_deterministic() {
        let m = init_model::<f64>(&tiny_config(), 5).unwrap();
        let text = vec![4u32, 4, 4, 4, 4];
        let (_, act) = m
            .forward(&text, AttentionMaskMode::Bidirectional, true)
            .unwrap();
        let states = &act.unwrap().block_outputs[0];
        let pooled = m
            .extract_representations(&[text.clone()], 0, AttentionMaskMode::Bidirectional, 0)
            .unwrap();
        for c in 0..8 {
            let mean: f64 = (0..5).map(|r| states.at(r, c)).sum::<f64>() / 5.0;
            assert!((pooled.at(0, c) - mean).abs() < 1e-15);
        }
        let again = m
            .extract_representations(&[text], 0, AttentionMaskMode::Bidirectional, 0)
            .unwrap();
        assert_eq!(pooled, again);
    }

    #[test]
    fn extraction_ignores_trailing_padding() {
        let m = init_model::<f64>(&tiny_config(), 6).unwrap();
        let bare = vec![3u32, 9, 2, 7];
        let mut padded = bare.clone();
        padded.extend([0u32; 6]);
        let a = m
            .extract_representations(&[bare], 2 - 2, AttentionMaskMode::Bidirectional, 0)
            .unwrap();
        let b = m
            .extract_representations(&[padded], 0, AttentionMaskMode::Bidirectional, 0)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn extraction_rejects_bad_layer_and_empty_text() {
        let m = init_model::<f64>(&tiny_config(), 6).unwrap();
        assert!(m
            .extract_representations(&[vec![1]], 1, AttentionMaskMode::Bidirectional, 0)
            .is_err());
        assert!(m
            .extract_representations(&[vec![0, 0]], 0, AttentionMaskMode::Bidirectional, 0)
            .is_err());
        // embedding output is addressable as -1
        assert!(m
            .extract_representations(&[vec![1]], -1, AttentionMaskMode::Bidirectional, 0)
            .is_ok());
    }

    #[test]
    fn tied_head_links_embedding_row_to_logit_column() {
        let cfg = tiny_config();
        let mut m = init_model::<f64>(&cfg, 11).unwrap();
        let ids = vec![1u32, 2, 3];
        let (before, _) = m.forward(&ids, AttentionMaskMode::Causal, false).unwrap();
        // bump the embedding row of a token absent from the input
        let t = 10usize;
        for v in m.params.embed.row_mut(t) {
            *v += 0.25;
        }
        let (after, _) = m.forward(&ids, AttentionMaskMode::Causal, false).unwrap();
        for i in 0..ids.len() {
            for c in 0..cfg.vocab_size {
                if c == t {
                    assert_ne!(before.at(i, c), after.at(i, c));
                } else {
                    assert_eq!(before.at(i, c), after.at(i, c));
                }
            }
        }
    }

    #[test]
    fn extend_vocab_adds_exactly_one_fresh_row() {
        let m = init_model::<f32>(&tiny_config(), 2).unwrap();
        let ids = vec![1u32, 5, 3, 2];
        let (before, _) = m.forward(&ids, AttentionMaskMode::Causal, false).unwrap();
        let ext = m.extend_vocab_with_mask(77).unwrap();
        assert_eq!(ext.config.vocab_size, 13);
        assert_eq!(ext.config.mask_token_id, Some(12));
        // old rows bit-identical
        for r in 0..12 {
            assert_eq!(ext.params.embed.row(r), m.params.embed.row(r));
        }
        // logits over the old vocab entries unchanged (raw logits; only the
        // new column is added)
        let (after, _) = ext.forward(&ids, AttentionMaskMode::Causal, false).unwrap();
        for i in 0..ids.len() {
            for c in 0..12 {
                assert_eq!(before.at(i, c), after.at(i, c));
            }
        }
        assert!(ext.extend_vocab_with_mask(78).is_err());
    }

    /// Independent scalar-loop forward for a toy model; exercises the whole
    /// stack (embedding, layer norm, rope, attention, gelu, residuals, head).
    fn oracle_forward(m: &TransformerModel<f64>, ids: &[u32]) -> Vec<Vec<f64>> {
        let cfg = &m.config;
        let (l, d) = (ids.len(), cfg.hidden_dim);
        let (heads, dh) = (cfg.n_heads, cfg.head_dim());
        let ln = |x: &Vec<Vec<f64>>, g: &Tensor<f64>, b: &Tensor<f64>| -> Vec<Vec<f64>> {
            x.iter()
                .map(|row| {
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let istd = 1.0 / (var + cfg.ln_eps).sqrt();
                    (0..d)
                        .map(|i| (row[i] - mean) * istd * g.data()[i] + b.data()[i])
                        .collect()
                })
                .collect()
        };
        let matvec = |x: &Vec<Vec<f64>>, w: &Tensor<f64>| -> Vec<Vec<f64>> {
            x.iter()
                .map(|row| {
                    (0..w.cols())
                        .map(|j| (0..w.rows()).map(|i| row[i] * w.at(i, j)).sum())
                        .collect()
                })
                .collect()
        };
        let rope = |x: &mut Vec<Vec<f64>>| {
            for (pos, row) in x.iter_mut().enumerate() {
                for h in 0..heads {
                    for i in 0..dh / 2 {
                        let freq = cfg.rope_base.powf(-2.0 * i as f64 / dh as f64);
                        let angle = pos as f64 * freq;
                        let (c, s) = (angle.cos(), angle.sin());
                        let (a, b) = (row[h * dh + 2 * i], row[h * dh + 2 * i + 1]);
                        row[h * dh + 2 * i] = a * c - b * s;
                        row[h * dh + 2 * i + 1] = a * s + b * c;
                    }
                }
            }
        };

        let mut x: Vec<Vec<f64>> = ids
            .iter()
            .map(|&t| m.params.embed.row(t as usize).to_vec())
            .collect();
        for bp in &m.params.blocks {
            let xn1 = ln(&x, &bp.ln1_gamma, &bp.ln1_beta);
            let mut q = matvec(&xn1, &bp.wq);
            let mut k = matvec(&xn1, &bp.wk);
            let v = matvec(&xn1, &bp.wv);
            rope(&mut q);
            rope(&mut k);
            let mut ctx = vec![vec![0.0; d]; l];
            for h in 0..heads {
                for i in 0..l {
                    let scores: Vec<f64> = (0..l)
                        .map(|j| {
                            (0..dh)
                                .map(|c| q[i][h * dh + c] * k[j][h * dh + c])
                                .sum::<f64>()
                                / (dh as f64).sqrt()
                        })
                        .collect();
                    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    for j in 0..l {
                        for c in 0..dh {
                            ctx[i][h * dh + c] += exps[j] / z * v[j][h * dh + c];
                        }
                    }
                }
            }
            let attn_out = matvec(&ctx, &bp.wo);
            for i in 0..l {
                for c in 0..d {
                    x[i][c] += attn_out[i][c];
                }
            }
            let xn2 = ln(&x, &bp.ln2_gamma, &bp.ln2_beta);
            let h1 = matvec(&xn2, &bp.w1);
            let h1g: Vec<Vec<f64>> = h1
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|&v| {
                            let inner = (2.0 / std::f64::consts::PI).sqrt()
                                * (v + 0.044715 * v * v * v);
                            0.5 * v * (1.0 + inner.tanh())
                        })
                        .collect()
                })
                .collect();
            let mlp_out = matvec(&h1g, &bp.w2);
            for i in 0..l {
                for c in 0..d {
                    x[i][c] += mlp_out[i][c];
                }
            }
        }
        x
    }

    #[test]
    fn extraction_matches_step_through_oracle() {
        let mut cfg = tiny_config();
        cfg.n_layers = 2;
        let m = init_model::<f64>(&cfg, 21).unwrap();
        let texts = vec![vec![1u32, 7, 4, 2, 9], vec![3u32, 3, 8]];
        let pooled = m
            .extract_representations(&texts, 1, AttentionMaskMode::Bidirectional, 0)
            .unwrap();
        for (ti, text) in texts.iter().enumerate() {
            let states = oracle_forward(&m, text);
            for c in 0..cfg.hidden_dim {
                let mean: f64 =
                    states.iter().map(|row| row[c]).sum::<f64>() / text.len() as f64;
                let got = pooled.at(ti, c);
                assert!(
                    (got - mean).abs() < 1e-9,
                    "text {} col {}: {} vs {}",
                    ti,
                    c,
                    got,
                    mean
                );
            }
        }
    }

    fn flat_params(m: &TransformerModel<f64>) -> Vec<Tensor<f64>> {
        m.params.fields().into_iter().map(|(_, t)| t.clone()).collect()
    }

    fn model_with_params(cfg: &ModelConfig, ts: &[Tensor<f64>]) -> TransformerModel<f64> {
        let mut m = init_model::<f64>(cfg, 0).unwrap();
        for ((_, dst), src) in m.params.fields_mut().into_iter().zip(ts) {
            *dst = src.clone();
        }
        m
    }

    #[test]
    fn full_one_block_model_passes_gradient_check() {
        let cfg = tiny_config();
        let m = init_model::<f64>(&cfg, 31).unwrap();
        let ids = vec![2u32, 7, 1, 11, 4];
        let targets = vec![7u32, 1, 11, 4, 0];
        let mask = vec![true, true, false, true, true];
        let params = flat_params(&m);

        let cfg_f = cfg.clone();
        let ids_f = ids.clone();
        let targets_f = targets.clone();
        let mask_f = mask.clone();
        let f = move |ps: &[Tensor<f64>]| {
            let m = model_with_params(&cfg_f, ps);
            let (logits, _) = m.forward(&ids_f, AttentionMaskMode::Causal, false)?;
            cross_entropy(&logits, &targets_f, &mask_f)
        };
        let cfg_g = cfg.clone();
        let g = move |ps: &[Tensor<f64>]| {
            let m = model_with_params(&cfg_g, ps);
            let (logits, cache) = m.forward_train(&ids, AttentionMaskMode::Causal, None)?;
            let (_, dlogits) = cross_entropy_with_grad(&logits, &targets, &mask, None)?;
            let grads = m.backward(&cache, &dlogits);
            Ok(grads.0.fields().into_iter().map(|(_, t)| t.clone()).collect())
        };
        let err = grad_check(f, g, &params, 1e-5).unwrap();
        assert!(err < 1e-5, "full model grad rel err {}", err);
    }

    #[test]
    fn bidirectional_backward_also_passes_gradient_check() {
        let cfg = tiny_config();
        let m = init_model::<f64>(&cfg, 37).unwrap();
        let ids = vec![6u32, 0, 9, 3];
        let targets = vec![1u32, 1, 2, 2];
        let mask = vec![true, false, true, true];
        let params = flat_params(&m);

        let cfg_f = cfg.clone();
        let ids_f = ids.clone();
        let targets_f = targets.clone();
        let mask_f = mask.clone();
        let f = move |ps: &[Tensor<f64>]| {
            let m = model_with_params(&cfg_f, ps);
            let (logits, _) = m.forward(&ids_f, AttentionMaskMode::Bidirectional, false)?;
            cross_entropy(&logits, &targets_f, &mask_f)
        };
        let cfg_g = cfg.clone();
        let g = move |ps: &[Tensor<f64>]| {
            let m = model_with_params(&cfg_g, ps);
            let (logits, cache) =
                m.forward_train(&ids, AttentionMaskMode::Bidirectional, None)?;
            let (_, dlogits) = cross_entropy_with_grad(&logits, &targets, &mask, None)?;
            let grads = m.backward(&cache, &dlogits);
            Ok(grads.0.fields().into_iter().map(|(_, t)| t.clone()).collect())
        };
        let err = grad_check(f, g, &params, 1e-5).unwrap();
        assert!(err < 1e-5, "bidirectional grad rel err {}", err);
    }
}
