//! Layer/component transplantation between trained models.

use crate::error::{DetourError, Result};
use crate::model::{BlockField, TransformerModel};
use crate::numerics::Scalar;
use serde::{Deserialize, Serialize};

/// Which parameter blocks move from source to target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransplantComponents {
    pub attention: bool,
    pub mlp: bool,
    pub layer_norms: bool,
}

impl TransplantComponents {
    pub fn all() -> Self {
        TransplantComponents {
            attention: true,
            mlp: true,
            layer_norms: true,
        }
    }

    pub fn attention_only() -> Self {
        TransplantComponents {
            attention: true,
            mlp: false,
            layer_norms: false,
        }
    }

    pub fn mlp_only() -> Self {
        TransplantComponents {
            attention: false,
            mlp: true,
            layer_norms: false,
        }
    }

    fn selects(&self, f: BlockField) -> bool {
        (self.attention && f.is_attention())
            || (self.mlp && f.is_mlp())
            || (self.layer_norms && f.is_layer_norm())
    }
}

/// Inclusive layer range `[lo, hi]` plus a component selection; embeddings,
/// head and final norm always stay with the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransplantSpec {
    pub lo: usize,
    pub hi: usize,
    pub components: TransplantComponents,
}

impl TransplantSpec {
    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }

    pub fn contains(&self, layer: usize) -> bool {
        self.lo <= layer && layer <= self.hi
    }
}

/// Copy the selected parameter blocks of `source` into a clone of `target`.
pub fn transplant<E: Scalar>(
    target: &TransformerModel<E>,
    source: &TransformerModel<E>,
    spec: &TransplantSpec,
) -> Result<TransformerModel<E>> {
    if target.config != source.config {
        return Err(DetourError::InvalidInput(
            "transplant: architectures differ".into(),
        ));
    }
    if !spec.is_empty() && spec.hi >= target.config.n_layers {
        return Err(DetourError::InvalidInput(format!(
            "transplant: range [{}, {}] outside {} layers",
            spec.lo, spec.hi, target.config.n_layers
        )));
    }
    let mut hybrid = target.clone();
    for l in 0..target.config.n_layers {
        if !spec.contains(l) {
            continue;
        }
        for f in BlockField::ALL {
            if spec.components.selects(f) {
                *hybrid.params.blocks[l].field_mut(f) = source.params.blocks[l].field(f).clone();
            }
        }
    }
    Ok(hybrid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig, ParamId};

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 6,
            hidden_dim: 16,
            n_heads: 2,
            vocab_size: 64,
            max_seq_len: 16,
            rope_base: 10_000.0,
            dropout_rate: 0.0,
            init_std: 0.05,
            ln_eps: 1e-5,
            mask_token_id: Some(2),
        }
    }

    fn pair() -> (TransformerModel<f32>, TransformerModel<f32>) {
        (
            init_model(&cfg(), 1).unwrap(),
            init_model(&cfg(), 2).unwrap(),
        )
    }

    #[test]
    fn empty_range_is_the_target() {
        let (target, source) = pair();
        let spec = TransplantSpec {
            lo: 1,
            hi: 0,
            components: TransplantComponents::all(),
        };
        let hybrid = transplant(&target, &source, &spec).unwrap();
        assert_eq!(hybrid.params, target.params);
    }

    #[test]
    fn full_transplant_keeps_embeddings_from_target() {
        let (target, source) = pair();
        let spec = TransplantSpec {
            lo: 0,
            hi: 5,
            components: TransplantComponents::all(),
        };
        let hybrid = transplant(&target, &source, &spec).unwrap();
        assert_eq!(hybrid.params.embed, target.params.embed);
        assert_eq!(hybrid.params.final_gamma, target.params.final_gamma);
        for l in 0..6 {
            assert_eq!(hybrid.params.blocks[l], source.params.blocks[l]);
        }
    }

    #[test]
    fn mlp_only_transplant_leaves_attention_from_target() {
        let (target, source) = pair();
        let spec = TransplantSpec {
            lo: 3,
            hi: 5,
            components: TransplantComponents::mlp_only(),
        };
        let hybrid = transplant(&target, &source, &spec).unwrap();
        for l in 3..=5 {
            assert_eq!(hybrid.params.blocks[l].w1, source.params.blocks[l].w1);
            assert_eq!(hybrid.params.blocks[l].w2, source.params.blocks[l].w2);
            assert_eq!(hybrid.params.blocks[l].wq, target.params.blocks[l].wq);
            assert_eq!(
                hybrid.params.blocks[l].ln1_gamma,
                target.params.blocks[l].ln1_gamma
            );
        }
        for l in 0..3 {
            assert_eq!(hybrid.params.blocks[l], target.params.blocks[l]);
        }
    }

    #[test]
    fn every_parameter_comes_from_exactly_one_parent() {
        // conservation: each tensor is bit-identical to source or to target,
        // per the spec's partition
        let (target, source) = pair();
        let spec = TransplantSpec {
            lo: 1,
            hi: 3,
            components: TransplantComponents {
                attention: true,
                mlp: false,
                layer_norms: true,
            },
        };
        let hybrid = transplant(&target, &source, &spec).unwrap();
        for ((id, h), ((_, t), (_, s))) in hybrid
            .params
            .fields()
            .into_iter()
            .zip(target.params.fields().into_iter().zip(source.params.fields()))
        {
            let expect_source = match id {
                ParamId::Block(l, f) => {
                    spec.contains(l) && spec.components.selects(f)
                }
                _ => false,
            };
            if expect_source {
                assert_eq!(h, s, "{} should come from source", id);
            } else {
                assert_eq!(h, t, "{} should come from target", id);
            }
        }
    }

    #[test]
    fn architecture_mismatch_errors() {
        let target = init_model::<f32>(&cfg(), 1).unwrap();
        let mut other = cfg();
        other.n_layers = 4;
        let source = init_model::<f32>(&other, 2).unwrap();
        let spec = TransplantSpec {
            lo: 0,
            hi: 1,
            components: TransplantComponents::all(),
        };
        assert!(transplant(&target, &source, &spec).is_err());
    }

    #[test]
    fn out_of_range_errors() {
        let (target, source) = pair();
        let spec = TransplantSpec {
            lo: 0,
            hi: 6,
            components: TransplantComponents::all(),
        };
        assert!(transplant(&target, &source, &spec).is_err());
    }
}
