//! Parameter storage with a canonical, named ordering.
//!
//! The ordering defined by `visit`/`fields` is the single source of truth
//! for checkpoints, optimizer state, freezing and transplants.

use super::config::ModelConfig;
use crate::numerics::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Identifies one parameter tensor within a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamId {
    Embed,
    Block(usize, BlockField),
    FinalGamma,
    FinalBeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockField {
    Ln1Gamma,
    Ln1Beta,
    Wq,
    Wk,
    Wv,
    Wo,
    Ln2Gamma,
    Ln2Beta,
    W1,
    W2,
}

impl BlockField {
    pub const ALL: [BlockField; 10] = [
        BlockField::Ln1Gamma,
        BlockField::Ln1Beta,
        BlockField::Wq,
        BlockField::Wk,
        BlockField::Wv,
        BlockField::Wo,
        BlockField::Ln2Gamma,
        BlockField::Ln2Beta,
        BlockField::W1,
        BlockField::W2,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BlockField::Ln1Gamma => "ln1_gamma",
            BlockField::Ln1Beta => "ln1_beta",
            BlockField::Wq => "wq",
            BlockField::Wk => "wk",
            BlockField::Wv => "wv",
            BlockField::Wo => "wo",
            BlockField::Ln2Gamma => "ln2_gamma",
            BlockField::Ln2Beta => "ln2_beta",
            BlockField::W1 => "w1",
            BlockField::W2 => "w2",
        }
    }

    /// True for the attention projection weights.
    pub fn is_attention(&self) -> bool {
        matches!(
            self,
            BlockField::Wq | BlockField::Wk | BlockField::Wv | BlockField::Wo
        )
    }

    pub fn is_mlp(&self) -> bool {
        matches!(self, BlockField::W1 | BlockField::W2)
    }

    pub fn is_layer_norm(&self) -> bool {
        matches!(
            self,
            BlockField::Ln1Gamma
                | BlockField::Ln1Beta
                | BlockField::Ln2Gamma
                | BlockField::Ln2Beta
        )
    }
}

impl std::fmt::Display for ParamId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamId::Embed => write!(f, "embed"),
            ParamId::Block(i, field) => write!(f, "block{}.{}", i, field.name()),
            ParamId::FinalGamma => write!(f, "final_gamma"),
            ParamId::FinalBeta => write!(f, "final_beta"),
        }
    }
}

impl ParamId {
    /// Block index when this parameter belongs to a transformer block.
    pub fn block_index(&self) -> Option<usize> {
        match self {
            ParamId::Block(i, _) => Some(*i),
            _ => None,
        }
    }

    /// Parse the `Display` form back into an id.
    pub fn parse(s: &str) -> Option<ParamId> {
        match s {
            "embed" => return Some(ParamId::Embed),
            "final_gamma" => return Some(ParamId::FinalGamma),
            "final_beta" => return Some(ParamId::FinalBeta),
            _ => {}
        }
        let rest = s.strip_prefix("block")?;
        let (idx, field) = rest.split_once('.')?;
        let idx: usize = idx.parse().ok()?;
        let field = BlockField::ALL.iter().find(|f| f.name() == field)?;
        Some(ParamId::Block(idx, *field))
    }
}

/// One pre-norm transformer block's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<E: Scalar> {
    pub ln1_gamma: Tensor<E>,
    pub ln1_beta: Tensor<E>,
    pub wq: Tensor<E>,
    pub wk: Tensor<E>,
    pub wv: Tensor<E>,
    pub wo: Tensor<E>,
    pub ln2_gamma: Tensor<E>,
    pub ln2_beta: Tensor<E>,
    pub w1: Tensor<E>,
    pub w2: Tensor<E>,
}

impl<E: Scalar> BlockParams<E> {
    pub fn field(&self, f: BlockField) -> &Tensor<E> {
        match f {
            BlockField::Ln1Gamma => &self.ln1_gamma,
            BlockField::Ln1Beta => &self.ln1_beta,
            BlockField::Wq => &self.wq,
            BlockField::Wk => &self.wk,
            BlockField::Wv => &self.wv,
            BlockField::Wo => &self.wo,
            BlockField::Ln2Gamma => &self.ln2_gamma,
            BlockField::Ln2Beta => &self.ln2_beta,
            BlockField::W1 => &self.w1,
            BlockField::W2 => &self.w2,
        }
    }

    pub fn field_mut(&mut self, f: BlockField) -> &mut Tensor<E> {
        match f {
            BlockField::Ln1Gamma => &mut self.ln1_gamma,
            BlockField::Ln1Beta => &mut self.ln1_beta,
            BlockField::Wq => &mut self.wq,
            BlockField::Wk => &mut self.wk,
            BlockField::Wv => &mut self.wv,
            BlockField::Wo => &mut self.wo,
            BlockField::Ln2Gamma => &mut self.ln2_gamma,
            BlockField::Ln2Beta => &mut self.ln2_beta,
            BlockField::W1 => &mut self.w1,
            BlockField::W2 => &mut self.w2,
        }
    }
}

/// Full parameter set: embeddings (tied LM head), blocks, final norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<E: Scalar> {
    pub embed: Tensor<E>,
    pub blocks: Vec<BlockParams<E>>,
    pub final_gamma: Tensor<E>,
    pub final_beta: Tensor<E>,
}

impl<E: Scalar> ParamSet<E> {
    /// All parameters with zero values, shaped for `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.hidden_dim;
        let block = || BlockParams {
            ln1_gamma: Tensor::zeros(&[d]),
            ln1_beta: Tensor::zeros(&[d]),
            wq: Tensor::zeros(&[d, d]),
            wk: Tensor::zeros(&[d, d]),
            wv: Tensor::zeros(&[d, d]),
            wo: Tensor::zeros(&[d, d]),
            ln2_gamma: Tensor::zeros(&[d]),
            ln2_beta: Tensor::zeros(&[d]),
            w1: Tensor::zeros(&[d, 4 * d]),
            w2: Tensor::zeros(&[4 * d, d]),
        };
        ParamSet {
            embed: Tensor::zeros(&[config.vocab_size, d]),
            blocks: (0..config.n_layers).map(|_| block()).collect(),
            final_gamma: Tensor::zeros(&[d]),
            final_beta: Tensor::zeros(&[d]),
        }
    }

    /// Parameters in canonical order (checkpoint / optimizer order).
    pub fn fields(&self) -> Vec<(ParamId, &Tensor<E>)> {
        let mut out = vec![(ParamId::Embed, &self.embed)];
        for (i, b) in self.blocks.iter().enumerate() {
            for f in BlockField::ALL {
                out.push((ParamId::Block(i, f), b.field(f)));
            }
        }
        out.push((ParamId::FinalGamma, &self.final_gamma));
        out.push((ParamId::FinalBeta, &self.final_beta));
        out
    }

    pub fn fields_mut(&mut self) -> Vec<(ParamId, &mut Tensor<E>)> {
        let ParamSet {
            embed,
            blocks,
            final_gamma,
            final_beta,
        } = self;
        let mut out: Vec<(ParamId, &mut Tensor<E>)> = vec![(ParamId::Embed, embed)];
        for (i, b) in blocks.iter_mut().enumerate() {
            let BlockParams {
                ln1_gamma,
                ln1_beta,
                wq,
                wk,
                wv,
                wo,
                ln2_gamma,
                ln2_beta,
                w1,
                w2,
            } = b;
            out.push((ParamId::Block(i, BlockField::Ln1Gamma), ln1_gamma));
            out.push((ParamId::Block(i, BlockField::Ln1Beta), ln1_beta));
            out.push((ParamId::Block(i, BlockField::Wq), wq));
            out.push((ParamId::Block(i, BlockField::Wk), wk));
            out.push((ParamId::Block(i, BlockField::Wv), wv));
            out.push((ParamId::Block(i, BlockField::Wo), wo));
            out.push((ParamId::Block(i, BlockField::Ln2Gamma), ln2_gamma));
            out.push((ParamId::Block(i, BlockField::Ln2Beta), ln2_beta));
            out.push((ParamId::Block(i, BlockField::W1), w1));
            out.push((ParamId::Block(i, BlockField::W2), w2));
        }
        out.push((ParamId::FinalGamma, final_gamma));
        out.push((ParamId::FinalBeta, final_beta));
        out
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<E>> {
        match id {
            ParamId::Embed => Some(&self.embed),
            ParamId::FinalGamma => Some(&self.final_gamma),
            ParamId::FinalBeta => Some(&self.final_beta),
            ParamId::Block(i, f) => self.blocks.get(i).map(|b| b.field(f)),
        }
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Tensor<E>> {
        match id {
            ParamId::Embed => Some(&mut self.embed),
            ParamId::FinalGamma => Some(&mut self.final_gamma),
            ParamId::FinalBeta => Some(&mut self.final_beta),
            ParamId::Block(i, f) => self.blocks.get_mut(i).map(|b| b.field_mut(f)),
        }
    }

    pub fn n_params(&self) -> usize {
        self.fields().iter().map(|(_, t)| t.len()).sum()
    }

    /// Element-wise accumulate (`self += other`), shapes must match.
    pub fn add_assign(&mut self, other: &ParamSet<E>) {
        let theirs = other.fields();
        for ((_, mine), (_, t)) in self.fields_mut().into_iter().zip(theirs) {
            mine.add_assign(t);
        }
    }
}

/// Per-parameter gradients, mirroring the model's parameter layout.
///
/// Invariant: every entry's shape equals the corresponding parameter shape.
#[derive(Debug, Clone, PartialEq)]
pub struct GradStore<E: Scalar>(pub ParamSet<E>);

impl<E: Scalar> GradStore<E> {
    pub fn zeros(config: &ModelConfig) -> Self {
        GradStore(ParamSet::zeros(config))
    }

    /// Look up a gradient tensor by its parameter name, e.g. `block3.wq`.
    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.0.get(ParamId::parse(name)?)
    }

    pub fn check_finite(&self) -> crate::error::Result<()> {
        for (id, t) in self.0.fields() {
            t.check_finite(&format!("gradient {}", id))?;
        }
        Ok(())
    }
}

/// Truncated normal init: resample any draw beyond two standard deviations.
pub(crate) fn fill_trunc_normal<E: Scalar>(t: &mut Tensor<E>, std: f64, rng: &mut ChaCha8Rng) {
    for v in t.data_mut() {
        *v = E::from_f64(trunc_normal_draw(rng) * std);
    }
}

fn trunc_normal_draw(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        // Box-Muller; u1 kept away from zero
        let u1: f64 = loop {
            let u: f64 = rng.gen();
            if u > 1e-12 {
                break u;
            }
        };
        let u2: f64 = rng.gen();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
