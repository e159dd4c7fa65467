//! Experiment specification: one plain-text TOML file fully describing
//! seeds, budgets and configs. Reports always reference the resolved spec
//! written back into the output directory.

use crate::data::MaskingScheme;
use crate::error::{DetourError, Result};
use crate::model::ModelConfig;
use crate::trainer::{AdamHyperparams, PipelineSettings};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// CLM detour vs matched MLM baseline: training runs, CKA divergence,
    /// seed-noise ratios, probes, needle grids.
    DetourVsBaseline,
    /// Decay-length sweep at several ratios for both objectives.
    DecaySweep,
    /// The three freeze interventions plus references.
    FreezeSuite,
    /// Layer-group and component transplants with linear probing.
    TransplantSuite,
    /// Needle-in-haystack evaluation of detour vs baseline encoders.
    NeedleSuite,
    /// Decoder-start direction: MLM detour on a causal model, CLM decay.
    ReverseDirection,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::DetourVsBaseline => "detour_vs_baseline",
            ExperimentKind::DecaySweep => "decay_sweep",
            ExperimentKind::FreezeSuite => "freeze_suite",
            ExperimentKind::TransplantSuite => "transplant_suite",
            ExperimentKind::NeedleSuite => "needle_suite",
            ExperimentKind::ReverseDirection => "reverse_direction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    /// Packing window (equals the training sequence length).
    pub window: usize,
    /// Exclusive-token frequency of the general distribution.
    pub general_shift: f64,
    /// Exclusive-token frequency of the domain distribution.
    pub domain_shift: f64,
    /// Held-out evaluation texts for CKA.
    pub eval_texts: usize,
    /// Texts sampled per CKA seed.
    pub cka_sample: usize,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            window: 256,
            general_shift: 0.0,
            domain_shift: 0.5,
            eval_texts: 128,
            cka_sample: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    /// General-distribution pretraining budget for the base encoder.
    pub base_tokens: u64,
    /// Phase-1 (continued-pretraining) budget.
    pub phase1_tokens: u64,
    /// Decay budget as a fraction of phase 1.
    pub decay_ratio: f64,
    pub batch_sequences: usize,
    pub metrics_every: u64,
}

impl Default for BudgetSpec {
    fn default() -> Self {
        BudgetSpec {
            base_tokens: 262_144,
            phase1_tokens: 2_048_000,
            decay_ratio: 0.1,
            batch_sequences: 16,
            metrics_every: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    /// Representation layer probed (block index).
    pub layer: i32,
    pub seeds: Vec<u64>,
    /// Held-out texts per class and task.
    pub texts_per_class: usize,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec {
            layer: 7,
            seeds: vec![1, 2, 3],
            texts_per_class: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreezeRanges {
    /// Low layer group, inclusive.
    pub low: (usize, usize),
    /// Mid layer group, inclusive.
    pub mid: (usize, usize),
}

impl Default for FreezeRanges {
    fn default() -> Self {
        FreezeRanges {
            low: (0, 2),
            mid: (3, 5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleSpec {
    pub lengths: Vec<usize>,
    pub pairs_per_cell: usize,
    pub probe_hidden: usize,
    pub probe_dropout: f64,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_batch: usize,
}

impl Default for NeedleSpec {
    fn default() -> Self {
        NeedleSpec {
            lengths: vec![32, 64, 128, 192, 256],
            pairs_per_cell: 100,
            probe_hidden: 64,
            probe_dropout: 0.1,
            probe_epochs: 30,
            probe_lr: 1e-3,
            probe_batch: 16,
        }
    }
}

fn default_sweep_ratios() -> Vec<f64> {
    vec![0.025, 0.1, 0.2, 0.3, 0.5]
}

fn default_cka_seeds() -> Vec<u64> {
    vec![42, 43, 44]
}

fn default_seed_noise_seed() -> u64 {
    99
}

fn default_data_seed() -> u64 {
    7
}

fn default_bootstrap_resamples() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Per-run seeds (stochastic streams: dropout, masking).
    pub seeds: Vec<u64>,
    /// Extra run seed for the seed-noise control.
    #[serde(default = "default_seed_noise_seed")]
    pub seed_noise_seed: u64,
    /// Seed fixing corpus content and document order for every run.
    #[serde(default = "default_data_seed")]
    pub data_seed: u64,
    /// Data-sampling seeds for CKA evaluation texts.
    #[serde(default = "default_cka_seeds")]
    pub cka_seeds: Vec<u64>,
    #[serde(default = "default_bootstrap_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub budgets: BudgetSpec,
    #[serde(default = "default_train")]
    pub train: PipelineSettings,
    #[serde(default = "default_adam")]
    pub adam: AdamHyperparams,
    #[serde(default)]
    pub probe: ProbeSpec,
    #[serde(default)]
    pub freeze: FreezeRanges,
    #[serde(default = "default_sweep_ratios")]
    pub sweep_ratios: Vec<f64>,
    #[serde(default)]
    pub needle: NeedleSpec,
    /// BERT-style 80/10/10 corruption instead of pure mask replacement.
    #[serde(default)]
    pub bert_corruption: bool,
}

fn default_model() -> ModelConfig {
    ModelConfig::desk_default()
}

fn default_train() -> PipelineSettings {
    PipelineSettings::default()
}

fn default_adam() -> AdamHyperparams {
    AdamHyperparams::default()
}

impl ExperimentSpec {
    pub fn desk(kind: ExperimentKind) -> Self {
        let mut model = ModelConfig::desk_default();
        if kind == ExperimentKind::ReverseDirection {
            model.mask_token_id = None;
        }
        ExperimentSpec {
            kind,
            seeds: vec![1, 2, 3],
            seed_noise_seed: default_seed_noise_seed(),
            data_seed: default_data_seed(),
            cka_seeds: default_cka_seeds(),
            bootstrap_resamples: default_bootstrap_resamples(),
            model,
            data: DataSpec::default(),
            budgets: BudgetSpec::default(),
            train: PipelineSettings::default(),
            adam: AdamHyperparams::default(),
            probe: ProbeSpec::default(),
            freeze: FreezeRanges::default(),
            sweep_ratios: default_sweep_ratios(),
            needle: NeedleSpec::default(),
            bert_corruption: false,
        }
    }

    pub fn masking_scheme(&self) -> MaskingScheme {
        if self.bert_corruption {
            MaskingScheme::Bert801010
        } else {
            MaskingScheme::MaskOnly
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| DetourError::Parse(format!("spec: {}", e)))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.seeds.is_empty() {
            return Err(DetourError::InvalidConfig("spec: no run seeds".into()));
        }
        let mut uniq = self.seeds.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != self.seeds.len() {
            return Err(DetourError::InvalidConfig("spec: duplicate run seeds".into()));
        }
        if self.seeds.contains(&self.seed_noise_seed) {
            return Err(DetourError::InvalidConfig(
                "spec: seed_noise_seed collides with a run seed".into(),
            ));
        }
        if self.cka_seeds.is_empty() {
            return Err(DetourError::InvalidConfig("spec: no cka seeds".into()));
        }
        if self.data.window < 2 || self.data.window > self.model.max_seq_len {
            return Err(DetourError::InvalidConfig(format!(
                "spec: window {} outside [2, max_seq_len {}]",
                self.data.window, self.model.max_seq_len
            )));
        }
        if self.budgets.phase1_tokens == 0 || self.budgets.base_tokens == 0 {
            return Err(DetourError::InvalidConfig("spec: zero budget".into()));
        }
        if !(0.0..=1.0).contains(&self.budgets.decay_ratio) {
            return Err(DetourError::InvalidConfig(format!(
                "spec: decay_ratio {} outside [0, 1]",
                self.budgets.decay_ratio
            )));
        }
        if self.probe.layer >= self.model.n_layers as i32 || self.probe.layer < -1 {
            return Err(DetourError::InvalidConfig(format!(
                "spec: probe layer {} outside [-1, {})",
                self.probe.layer, self.model.n_layers
            )));
        }
        let n = self.model.n_layers;
        if self.freeze.low.1 >= n || self.freeze.mid.1 >= n {
            return Err(DetourError::InvalidConfig(
                "spec: freeze ranges outside the layer count".into(),
            ));
        }
        if self.kind == ExperimentKind::DecaySweep && self.sweep_ratios.is_empty() {
            return Err(DetourError::InvalidConfig("spec: empty sweep ratios".into()));
        }
        if self.kind == ExperimentKind::ReverseDirection && self.model.mask_token_id.is_some() {
            return Err(DetourError::InvalidConfig(
                "spec: reverse_direction starts from a decoder (no mask token)".into(),
            ));
        }
        Ok(())
    }
}
