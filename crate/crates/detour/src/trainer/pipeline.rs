//! Multi-phase pipelines: the optimizer state persists across phases, the
//! scheduler clock resets, and the mask mode / objective switch per phase.
//! Supports the encoder-start (CLM then MLM decay) and decoder-start
//! (MLM then CLM decay) directions; a decoder gains its mask token at the
//! first MLM boundary with zero moments for the new row.

use super::adamw::OptimizerState;
use super::freeze::FreezeSpec;
use super::metrics::MetricsRecord;
use super::phase::{mix_seed, train_phase, Objective, PhaseConfig, TokenStream, TrainContext};
use super::schedule::Schedule;
use crate::data::{MaskingScheme, VocabLayout};
use crate::error::{DetourError, Result};
use crate::model::TransformerModel;
use crate::numerics::Scalar;
use serde::{Deserialize, Serialize};

/// Shared knobs for building the standard two-phase pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub peak_lr: f64,
    /// Phase-1 warmup length as a fraction of the phase-1 budget.
    pub warmup_fraction: f64,
    /// Decay-phase floor as a fraction of peak.
    pub floor_fraction: f64,
    /// MLM masking rate during a phase-1 MLM leg.
    pub mask_rate_phase1: f64,
    /// MLM masking rate during the decay leg.
    pub mask_rate_decay: f64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            peak_lr: 2e-4,
            warmup_fraction: 0.02,
            floor_fraction: 0.1,
            mask_rate_phase1: 0.30,
            mask_rate_decay: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub phases: Vec<PhaseConfig>,
    /// Phase-2 budget divided by phase-1 budget.
    pub decay_ratio: f64,
}

fn round_to_window(tokens: u64, window: usize) -> u64 {
    let w = window as u64;
    ((tokens / w).max(1)) * w
}

fn phase1(objective: Objective, budget: u64, s: &PipelineSettings, window: usize) -> PhaseConfig {
    let warmup = round_to_window((budget as f64 * s.warmup_fraction) as u64, window);
    PhaseConfig {
        objective,
        mask_mode: objective.required_mode(),
        token_budget: budget,
        mask_rate: s.mask_rate_phase1,
        schedule: Schedule::WarmupThenConstant {
            warmup_tokens: warmup,
        },
        freeze: None,
        peak_lr: s.peak_lr,
    }
}

fn decay_phase(
    objective: Objective,
    budget: u64,
    s: &PipelineSettings,
) -> PhaseConfig {
    PhaseConfig {
        objective,
        mask_mode: objective.required_mode(),
        token_budget: budget,
        mask_rate: s.mask_rate_decay,
        schedule: Schedule::SqrtDecay {
            floor_fraction: s.floor_fraction,
        },
        freeze: None,
        peak_lr: s.peak_lr,
    }
}

impl PipelineConfig {
    /// Two-phase pipeline with the given phase-1 / decay objectives.
    pub fn two_phase(
        obj1: Objective,
        obj2: Objective,
        phase1_budget: u64,
        decay_ratio: f64,
        settings: &PipelineSettings,
        window: usize,
    ) -> Self {
        let t1 = round_to_window(phase1_budget, window);
        let t2 = round_to_window((t1 as f64 * decay_ratio) as u64, window);
        PipelineConfig {
            phases: vec![
                phase1(obj1, t1, settings, window),
                decay_phase(obj2, t2, settings),
            ],
            decay_ratio,
        }
    }

    /// CLM detour: CLM continued pretraining, then an MLM decay.
    pub fn detour(t1: u64, ratio: f64, s: &PipelineSettings, window: usize) -> Self {
        Self::two_phase(Objective::Clm, Objective::Mlm, t1, ratio, s, window)
    }

    /// Matched MLM baseline: MLM throughout, same budgets and schedules.
    pub fn mlm_baseline(t1: u64, ratio: f64, s: &PipelineSettings, window: usize) -> Self {
        Self::two_phase(Objective::Mlm, Objective::Mlm, t1, ratio, s, window)
    }

    /// Decoder-start reverse detour: MLM phase, then a CLM decay.
    pub fn reverse_detour(t1: u64, ratio: f64, s: &PipelineSettings, window: usize) -> Self {
        Self::two_phase(Objective::Mlm, Objective::Clm, t1, ratio, s, window)
    }

    /// Matched decoder baseline: CLM throughout.
    pub fn clm_baseline(t1: u64, ratio: f64, s: &PipelineSettings, window: usize) -> Self {
        Self::two_phase(Objective::Clm, Objective::Clm, t1, ratio, s, window)
    }

    pub fn total_tokens(&self) -> u64 {
        self.phases.iter().map(|p| p.token_budget).sum()
    }

    /// Attach a freeze intervention to one phase.
    pub fn with_freeze(mut self, phase: usize, spec: FreezeSpec) -> Self {
        if let Some(p) = self.phases.get_mut(phase) {
            p.freeze = Some(spec);
        }
        self
    }

    pub fn validate(&self, window: usize, n_layers: usize) -> Result<()> {
        if self.phases.is_empty() {
            return Err(DetourError::InvalidConfig("pipeline has no phases".into()));
        }
        for p in &self.phases {
            p.validate(window, n_layers)?;
        }
        if self.phases.len() >= 2 {
            let t1 = self.phases[0].token_budget as f64;
            let t2 = self.phases[1].token_budget as f64;
            if (t2 / t1 - self.decay_ratio).abs() * t1 > window as f64 {
                return Err(DetourError::InvalidConfig(format!(
                    "decay_ratio {} inconsistent with budgets {}:{}",
                    self.decay_ratio, t1, t2
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunSettings<'a> {
    pub vocab: &'a VocabLayout,
    pub batch_sequences: usize,
    pub metrics_every: u64,
    pub masking_scheme: MaskingScheme,
    pub run_seed: u64,
}

pub struct PipelineOutcome<E: Scalar> {
    pub model: TransformerModel<E>,
    pub opt: OptimizerState<E>,
    /// Model snapshot at the end of every phase (phase boundaries + final).
    pub phase_snapshots: Vec<TransformerModel<E>>,
    pub metrics: Vec<MetricsRecord>,
    /// Whether a mask token was added at a phase boundary.
    pub extended_vocab: bool,
}

/// Run every phase in order over one stream.
pub fn run_pipeline<E: Scalar>(
    mut model: TransformerModel<E>,
    mut opt: OptimizerState<E>,
    pipeline: &PipelineConfig,
    stream: &mut TokenStream,
    settings: &RunSettings,
) -> Result<PipelineOutcome<E>> {
    pipeline.validate(stream.window(), model.config.n_layers)?;
    let mut metrics = Vec::new();
    let mut snapshots = Vec::new();
    let mut extended = false;
    for (pi, phase) in pipeline.phases.iter().enumerate() {
        if phase.objective == Objective::Mlm && model.config.mask_token_id.is_none() {
            // decoder-start boundary: add the mask token, zero moments for
            // the fresh embedding row
            model = model.extend_vocab_with_mask(mix_seed(&[settings.run_seed, 0xEA]))?;
            opt.extend_embed_rows(1);
            extended = true;
        }
        let ctx = TrainContext {
            vocab: settings.vocab,
            batch_sequences: settings.batch_sequences,
            metrics_every: settings.metrics_every,
            masking_scheme: settings.masking_scheme,
            phase_index: pi,
            run_seed: settings.run_seed,
        };
        metrics.extend(train_phase(&mut model, &mut opt, phase, stream, &ctx)?);
        snapshots.push(model.clone());
    }
    Ok(PipelineOutcome {
        model,
        opt,
        phase_snapshots: snapshots,
        metrics,
        extended_vocab: extended,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, pack_stream, DomainSpec};
    use crate::model::{init_model, AttentionMaskMode, ModelConfig};
    use crate::trainer::adamw::AdamHyperparams;

    const WINDOW: usize = 32;

    fn cfg(mask: Option<u32>) -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            hidden_dim: 16,
            n_heads: 2,
            vocab_size: 512,
            max_seq_len: 64,
            rope_base: 10_000.0,
            dropout_rate: 0.1,
            init_std: 0.02,
            ln_eps: 1e-5,
            mask_token_id: mask,
        }
    }

    fn stream(data_seed: u64) -> TokenStream {
        let vocab = VocabLayout::encoder(512).unwrap();
        let spec = DomainSpec::desk(&vocab, 0.5).unwrap();
        let docs = generate_corpus(&spec, 600, data_seed).unwrap();
        TokenStream::new(pack_stream(&docs, WINDOW, vocab.eos_id).unwrap()).unwrap()
    }

    fn settings(vocab: &VocabLayout, run_seed: u64) -> RunSettings<'_> {
        RunSettings {
            vocab,
            batch_sequences: 4,
            metrics_every: 1,
            masking_scheme: MaskingScheme::MaskOnly,
            run_seed,
        }
    }

    #[test]
    fn detour_budgets_follow_decay_ratio() {
        let s = PipelineSettings::default();
        let p = PipelineConfig::detour(2_048_000, 0.1, &s, 256);
        assert_eq!(p.phases[0].token_budget, 2_048_000);
        assert_eq!(p.phases[1].token_budget, 204_800);
        assert_eq!(p.phases[0].token_budget, 10 * p.phases[1].token_budget);
        assert_eq!(p.phases[0].objective, Objective::Clm);
        assert_eq!(p.phases[1].objective, Objective::Mlm);
        p.validate(256, 8).unwrap();
    }

    #[test]
    fn matched_pipelines_consume_identical_budgets() {
        let s = PipelineSettings::default();
        let a = PipelineConfig::detour(10_240, 0.1, &s, WINDOW);
        let b = PipelineConfig::mlm_baseline(10_240, 0.1, &s, WINDOW);
        assert_eq!(a.total_tokens(), b.total_tokens());
        for (pa, pb) in a.phases.iter().zip(&b.phases) {
            assert_eq!(pa.token_budget, pb.token_budget);
            assert_eq!(pa.schedule, pb.schedule);
        }
    }

    #[test]
    fn single_phase_pipeline_equals_train_phase() {
        let cfg = cfg(Some(2));
        let vocab = VocabLayout::encoder(512).unwrap();
        let s = PipelineSettings::default();
        let mut pipeline = PipelineConfig::detour(1280, 0.1, &s, WINDOW);
        pipeline.phases.truncate(1);
        pipeline.decay_ratio = 0.0;

        let outcome = run_pipeline(
            init_model::<f32>(&cfg, 3).unwrap(),
            OptimizerState::new(&cfg, AdamHyperparams::default()),
            &pipeline,
            &mut stream(9),
            &settings(&vocab, 21),
        )
        .unwrap();

        let mut model = init_model::<f32>(&cfg, 3).unwrap();
        let mut opt = OptimizerState::new(&cfg, AdamHyperparams::default());
        let ctx = TrainContext {
            vocab: &vocab,
            batch_sequences: 4,
            metrics_every: 1,
            masking_scheme: MaskingScheme::MaskOnly,
            phase_index: 0,
            run_seed: 21,
        };
        train_phase(&mut model, &mut opt, &pipeline.phases[0], &mut stream(9), &ctx).unwrap();
        assert_eq!(outcome.model.params, model.params);
        assert_eq!(outcome.opt, opt);
    }

    #[test]
    fn optimizer_moments_carry_across_the_boundary() {
        let cfg = cfg(Some(2));
        let vocab = VocabLayout::encoder(512).unwrap();
        let s = PipelineSettings::default();
        let pipeline = PipelineConfig::detour(1280, 0.2, &s, WINDOW);

        // pipeline in one go
        let outcome = run_pipeline(
            init_model::<f32>(&cfg, 4).unwrap(),
            OptimizerState::new(&cfg, AdamHyperparams::default()),
            &pipeline,
            &mut stream(10),
            &settings(&vocab, 22),
        )
        .unwrap();

        // same phases run manually with one carried optimizer
        let mut model = init_model::<f32>(&cfg, 4).unwrap();
        let mut opt = OptimizerState::new(&cfg, AdamHyperparams::default());
        let mut st = stream(10);
        for (pi, phase) in pipeline.phases.iter().enumerate() {
            let ctx = TrainContext {
                vocab: &vocab,
                batch_sequences: 4,
                metrics_every: 1,
                masking_scheme: MaskingScheme::MaskOnly,
                phase_index: pi,
                run_seed: 22,
            };
            train_phase(&mut model, &mut opt, phase, &mut st, &ctx).unwrap();
        }
        assert_eq!(outcome.model.params, model.params);
        assert_eq!(outcome.opt.m, opt.m);
        assert_eq!(outcome.opt.v, opt.v);
        // phase indices recorded monotonically
        assert!(outcome.metrics.iter().any(|m| m.phase == 1));
    }

    #[test]
    fn decoder_start_pipeline_extends_vocab_at_the_mlm_boundary() {
        let cfg = cfg(None);
        let vocab = VocabLayout::decoder(512).unwrap();
        let s = PipelineSettings::default();
        // CLM phase then MLM decay on a model without a mask token
        let pipeline = PipelineConfig::two_phase(
            Objective::Clm,
            Objective::Mlm,
            960,
            0.2,
            &s,
            WINDOW,
        );
        let outcome = run_pipeline(
            init_model::<f32>(&cfg, 5).unwrap(),
            OptimizerState::new(&cfg, AdamHyperparams::default()),
            &pipeline,
            &mut stream(11),
            &settings(&vocab, 23),
        )
        .unwrap();
        assert!(outcome.extended_vocab);
        assert_eq!(outcome.model.config.vocab_size, 513);
        assert_eq!(outcome.model.config.mask_token_id, Some(512));
        assert_eq!(outcome.opt.m.embed.rows(), 513);
    }

    #[test]
    fn invalid_phase_combination_is_rejected() {
        let bad = PhaseConfig {
            objective: Objective::Clm,
            mask_mode: AttentionMaskMode::Bidirectional,
            token_budget: 320,
            mask_rate: 0.0,
            schedule: Schedule::WarmupThenConstant { warmup_tokens: 0 },
            freeze: None,
            peak_lr: 1e-3,
        };
        assert!(bad.validate(WINDOW, 2).is_err());
    }

    #[test]
    fn frozen_phase_preserves_params_and_moments_end_to_end() {
        let cfg = cfg(Some(2));
        let vocab = VocabLayout::encoder(512).unwrap();
        let s = PipelineSettings::default();
        // phase 1 trains normally (moments become nonzero), phase 2 freezes
        // layer 0; its params AND moments must be bit-identical across phase 2
        let pipeline =
            PipelineConfig::detour(960, 0.5, &s, WINDOW).with_freeze(1, FreezeSpec::new(0, 0));

        let mut model = init_model::<f32>(&cfg, 6).unwrap();
        let mut opt = OptimizerState::new(&cfg, AdamHyperparams::default());
        let mut st = stream(12);
        let ctx0 = TrainContext {
            vocab: &vocab,
            batch_sequences: 4,
            metrics_every: 1,
            masking_scheme: MaskingScheme::MaskOnly,
            phase_index: 0,
            run_seed: 24,
        };
        train_phase(&mut model, &mut opt, &pipeline.phases[0], &mut st, &ctx0).unwrap();
        let params_at_boundary = model.params.clone();
        let m_at_boundary = opt.m.clone();
        let v_at_boundary = opt.v.clone();

        let ctx1 = TrainContext {
            phase_index: 1,
            ..ctx0
        };
        train_phase(&mut model, &mut opt, &pipeline.phases[1], &mut st, &ctx1).unwrap();

        for ((id, before), (_, after)) in params_at_boundary
            .fields()
            .into_iter()
            .zip(model.params.fields())
        {
            if id.block_index() == Some(0) {
                assert_eq!(before, after, "{} drifted under freeze", id);
            }
        }
        for ((id, before), (_, after)) in
            m_at_boundary.fields().into_iter().zip(opt.m.fields())
        {
            if id.block_index() == Some(0) {
                assert_eq!(before, after, "{} first moment drifted", id);
            } else {
                assert_ne!(before, after, "{} first moment should train", id);
            }
        }
        for ((id, before), (_, after)) in
            v_at_boundary.fields().into_iter().zip(opt.v.fields())
        {
            if id.block_index() == Some(0) {
                assert_eq!(before, after, "{} second moment drifted", id);
            }
        }
    }
}
