//! Quick training-throughput check at the desk configuration.

use detour::data::{generate_corpus, pack_stream, DomainSpec, MaskingScheme, VocabLayout};
use detour::model::{init_model, ModelConfig};
use detour::trainer::{
    train_phase, AdamHyperparams, Objective, OptimizerState, PhaseConfig, Schedule, TokenStream,
    TrainContext,
};
use std::time::Instant;

fn main() {
    let cfg = ModelConfig::desk_default();
    let vocab = VocabLayout::encoder(cfg.vocab_size).unwrap();
    let spec = DomainSpec::desk(&vocab, 0.5).unwrap();
    let docs = generate_corpus(&spec, 6000, 1).unwrap();
    let seqs = pack_stream(&docs, cfg.max_seq_len, vocab.eos_id).unwrap();
    let mut stream = TokenStream::new(seqs).unwrap();
    println!("stream: {} tokens", stream.remaining_tokens());

    let mut model = init_model::<f32>(&cfg, 1).unwrap();
    let mut opt = OptimizerState::new(&cfg, AdamHyperparams::default());
    let steps = 40u64;
    let batch_sequences = 16usize;
    let budget = steps * (batch_sequences * cfg.max_seq_len) as u64;
    let phase = PhaseConfig {
        objective: Objective::Clm,
        mask_mode: detour::model::AttentionMaskMode::Causal,
        token_budget: budget,
        mask_rate: 0.0,
        schedule: Schedule::WarmupThenConstant { warmup_tokens: 0 },
        freeze: None,
        peak_lr: 2e-4,
    };
    let ctx = TrainContext {
        vocab: &vocab,
        batch_sequences,
        metrics_every: 10,
        masking_scheme: MaskingScheme::MaskOnly,
        phase_index: 0,
        run_seed: 1,
    };
    // phase breakdown on a single sequence
    {
        use detour::model::AttentionMaskMode;
        use detour::numerics::ops::cross_entropy_with_grad_sums;
        let ids: Vec<u32> = (0..256u32).map(|i| 100 + (i % 300)).collect();
        let reps = 40;
        let t = Instant::now();
        for _ in 0..reps {
            let _ = model.forward(&ids, AttentionMaskMode::Causal, false).unwrap();
        }
        let fwd_eval = t.elapsed().as_secs_f64() / reps as f64;
        let t = Instant::now();
        let mut cache = None;
        for _ in 0..reps {
            cache = Some(model.forward_train(&ids, AttentionMaskMode::Causal, None).unwrap());
        }
        let fwd_train = t.elapsed().as_secs_f64() / reps as f64;
        let (logits, cache) = cache.unwrap();
        let targets: Vec<u32> = ids.iter().map(|&x| x).collect();
        let mask = vec![true; 256];
        let (_, _, dlogits) =
            cross_entropy_with_grad_sums(&logits, &targets, &mask, None).unwrap();
        let t = Instant::now();
        for _ in 0..reps {
            let _ = model.backward(&cache, &dlogits);
        }
        let bwd = t.elapsed().as_secs_f64() / reps as f64;
        let t = Instant::now();
        for _ in 0..reps {
            let _ = cross_entropy_with_grad_sums(&logits, &targets, &mask, None).unwrap();
        }
        let ce = t.elapsed().as_secs_f64() / reps as f64;
        println!(
            "per-seq (256 tok): fwd_eval {:.2}ms  fwd_train {:.2}ms  ce {:.2}ms  bwd {:.2}ms",
            fwd_eval * 1e3,
            fwd_train * 1e3,
            ce * 1e3,
            bwd * 1e3
        );
        let t = Instant::now();
        let grads = model.backward(&cache, &dlogits);
        for _ in 0..reps {
            opt.step(&mut model, &grads, 1e-9, None).unwrap();
        }
        println!("opt step: {:.2}ms", t.elapsed().as_secs_f64() / reps as f64 * 1e3);
    }

    let t0 = Instant::now();
    let metrics = train_phase(&mut model, &mut opt, &phase, &mut stream, &ctx).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    let tps = budget as f64 / dt;
    println!(
        "CLM: {} steps, {:.1}s, {:.0} tokens/s, last loss {:.4}",
        steps,
        dt,
        tps,
        metrics.last().unwrap().loss
    );
    println!(
        "projected desk experiment (16.1M tokens): {:.1} min",
        16.1e6 / tps / 60.0
    );
}
