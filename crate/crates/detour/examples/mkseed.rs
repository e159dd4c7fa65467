use detour::data::*;
use detour::experiment::{ExperimentKind, ExperimentSpec};
use detour::io::*;
use detour::model::{init_model, ModelConfig};
use detour::needle::*;
use detour::trainer::MetricsRecord;

fn main() {
    let root = std::path::Path::new("fuzz/corpus");
    let w = |dir: &str, name: &str, bytes: &[u8]| {
        let d = root.join(dir);
        std::fs::create_dir_all(&d).unwrap();
        std::fs::write(d.join(name), bytes).unwrap();
    };
    // checkpoint seed: smallest valid model
    let cfg = ModelConfig {
        n_layers: 1, hidden_dim: 8, n_heads: 2, vocab_size: 8, max_seq_len: 8,
        rope_base: 10_000.0, dropout_rate: 0.0, init_std: 0.02, ln_eps: 1e-5,
        mask_token_id: Some(2),
    };
    let m = init_model::<f32>(&cfg, 0).unwrap();
    let meta = CheckpointMeta { phase: "seed".into(), run_seed: 1, data_seed: 2, tokens: 64 };
    w("checkpoint", "tiny.ckpt", &save_checkpoint(&m, &meta));
    // corpus + vocab seeds
    let vocab = VocabLayout::encoder(512).unwrap();
    let spec = DomainSpec::desk(&vocab, 0.3).unwrap();
    let docs = generate_corpus(&spec, 4, 3).unwrap();
    w("corpus_file", "docs.txt", write_corpus(&docs).as_bytes());
    w("vocab_file", "vocab.tsv", write_vocab(&vocab).as_bytes());
    // metrics seed
    let recs = vec![MetricsRecord { phase: 0, step: 1, tokens: 4096, loss: 6.1, lr: 2e-4, wall_secs: 0.5 }];
    w("metrics_file", "metrics.jsonl", write_metrics(&recs).as_bytes());
    // needle dataset seed
    let cfg = NeedleDatasetConfig { lengths: vec![32], positions: vec![PositionBucket::Middle], pairs_per_cell: 2, split: (0.5, 0.25, 0.25) };
    let templates = desk_templates(&vocab).unwrap();
    let ds = generate_needle_dataset(&cfg, &templates, &docs, 1).unwrap();
    let all: Vec<NeedleExample> = ds.all().cloned().collect();
    w("needle_dataset", "examples.csv", write_needle_examples(&all).as_bytes());
    // spec seed
    let spec = ExperimentSpec::desk(ExperimentKind::DetourVsBaseline);
    w("experiment_spec", "desk.toml", spec.to_toml().as_bytes());
    println!("seeds written");
}
