//! On-disk formats: checkpoints, corpora, vocab tables, metrics, datasets.

pub mod checkpoint;
pub mod text_formats;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use text_formats::{
    parse_corpus, parse_metrics, parse_needle_examples, parse_vocab, write_corpus, write_metrics,
    write_needle_examples, write_vocab,
};
