//! Synthetic corpus generation, packing and batch construction.

pub mod batch;
pub mod domain;
pub mod pack;
pub mod vocab;

pub use batch::{apply_mlm_masking, make_clm_batch, CausalBatch, MaskedBatch, MaskingScheme};
pub use domain::{generate_corpus, generate_corpus_tokens, DomainSpec, Lexicon, Template};
pub use pack::{pack_stream, PackedSequence};
pub use vocab::{VocabLayout, EOS_ID, PAD_ID};
