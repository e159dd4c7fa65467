//! Needle-in-haystack dataset generation.
//!
//! Each example is a haystack with a templated fact spliced in at a
//! controlled position, plus a query fact. Positives query the inserted
//! fact; negatives insert a distractor from the same template (different
//! slot values) and query the original, which forces precise retrieval.

use super::template::FactTemplate;
use crate::error::{DetourError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PositionBucket {
    Start,
    Middle,
    End,
}

impl PositionBucket {
    pub fn insertion_fraction(&self) -> f64 {
        match self {
            PositionBucket::Start => 0.05,
            PositionBucket::Middle => 0.50,
            PositionBucket::End => 0.95,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PositionBucket::Start => "start",
            PositionBucket::Middle => "middle",
            PositionBucket::End => "end",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "start" => Some(PositionBucket::Start),
            "middle" => Some(PositionBucket::Middle),
            "end" => Some(PositionBucket::End),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleExample {
    /// Haystack tokens with the fact (or distractor) already inserted.
    pub haystack: Vec<u32>,
    /// The instantiation actually inserted.
    pub inserted: Vec<u32>,
    /// The queried instantiation; equals `inserted` iff `present`.
    pub query: Vec<u32>,
    pub present: bool,
    /// Total encoder input length (haystack + EOS + query).
    pub length_bucket: usize,
    pub position: PositionBucket,
}

impl NeedleExample {
    /// Encoder input: haystack, separator, query.
    pub fn encoder_input(&self, eos_id: u32) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.length_bucket);
        out.extend(&self.haystack);
        out.push(eos_id);
        out.extend(&self.query);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleDatasetConfig {
    /// Total encoder input lengths per bucket.
    pub lengths: Vec<usize>,
    pub positions: Vec<PositionBucket>,
    /// Examples per (length, position) cell; must be even for exact balance.
    pub pairs_per_cell: usize,
    /// Train/val/test fractions; must sum to 1.
    pub split: (f64, f64, f64),
}

impl NeedleDatasetConfig {
    pub fn desk(pairs_per_cell: usize) -> Self {
        NeedleDatasetConfig {
            lengths: vec![32, 64, 128, 192, 256],
            positions: vec![
                PositionBucket::Start,
                PositionBucket::Middle,
                PositionBucket::End,
            ],
            pairs_per_cell,
            split: (0.70, 0.15, 0.15),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() || self.positions.is_empty() {
            return Err(DetourError::InvalidConfig("needle: empty bucket lists".into()));
        }
        if self.pairs_per_cell == 0 || self.pairs_per_cell % 2 != 0 {
            return Err(DetourError::InvalidConfig(format!(
                "needle: pairs_per_cell {} must be positive and even",
                self.pairs_per_cell
            )));
        }
        let (a, b, c) = self.split;
        if a <= 0.0 || b < 0.0 || c < 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(DetourError::InvalidConfig(format!(
                "needle: split {:?} must be positive and sum to 1",
                self.split
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NeedleDataset {
    pub train: Vec<NeedleExample>,
    pub val: Vec<NeedleExample>,
    pub test: Vec<NeedleExample>,
}

impl NeedleDataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &NeedleExample> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Exact contiguous subsequence scan.
pub fn contains_subsequence(haystack: &[u32], needle: &[u32]) -> bool {
    if needle.is_empty() || haystack.len() < needle.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}

struct CorpusCursor<'a> {
    docs: &'a [Vec<u32>],
}

impl<'a> CorpusCursor<'a> {
    /// `n` corpus tokens starting at a random document/offset, spilling over
    /// document boundaries as needed.
    fn draw(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
        let mut out = Vec::with_capacity(n);
        let mut doc = rng.gen_range(0..self.docs.len());
        let mut off = rng.gen_range(0..self.docs[doc].len());
        while out.len() < n {
            let d = &self.docs[doc];
            if off >= d.len() {
                doc = (doc + 1) % self.docs.len();
                off = 0;
                continue;
            }
            out.push(d[off]);
            off += 1;
        }
        out
    }
}

/// Generate balanced train/val/test example sets.
///
/// Per cell: exactly `pairs_per_cell` examples, half positive, insertion
/// offset at 5% / 50% / 95% of the haystack length. Deterministic in `seed`.
pub fn generate_needle_dataset(
    cfg: &NeedleDatasetConfig,
    templates: &[FactTemplate],
    corpus: &[Vec<u32>],
    seed: u64,
) -> Result<NeedleDataset> {
    cfg.validate()?;
    if templates.is_empty() {
        return Err(DetourError::InvalidInput("needle: no templates".into()));
    }
    if corpus.is_empty() {
        return Err(DetourError::InvalidInput("needle: empty corpus".into()));
    }
    let max_fact = templates.iter().map(|t| t.len()).max().unwrap();
    let corpus_tokens: usize = corpus.iter().map(|d| d.len()).sum();
    let largest = *cfg.lengths.iter().max().unwrap();
    if corpus_tokens < largest {
        return Err(DetourError::InvalidInput(format!(
            "needle: corpus has {} tokens, largest bucket needs {}",
            corpus_tokens, largest
        )));
    }
    for &l in &cfg.lengths {
        if l < 2 * max_fact + 2 {
            return Err(DetourError::InvalidConfig(format!(
                "needle: bucket length {} too small for facts up to {} tokens",
                l, max_fact
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cursor = CorpusCursor { docs: corpus };
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for &length in &cfg.lengths {
        for &position in &cfg.positions {
            let mut positives = Vec::with_capacity(cfg.pairs_per_cell / 2);
            let mut negatives = Vec::with_capacity(cfg.pairs_per_cell / 2);
            for i in 0..cfg.pairs_per_cell {
                let present = i % 2 == 0;
                let tpl = &templates[rng.gen_range(0..templates.len())];
                let fill = tpl.random_fill(&mut rng);
                let fact = tpl.instantiate(&fill)?;
                let inserted = if present {
                    fact.clone()
                } else {
                    tpl.instantiate(&tpl.distractor_fill(&fill, &mut rng))?
                };
                // total = (core + fact) + eos + query
                let core_len = length - 2 * fact.len() - 1;
                let core = cursor.draw(core_len, &mut rng);
                let offset = ((core_len as f64) * position.insertion_fraction()).round() as usize;
                let offset = offset.min(core_len);
                let mut haystack = Vec::with_capacity(core_len + inserted.len());
                haystack.extend(&core[..offset]);
                haystack.extend(&inserted);
                haystack.extend(&core[offset..]);

                // integrity scans
                if present {
                    if haystack[offset..offset + fact.len()] != fact[..] {
                        return Err(DetourError::InvalidInput(
                            "needle: inserted fact not found at offset".into(),
                        ));
                    }
                } else if contains_subsequence(&haystack, &fact) {
                    return Err(DetourError::InvalidInput(
                        "needle: query leaked into a negative haystack".into(),
                    ));
                }

                let ex = NeedleExample {
                    haystack,
                    inserted,
                    query: fact,
                    present,
                    length_bucket: length,
                    position,
                };
                if present {
                    positives.push(ex);
                } else {
                    negatives.push(ex);
                }
            }
            // identical allocation for both classes keeps every split cell
            // balanced
            let n = positives.len();
            let n_val = (n as f64 * cfg.split.1).floor() as usize;
            let n_test = (n as f64 * cfg.split.2).floor() as usize;
            let n_train = n - n_val - n_test;
            for class in [positives, negatives] {
                train.extend_from_slice(&class[..n_train]);
                val.extend_from_slice(&class[n_train..n_train + n_val]);
                test.extend_from_slice(&class[n_train + n_val..]);
            }
        }
    }
    Ok(NeedleDataset { train, val, test })
}
