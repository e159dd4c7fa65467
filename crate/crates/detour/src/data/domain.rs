//! Synthetic record-grammar corpus with a controllable domain shift.

use super::vocab::VocabLayout;
use crate::error::{DetourError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A slot lexicon: shared and domain-exclusive variants of one field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub shared: Vec<u32>,
    pub exclusive: Vec<u32>,
}

/// A record template: a sequence of slot references, each expanding to one
/// token drawn from its lexicon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub slots: Vec<usize>,
}

/// Probabilistic token grammar over record-like documents.
///
/// Every emitted token is a slot draw; with probability `domain_shift` the
/// draw comes from the slot's exclusive lexicon, so the exclusive-token
/// frequency of a large sample converges to `domain_shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub lexicons: Vec<Lexicon>,
    pub templates: Vec<Template>,
    pub doc_len_min: usize,
    pub doc_len_max: usize,
    pub domain_shift: f64,
}

impl DomainSpec {
    /// Desk grammar over the standard vocab layout: six record templates,
    /// one marker lexicon per template plus four value lexicons.
    pub fn desk(vocab: &VocabLayout, domain_shift: f64) -> Result<Self> {
        let split = |r: &std::ops::Range<u32>, parts: usize, i: usize| -> Vec<u32> {
            let n = (r.end - r.start) as usize;
            let chunk = n / parts;
            (r.start + (i * chunk) as u32..r.start + ((i + 1) * chunk) as u32).collect()
        };
        let n_templates = 6;
        let mut lexicons = Vec::new();
        // lexicon t = marker lexicon of template t
        for t in 0..n_templates {
            lexicons.push(Lexicon {
                shared: split(&vocab.markers_shared, n_templates, t),
                exclusive: split(&vocab.markers_exclusive, n_templates, t),
            });
        }
        // four value lexicons, slot position -> lexicon
        for j in 0..4 {
            lexicons.push(Lexicon {
                shared: split(&vocab.values_shared, 4, j),
                exclusive: split(&vocab.values_exclusive, 4, j),
            });
        }
        // template t: marker, value_a, marker, value_b, ... lengths 4..8
        let templates = (0..n_templates)
            .map(|t| {
                let n_fields = 2 + t % 3; // 2..4 fields
                let mut slots = Vec::new();
                for f in 0..n_fields {
                    slots.push(t); // template marker lexicon
                    slots.push(n_templates + (t + f) % 4); // value lexicon
                }
                Template { slots }
            })
            .collect();
        let spec = DomainSpec {
            lexicons,
            templates,
            doc_len_min: 24,
            doc_len_max: 96,
            domain_shift,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(DetourError::InvalidConfig("empty template set".into()));
        }
        if !(0.0..=1.0).contains(&self.domain_shift) {
            return Err(DetourError::InvalidConfig(format!(
                "domain_shift {} outside [0, 1]",
                self.domain_shift
            )));
        }
        if self.doc_len_min == 0 || self.doc_len_min > self.doc_len_max {
            return Err(DetourError::InvalidConfig(format!(
                "doc length range [{}, {}] invalid",
                self.doc_len_min, self.doc_len_max
            )));
        }
        for t in &self.templates {
            if t.slots.is_empty() {
                return Err(DetourError::InvalidConfig("template with no slots".into()));
            }
            for &s in &t.slots {
                let lex = self.lexicons.get(s).ok_or_else(|| {
                    DetourError::InvalidConfig(format!("slot references missing lexicon {}", s))
                })?;
                if lex.shared.is_empty() || (self.domain_shift > 0.0 && lex.exclusive.is_empty()) {
                    return Err(DetourError::InvalidConfig(format!(
                        "lexicon {} lacks tokens for the requested shift",
                        s
                    )));
                }
            }
        }
        Ok(())
    }

    /// True when `id` belongs to any exclusive lexicon of this grammar.
    pub fn is_exclusive_token(&self, id: u32) -> bool {
        self.lexicons.iter().any(|l| l.exclusive.contains(&id))
    }

    /// Restrict the grammar to a single record template (used by the
    /// template-identity probe task).
    pub fn single_template(&self, template: usize) -> Result<Self> {
        let t = self.templates.get(template).ok_or_else(|| {
            DetourError::InvalidInput(format!("no template {}", template))
        })?;
        let mut out = self.clone();
        out.templates = vec![t.clone()];
        Ok(out)
    }
}

fn expand_template(spec: &DomainSpec, t: &Template, rng: &mut ChaCha8Rng, out: &mut Vec<u32>) {
    for &s in &t.slots {
        let lex = &spec.lexicons[s];
        let pool = if spec.domain_shift > 0.0 && rng.gen::<f64>() < spec.domain_shift {
            &lex.exclusive
        } else {
            &lex.shared
        };
        out.push(pool[rng.gen_range(0..pool.len())]);
    }
}

/// Deterministic corpus of `n_docs` documents drawn from the grammar.
pub fn generate_corpus(spec: &DomainSpec, n_docs: usize, seed: u64) -> Result<Vec<Vec<u32>>> {
    spec.validate()?;
    if n_docs == 0 {
        return Err(DetourError::InvalidInput("n_docs must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        docs.push(one_doc(spec, &mut rng));
    }
    Ok(docs)
}

fn one_doc(spec: &DomainSpec, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let target = rng.gen_range(spec.doc_len_min..=spec.doc_len_max);
    let mut doc = Vec::with_capacity(target + 8);
    while doc.len() < target {
        let t = &spec.templates[rng.gen_range(0..spec.templates.len())];
        expand_template(spec, t, rng, &mut doc);
    }
    doc.truncate(target);
    doc
}

/// Generate documents until the corpus holds at least `min_tokens` tokens
/// (counting the EOS separator each document will get when packed).
pub fn generate_corpus_tokens(
    spec: &DomainSpec,
    min_tokens: u64,
    seed: u64,
) -> Result<Vec<Vec<u32>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    let mut total = 0u64;
    while total < min_tokens {
        let doc = one_doc(spec, &mut rng);
        total += doc.len() as u64 + 1;
        docs.push(doc);
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_spec(shift: f64) -> DomainSpec {
        let vocab = VocabLayout::encoder(512).unwrap();
        DomainSpec::desk(&vocab, shift).unwrap()
    }

    #[test]
    fn zero_shift_emits_no_exclusive_tokens() {
        let spec = desk_spec(0.0);
        let docs = generate_corpus(&spec, 200, 1).unwrap();
        for doc in &docs {
            for &t in doc {
                assert!(!spec.is_exclusive_token(t), "exclusive token {} at shift 0", t);
            }
        }
    }

    #[test]
    fn corpus_is_deterministic_in_seed() {
        let spec = desk_spec(0.4);
        let a = generate_corpus(&spec, 50, 7).unwrap();
        let b = generate_corpus(&spec, 50, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&spec, 50, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn exclusive_token_rate_tracks_domain_shift() {
        // frequency count over >= 1e5 tokens: rate within +-10% of 0.3
        let spec = desk_spec(0.3);
        let docs = generate_corpus(&spec, 2500, 11).unwrap();
        let mut total = 0usize;
        let mut exclusive = 0usize;
        for doc in &docs {
            for &t in doc {
                total += 1;
                if spec.is_exclusive_token(t) {
                    exclusive += 1;
                }
            }
        }
        assert!(total >= 100_000, "only {} tokens sampled", total);
        let rate = exclusive as f64 / total as f64;
        assert!(
            (0.27..=0.33).contains(&rate),
            "exclusive rate {} outside [0.27, 0.33]",
            rate
        );
    }

    #[test]
    fn empty_template_set_errors() {
        let mut spec = desk_spec(0.1);
        spec.templates.clear();
        assert!(generate_corpus(&spec, 1, 0).is_err());
    }

    #[test]
    fn doc_lengths_respect_bounds() {
        let spec = desk_spec(0.2);
        let docs = generate_corpus(&spec, 100, 3).unwrap();
        for d in &docs {
            assert!(d.len() >= spec.doc_len_min && d.len() <= spec.doc_len_max);
        }
    }
}
