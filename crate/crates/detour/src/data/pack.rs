//! Sequence packing: documents concatenated with EOS separators and chunked
//! into fixed windows. Attention is never masked across document boundaries.

use crate::error::{DetourError, Result};

/// One packed token window.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedSequence {
    pub tokens: Vec<u32>,
    /// Offsets of document-final EOS tokens within this window.
    pub boundaries: Vec<usize>,
}

impl PackedSequence {
    pub fn window(&self) -> usize {
        self.tokens.len()
    }
}

/// Concatenate `doc EOS doc EOS ...` and chunk into consecutive windows; the
/// final partial chunk is dropped.
pub fn pack_stream(docs: &[Vec<u32>], window: usize, eos_id: u32) -> Result<Vec<PackedSequence>> {
    if window < 2 {
        return Err(DetourError::InvalidInput(format!(
            "pack_stream: window {} must be >= 2",
            window
        )));
    }
    let total: usize = docs.iter().map(|d| d.len() + 1).sum();
    let mut out = Vec::with_capacity(total / window);
    let mut cur: Vec<u32> = Vec::with_capacity(window);
    let mut bounds: Vec<usize> = Vec::new();
    let mut push = |t: u32, is_boundary: bool, out: &mut Vec<PackedSequence>| {
        cur.push(t);
        if is_boundary {
            bounds.push(cur.len() - 1);
        }
        if cur.len() == window {
            out.push(PackedSequence {
                tokens: std::mem::take(&mut cur),
                boundaries: std::mem::take(&mut bounds),
            });
            cur.reserve(window);
        }
    };
    for doc in docs {
        for &t in doc {
            push(t, false, &mut out);
        }
        push(eos_id, true, &mut out);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EOS: u32 = 1;

    #[test]
    fn two_docs_window_four() {
        // docs [a b c], [d e] -> first window [a b c EOS]; trailing partial
        // [d e EOS] is dropped
        let docs = vec![vec![10, 11, 12], vec![13, 14]];
        let seqs = pack_stream(&docs, 4, EOS).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].tokens, vec![10, 11, 12, EOS]);
        assert_eq!(seqs[0].boundaries, vec![3]);
        // a third doc lets the second window swallow the next stream token
        let docs = vec![vec![10, 11, 12], vec![13, 14], vec![20, 21, 22]];
        let seqs = pack_stream(&docs, 4, EOS).unwrap();
        assert_eq!(seqs[1].tokens, vec![13, 14, EOS, 20]);
        assert_eq!(seqs[1].boundaries, vec![2]);
    }

    #[test]
    fn short_stream_yields_nothing() {
        let docs = vec![vec![5, 6]];
        let seqs = pack_stream(&docs, 8, EOS).unwrap();
        assert!(seqs.is_empty());
    }

    #[test]
    fn packing_is_lossless_up_to_dropped_tail() {
        // reconstruction check over 1000 random documents, bit-exact
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let docs: Vec<Vec<u32>> = (0..1000)
            .map(|_| {
                (0..rng.gen_range(1..40))
                    .map(|_| rng.gen_range(2..500))
                    .collect()
            })
            .collect();
        let window = 16;
        let seqs = pack_stream(&docs, window, EOS).unwrap();
        let mut stream: Vec<u32> = Vec::new();
        for d in &docs {
            stream.extend(d);
            stream.push(EOS);
        }
        let emitted: Vec<u32> = seqs.iter().flat_map(|s| s.tokens.iter().copied()).collect();
        assert_eq!(emitted.len(), (stream.len() / window) * window);
        assert_eq!(&stream[..emitted.len()], &emitted[..]);
        // every boundary offset points at an EOS
        for s in &seqs {
            for &b in &s.boundaries {
                assert_eq!(s.tokens[b], EOS);
            }
        }
    }

    #[test]
    fn rejects_tiny_window() {
        assert!(pack_stream(&[vec![1, 2]], 1, EOS).is_err());
    }
}
