//! Checkpoint format: a plain-text key/value header (config, phase
//! provenance, seeds, token count) followed by named little-endian f32
//! parameter blobs in canonical order. Loading validates every blob's name
//! and element count against shapes derived from the header config.

use crate::error::{DetourError, Result};
use crate::model::{ModelConfig, ParamSet, TransformerModel};
use crate::numerics::Scalar;
use serde::{Deserialize, Serialize};

const MAGIC: &str = "detour-checkpoint v1";
// allocation guards for untrusted headers
const MAX_LAYERS: usize = 1024;
const MAX_HIDDEN: usize = 1 << 16;
const MAX_VOCAB: usize = 1 << 24;
const MAX_SEQ: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Free-form phase provenance, e.g. `detour/phase1`.
    pub phase: String,
    pub run_seed: u64,
    pub data_seed: u64,
    /// Cumulative training tokens behind this checkpoint.
    pub tokens: u64,
}

/// Serialize a model (weights cast to f32 on the wire).
pub fn save_checkpoint<E: Scalar>(model: &TransformerModel<E>, meta: &CheckpointMeta) -> Vec<u8> {
    let cfg = &model.config;
    let mut out = Vec::with_capacity(model.params.n_params() * 4 + 1024);
    let push_line = |buf: &mut Vec<u8>, s: String| {
        buf.extend_from_slice(s.as_bytes());
        buf.push(b'\n');
    };
    push_line(&mut out, MAGIC.to_string());
    push_line(&mut out, format!("n_layers {}", cfg.n_layers));
    push_line(&mut out, format!("hidden_dim {}", cfg.hidden_dim));
    push_line(&mut out, format!("n_heads {}", cfg.n_heads));
    push_line(&mut out, format!("vocab_size {}", cfg.vocab_size));
    push_line(&mut out, format!("max_seq_len {}", cfg.max_seq_len));
    push_line(&mut out, format!("rope_base {}", cfg.rope_base));
    push_line(&mut out, format!("dropout_rate {}", cfg.dropout_rate));
    push_line(&mut out, format!("init_std {}", cfg.init_std));
    push_line(&mut out, format!("ln_eps {}", cfg.ln_eps));
    match cfg.mask_token_id {
        Some(m) => push_line(&mut out, format!("mask_token {}", m)),
        None => push_line(&mut out, "mask_token none".to_string()),
    }
    push_line(
        &mut out,
        format!("phase {}", meta.phase.replace(['\n', '\r'], " ")),
    );
    push_line(&mut out, format!("run_seed {}", meta.run_seed));
    push_line(&mut out, format!("data_seed {}", meta.data_seed));
    push_line(&mut out, format!("tokens {}", meta.tokens));
    push_line(&mut out, "end-header".to_string());
    for (id, t) in model.params.fields() {
        push_line(&mut out, format!("blob {} {}", id, t.len()));
        for &v in t.data() {
            out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
        out.push(b'\n');
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<&'a str> {
        if self.pos >= self.bytes.len() {
            return Err(DetourError::Parse("checkpoint: unexpected end of file".into()));
        }
        let rest = &self.bytes[self.pos..];
        let end = rest.iter().position(|&b| b == b'\n').unwrap_or(rest.len());
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| DetourError::Parse("checkpoint: non-utf8 header line".into()))?;
        self.pos += end + 1;
        Ok(line)
    }

    fn raw(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(DetourError::Parse(format!(
                "checkpoint: blob truncated (need {} bytes, {} left)",
                n,
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

fn parse_kv<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| DetourError::Parse(format!("checkpoint: expected `{} ...`, got `{}`", key, line)))
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| DetourError::Parse(format!("checkpoint: bad {}: `{}`", what, s)))
}

/// Parse a checkpoint byte image into an f32 model plus its metadata.
pub fn load_checkpoint(bytes: &[u8]) -> Result<(TransformerModel<f32>, CheckpointMeta)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.line()? != MAGIC {
        return Err(DetourError::Parse("checkpoint: bad magic".into()));
    }
    let n_layers: usize = parse_num(parse_kv(cur.line()?, "n_layers")?, "n_layers")?;
    let hidden_dim: usize = parse_num(parse_kv(cur.line()?, "hidden_dim")?, "hidden_dim")?;
    let n_heads: usize = parse_num(parse_kv(cur.line()?, "n_heads")?, "n_heads")?;
    let vocab_size: usize = parse_num(parse_kv(cur.line()?, "vocab_size")?, "vocab_size")?;
    let max_seq_len: usize = parse_num(parse_kv(cur.line()?, "max_seq_len")?, "max_seq_len")?;
    let rope_base: f64 = parse_num(parse_kv(cur.line()?, "rope_base")?, "rope_base")?;
    let dropout_rate: f64 = parse_num(parse_kv(cur.line()?, "dropout_rate")?, "dropout_rate")?;
    let init_std: f64 = parse_num(parse_kv(cur.line()?, "init_std")?, "init_std")?;
    let ln_eps: f64 = parse_num(parse_kv(cur.line()?, "ln_eps")?, "ln_eps")?;
    let mask_raw = parse_kv(cur.line()?, "mask_token")?;
    let mask_token_id = if mask_raw.trim() == "none" {
        None
    } else {
        Some(parse_num::<u32>(mask_raw, "mask_token")?)
    };
    let phase = parse_kv(cur.line()?, "phase")?.to_string();
    let run_seed: u64 = parse_num(parse_kv(cur.line()?, "run_seed")?, "run_seed")?;
    let data_seed: u64 = parse_num(parse_kv(cur.line()?, "data_seed")?, "data_seed")?;
    let tokens: u64 = parse_num(parse_kv(cur.line()?, "tokens")?, "tokens")?;
    if cur.line()? != "end-header" {
        return Err(DetourError::Parse("checkpoint: missing end-header".into()));
    }

    if n_layers > MAX_LAYERS || hidden_dim > MAX_HIDDEN || vocab_size > MAX_VOCAB
        || max_seq_len > MAX_SEQ
    {
        return Err(DetourError::Parse("checkpoint: header exceeds size limits".into()));
    }
    let config = ModelConfig {
        n_layers,
        hidden_dim,
        n_heads,
        vocab_size,
        max_seq_len,
        rope_base,
        dropout_rate,
        init_std,
        ln_eps,
        mask_token_id,
    };
    config
        .validate()
        .map_err(|e| DetourError::Parse(format!("checkpoint: invalid config: {}", e)))?;

    let mut params = ParamSet::<f32>::zeros(&config);
    // total payload must fit in the remaining bytes before any allocation
    let expected_bytes: usize = params.fields().iter().map(|(_, t)| t.len() * 4).sum();
    if bytes.len() - cur.pos < expected_bytes {
        return Err(DetourError::Parse("checkpoint: payload shorter than header implies".into()));
    }
    for (id, t) in params.fields_mut() {
        let line = cur.line()?;
        let rest = parse_kv(line, "blob")?;
        let (name, count) = rest
            .rsplit_once(' ')
            .ok_or_else(|| DetourError::Parse(format!("checkpoint: bad blob line `{}`", line)))?;
        if name != id.to_string() {
            return Err(DetourError::Parse(format!(
                "checkpoint: expected blob `{}`, found `{}`",
                id, name
            )));
        }
        let count: usize = parse_num(count, "blob length")?;
        if count != t.len() {
            return Err(DetourError::Parse(format!(
                "checkpoint: blob {} has {} elements, shape implies {}",
                id,
                count,
                t.len()
            )));
        }
        let raw = cur.raw(count * 4)?;
        for (dst, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        // trailing newline after each blob
        let _ = cur.raw(1)?;
    }
    let model = TransformerModel { config, params };
    Ok((
        model,
        CheckpointMeta {
            phase,
            run_seed,
            data_seed,
            tokens,
        },
    ))
}
