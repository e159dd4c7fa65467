//! Plain-text data formats: corpus files (one document per line,
//! whitespace-separated token ids), vocab tables, metrics lines and needle
//! dataset files.

use crate::data::VocabLayout;
use crate::error::{DetourError, Result};
use crate::needle::{NeedleExample, PositionBucket};
use crate::trainer::MetricsRecord;

pub fn write_corpus(docs: &[Vec<u32>]) -> String {
    let mut out = String::new();
    for doc in docs {
        let mut first = true;
        for t in doc {
            if !first {
                out.push(' ');
            }
            out.push_str(&t.to_string());
            first = false;
        }
        out.push('\n');
    }
    out
}

/// Parse a corpus file; empty lines are empty documents.
pub fn parse_corpus(text: &str) -> Result<Vec<Vec<u32>>> {
    let mut docs = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut doc = Vec::new();
        for tok in line.split_whitespace() {
            let id: u32 = tok.parse().map_err(|_| {
                DetourError::Parse(format!("corpus line {}: bad token id `{}`", ln + 1, tok))
            })?;
            doc.push(id);
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Token id <-> string table, one `<id>\t<name>` pair per line.
pub fn write_vocab(layout: &VocabLayout) -> String {
    let mut out = String::new();
    for id in 0..layout.vocab_size as u32 {
        out.push_str(&format!("{}\t{}\n", id, layout.token_name(id)));
    }
    out
}

pub fn parse_vocab(text: &str) -> Result<Vec<(u32, String)>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, name) = line.split_once('\t').ok_or_else(|| {
            DetourError::Parse(format!("vocab line {}: missing tab separator", ln + 1))
        })?;
        let id: u32 = id.parse().map_err(|_| {
            DetourError::Parse(format!("vocab line {}: bad id `{}`", ln + 1, id))
        })?;
        out.push((id, name.to_string()));
    }
    Ok(out)
}

/// Append-only line-delimited metrics: one JSON object per line.
pub fn write_metrics(records: &[MetricsRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("metrics serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: MetricsRecord = serde_json::from_str(line).map_err(|e| {
            DetourError::Parse(format!("metrics line {}: {}", ln + 1, e))
        })?;
        out.push(r);
    }
    Ok(out)
}

fn ids_to_string(ids: &[u32]) -> String {
    ids.iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_ids(s: &str, what: &str, ln: usize) -> Result<Vec<u32>> {
    s.split_whitespace()
        .map(|t| {
            t.parse().map_err(|_| {
                DetourError::Parse(format!("needle line {}: bad {} id `{}`", ln, what, t))
            })
        })
        .collect()
}

/// One example per line: label, length bucket, position bucket, haystack
/// ids, query ids (comma-separated fields, space-separated ids).
pub fn write_needle_examples(examples: &[NeedleExample]) -> String {
    let mut out = String::new();
    for e in examples {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            if e.present { "present" } else { "absent" },
            e.length_bucket,
            e.position.name(),
            ids_to_string(&e.haystack),
            ids_to_string(&e.query),
        ));
    }
    out
}

/// Parse a needle dataset file. The inserted instantiation is not stored;
/// it is recovered for positives (it equals the query) and left empty for
/// negatives.
pub fn parse_needle_examples(text: &str) -> Result<Vec<NeedleExample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(5, ',').collect();
        if fields.len() != 5 {
            return Err(DetourError::Parse(format!(
                "needle line {}: expected 5 comma-separated fields, got {}",
                ln,
                fields.len()
            )));
        }
        let present = match fields[0] {
            "present" => true,
            "absent" => false,
            other => {
                return Err(DetourError::Parse(format!(
                    "needle line {}: bad label `{}`",
                    ln, other
                )))
            }
        };
        let length_bucket: usize = fields[1].parse().map_err(|_| {
            DetourError::Parse(format!("needle line {}: bad length `{}`", ln, fields[1]))
        })?;
        let position = PositionBucket::parse(fields[2]).ok_or_else(|| {
            DetourError::Parse(format!("needle line {}: bad position `{}`", ln, fields[2]))
        })?;
        let haystack = parse_ids(fields[3], "haystack", ln)?;
        let query = parse_ids(fields[4], "query", ln)?;
        if query.is_empty() {
            return Err(DetourError::Parse(format!("needle line {}: empty query", ln)));
        }
        let inserted = if present { query.clone() } else { Vec::new() };
        out.push(NeedleExample {
            haystack,
            inserted,
            query,
            present,
            length_bucket,
            position,
        });
    }
    Ok(out)
}
