//! Run manifests: a reproducibility record of what an experiment produced.

use crate::error::{DetourError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: String,
    /// SHA-256 of the resolved spec TOML.
    pub spec_hash: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<String>,
    /// Relative checkpoint path -> SHA-256 of the file contents.
    pub checkpoints: BTreeMap<String, String>,
    pub wall_secs: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{:02x}", b));
    }
    out
}

impl RunManifest {
    /// Hash every `.ckpt` file under `root/runs` and `root/base`.
    pub fn collect_checkpoints(&mut self, root: &Path) -> Result<()> {
        self.checkpoints.clear();
        for sub in ["base", "runs"] {
            let dir = root.join(sub);
            if dir.exists() {
                collect_dir(&dir, root, &mut self.checkpoints)?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| DetourError::Parse(format!("manifest: {}", e)))
    }
}

fn collect_dir(
    dir: &Path,
    root: &Path,
    out: &mut BTreeMap<String, String>,
) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect_dir(&path, root, out)?;
        } else if path.extension().map_or(false, |x| x == "ckpt") {
            let bytes = std::fs::read(&path)?;
            let rel = path
                .strip_prefix(root)
                .unwrap_or(&path)
                .to_string_lossy()
                .replace('\\', "/");
            out.insert(rel, sha256_hex(&bytes));
        }
    }
    Ok(())
}
