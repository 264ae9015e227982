use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use apnea_core::wfdb_io::write_atomic;
use sha2::{Digest, Sha256};

pub fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// Writes via a temporary file and rename, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// `<dir>/<stem>-<first 16 hex digits of hash>.<ext>`
pub fn hashed_path(dir: &Path, stem: &str, hash: &str, ext: &str) -> PathBuf {
    dir.join(format!("{stem}-{}.{ext}", &hash[..16]))
}
