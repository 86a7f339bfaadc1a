//! Atomic output files and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("output types serialize");
    s.push(b'\n');
    s
}

#[derive(Serialize)]
struct Manifest<'a> {
    format_version: u32,
    tool: &'static str,
    version: &'static str,
    command: &'a [String],
    config: &'a serde_json::Value,
    seeds: &'a [u64],
    inputs: &'a BTreeMap<String, String>,
    outputs: &'a BTreeMap<String, String>,
}

/// An output directory that records the digest of everything written to it.
pub struct OutDir {
    root: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(OutDir { root: root.to_path_buf(), inputs: BTreeMap::new(), outputs: BTreeMap::new() })
    }

    pub fn subdir(&self, name: &str) -> Result<()> {
        let p = self.root.join(name);
        fs::create_dir_all(&p).map_err(|e| CliError::io(p, e))
    }

    /// `rel` uses forward slashes and is relative to the output directory.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.root.join(rel), bytes)?;
        self.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.insert(path.display().to_string(), sha256_hex(bytes));
    }

    /// Written last, so a manifest only exists next to a complete output set.
    /// No timestamps: reruns must be byte-identical.
    pub fn finish(self, name: &str, command: &[String], config: serde_json::Value, seeds: &[u64]) -> Result<()> {
        let m = Manifest {
            format_version: 1,
            tool: "nrsfm",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: &config,
            seeds,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        write_atomic(&self.root.join(name), &to_json(&m))
    }
}
