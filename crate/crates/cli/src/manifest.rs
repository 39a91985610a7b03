use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::Failure;

pub const MANIFEST_FILE: &str = "manifest.json";
/// Environment variable that relocates relative `--out` paths.
pub const OUTPUT_ROOT_ENV: &str = "ULD_OUTPUT_ROOT";

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// SHA-256 of every output file, keyed by path relative to the output directory.
    pub artifacts: BTreeMap<String, String>,
    pub timestamp: String,
}

/// `--out` resolved against the output-root override when relative.
pub fn resolve_out(out: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if out.is_relative() => PathBuf::from(root).join(out),
        _ => out.to_path_buf(),
    }
}

pub fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("cannot create {}: {e}", dir.display())))
}

fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect_files(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) -> Result<(), Failure> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Failure::Data(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, base, out)?;
        } else if p.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            out.push(p.strip_prefix(base).unwrap_or(&p).to_path_buf());
        }
    }
    Ok(())
}

impl RunManifest {
    pub fn new(command: &str, config: Option<PathBuf>, seed: Option<u64>, inputs: Vec<PathBuf>) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            seed,
            inputs,
            outputs: Vec::new(),
            artifacts: BTreeMap::new(),
            timestamp: String::new(),
        }
    }

    /// Hashes every file under `out_dir` and writes `manifest.json` there.
    pub fn finish(mut self, out_dir: &Path) -> Result<(), Failure> {
        let mut files = Vec::new();
        collect_files(out_dir, out_dir, &mut files)?;
        for f in &files {
            self.artifacts
                .insert(f.to_string_lossy().replace('\\', "/"), sha256_file(&out_dir.join(f))?);
        }
        self.outputs = files;
        self.timestamp = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        let path = out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
    }
}
