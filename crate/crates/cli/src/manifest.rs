use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::exit::Failure;

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputFile>,
    /// Paths relative to the manifest's directory.
    pub outputs: Vec<String>,
    pub details: serde_json::Value,
    pub seconds: f64,
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn input(path: &Path) -> Result<InputFile, Failure> {
    Ok(InputFile { path: path.display().to_string(), sha256: sha256_file(path)? })
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let tmp = path.with_extension("tmp");
    let io = |e: std::io::Error| Failure::io(path, e);
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

impl RunManifest {
    /// Serializes the manifest to `path`, listing `outputs` relative to its
    /// directory. Fails if any listed output is missing.
    pub fn write(mut self, path: &Path, outputs: &[PathBuf]) -> Result<(), Failure> {
        let dir = path.parent().unwrap_or(Path::new("."));
        for o in outputs {
            if !o.is_file() {
                return Err(Failure::io(o, std::io::Error::other("missing output")));
            }
            let rel = o.strip_prefix(dir).unwrap_or(o);
            self.outputs.push(rel.display().to_string());
        }
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        write_atomic(path, text.as_bytes())
    }
}
