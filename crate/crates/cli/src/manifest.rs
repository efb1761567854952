//! Run manifests: what went in, what came out, and the checksums of both.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vabc::config::RunConfig;
use vabc::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub subcommand: String,
    pub version: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    /// Consumed files, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    /// Produced files, keyed by name relative to the output directory.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(subcommand: &str, config: &RunConfig) -> Self {
        let seeds = BTreeMap::from([
            ("dataset".to_string(), config.dataset.seed),
            ("train".to_string(), config.train.seed),
            ("classifier".to_string(), config.eval.classifier_seed),
        ]);
        Manifest {
            subcommand: subcommand.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            seeds,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let s = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&s)
            .map_err(|e| Error::Checkpoint(format!("{}: unreadable manifest: {e}", path.display())))
    }

    pub fn record_input(&mut self, path: &Path, sha: String) {
        self.inputs.insert(path.display().to_string(), sha);
    }

    /// Writes every output, then the manifest listing them.
    pub fn write(mut self, dir: &Path, files: &[(String, Vec<u8>)]) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, bytes) in files {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            self.outputs.insert(name.clone(), sha256_hex(bytes));
        }
        let path = dir.join(MANIFEST_FILE);
        let mut s = serde_json::to_string_pretty(&self)?;
        s.push('\n');
        std::fs::write(&path, s).map_err(|e| Error::io(&path, e))
    }
}

/// A checkpoint whose checksum matched the manifest next to it.
pub struct VerifiedCheckpoint {
    pub path: PathBuf,
    pub contents: String,
    pub sha256: String,
    pub manifest: Manifest,
}

/// Reads a checkpoint and checks it against the manifest in its directory
/// before anything parses it.
pub fn verify_checkpoint(path: &Path) -> Result<VerifiedCheckpoint> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let manifest = Manifest::read(dir)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| Error::Checkpoint(format!("{} is not a file path", path.display())))?;
    let expected = manifest.outputs.get(&name).ok_or_else(|| {
        Error::Checkpoint(format!("{name} is not listed in {}", dir.join(MANIFEST_FILE).display()))
    })?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let actual = sha256_hex(&bytes);
    if &actual != expected {
        return Err(Error::Checkpoint(format!(
            "{}: checksum mismatch (manifest {expected}, file {actual})",
            path.display()
        )));
    }
    let contents = String::from_utf8(bytes)
        .map_err(|_| Error::Checkpoint(format!("{} is not UTF-8", path.display())))?;
    Ok(VerifiedCheckpoint {
        path: path.to_path_buf(),
        contents,
        sha256: actual,
        manifest,
    })
}
