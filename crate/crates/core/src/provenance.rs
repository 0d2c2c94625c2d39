//! Content hashes and run manifests linking pipeline artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// The reproducibility-relevant part of a run. Two runs with equal cores
/// produce byte-identical artifacts; file locations are deliberately left
/// out so that outputs do not depend on where a run writes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCore {
    pub command: String,
    /// Resolved non-path flags.
    pub params: BTreeMap<String, String>,
    pub seed: Option<u64>,
    /// Content hashes of inputs by role (`scene`, `dataset`, `checkpoint`, ...).
    pub inputs: BTreeMap<String, String>,
    pub tool_version: String,
}

impl ManifestCore {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            params: BTreeMap::new(),
            seed: None,
            inputs: BTreeMap::new(),
            tool_version: TOOL_VERSION.into(),
        }
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.into(), value.to_string());
        self
    }

    pub fn input(mut self, role: &str, hash: &str) -> Self {
        self.inputs.insert(role.into(), hash.into());
        self
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("manifest serializes"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(flatten)]
    pub core: ManifestCore,
    pub manifest_hash: String,
    pub paths: BTreeMap<String, String>,
    /// Content hashes of produced files by path.
    pub outputs: BTreeMap<String, String>,
    pub duration_s: f64,
}

impl RunManifest {
    pub fn new(core: ManifestCore) -> Self {
        let manifest_hash = core.hash();
        Self {
            core,
            manifest_hash,
            paths: BTreeMap::new(),
            outputs: BTreeMap::new(),
            duration_s: 0.0,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// Where the manifest for an artifact is written: `<artifact>.manifest.json`.
pub fn manifest_path(artifact: &Path) -> std::path::PathBuf {
    let mut name = artifact
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}
