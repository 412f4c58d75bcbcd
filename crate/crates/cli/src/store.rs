//! Artifact layout `<outdir>/<stage>/<name>` plus a run manifest with content hashes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use epialloc_core::GaConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const STAGES: [&str; 10] =
    ["simulate", "synth", "fit-gp", "fit-nlls", "sample", "reduce", "augment", "optimize", "evaluate", "report"];

/// First eight bytes of `sha256(master_seed_le || stage)` as a little-endian integer.
pub fn stage_seed(master: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(stage.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    /// Upstream artifacts (relative path to SHA-256).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub inputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ga: Option<GaConfig>,
}

/// A JSON artifact: provenance next to the payload fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stage: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub stage_seeds: BTreeMap<String, u64>,
    pub config: ExperimentConfig,
    pub artifacts: BTreeMap<String, ManifestEntry>,
}

pub struct Store {
    root: PathBuf,
    config: ExperimentConfig,
    config_hash: String,
}

fn io_err(file: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { file: file.to_path_buf(), source }
}

impl Store {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self { root: PathBuf::from(&config.outdir), config: config.clone(), config_hash: config.hash() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn seed(&self, stage: &str) -> u64 {
        stage_seed(self.config.seed, stage)
    }

    pub fn relative(stage: &str, name: &str) -> String {
        format!("{stage}/{name}")
    }

    pub fn path(&self, stage: &str, name: &str) -> PathBuf {
        self.root.join(stage).join(name)
    }

    pub fn provenance(&self, stage: &str) -> Provenance {
        Provenance {
            stage: stage.into(),
            config_hash: self.config_hash.clone(),
            seed: self.seed(stage),
            inputs: BTreeMap::new(),
            mode: None,
            ga: None,
        }
    }

    /// Writes `bytes` and records the artifact in the manifest.
    pub fn write(&self, stage: &str, name: &str, bytes: &[u8]) -> Result<String> {
        let path = self.path(stage, name);
        let dir = path.parent().expect("artifact path has a stage directory");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        fs::write(&path, bytes).map_err(io_err(&path))?;
        let digest = sha256_hex(bytes);
        self.record(&Self::relative(stage, name), stage, &digest)?;
        Ok(digest)
    }

    pub fn write_json<T: Serialize>(&self, stage: &str, name: &str, value: &T) -> Result<String> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.write(stage, name, text.as_bytes())
    }

    /// Reads an upstream artifact, returning it with its hash.
    pub fn read_bytes(&self, stage: &str, name: &str) -> Result<(Vec<u8>, String)> {
        let path = self.path(stage, name);
        if !path.exists() {
            return Err(CliError::Missing { stage: stage.into(), file: path });
        }
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let digest = sha256_hex(&bytes);
        Ok((bytes, digest))
    }

    pub fn read_json<T: DeserializeOwned>(&self, stage: &str, name: &str) -> Result<(Artifact<T>, String)> {
        let (bytes, digest) = self.read_bytes(stage, name)?;
        let art: Artifact<T> = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::config(Self::relative(stage, name), format!("unreadable artifact: {e}")))?;
        if art.provenance.config_hash != self.config_hash {
            eprintln!(
                "warning: {} was produced under a different configuration ({})",
                Self::relative(stage, name),
                &art.provenance.config_hash[..art.provenance.config_hash.len().min(12)]
            );
        }
        Ok((art, digest))
    }

    fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    fn record(&self, rel: &str, stage: &str, digest: &str) -> Result<()> {
        let path = self.manifest_path();
        let mut manifest = match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice::<Manifest>(&bytes).ok(),
            Err(_) => None,
        }
        .filter(|m| m.config_hash == self.config_hash)
        .unwrap_or_else(|| self.fresh_manifest());
        manifest.config = self.hashed_config();
        manifest.artifacts.insert(rel.into(), ManifestEntry { stage: stage.into(), sha256: digest.into() });
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))
    }

    fn hashed_config(&self) -> ExperimentConfig {
        let mut c = self.config.clone();
        c.outdir.clear();
        c.threads = None;
        c
    }

    fn fresh_manifest(&self) -> Manifest {
        Manifest {
            config_hash: self.config_hash.clone(),
            seed: self.config.seed,
            stage_seeds: STAGES.iter().map(|s| (s.to_string(), self.seed(s))).collect(),
            config: self.hashed_config(),
            artifacts: BTreeMap::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use epialloc_core::GpHyperParams;

    #[test]
    fn stage_seeds_differ_and_are_stable() {
        assert_eq!(stage_seed(0, "sample"), stage_seed(0, "sample"));
        assert_ne!(stage_seed(0, "sample"), stage_seed(0, "synth"));
        assert_ne!(stage_seed(0, "sample"), stage_seed(1, "sample"));
    }

    #[test]
    fn flattened_hyperparameters_round_trip() {
        let json = r#"{"provenance":{"stage":"fit-gp","config_hash":"ab","seed":3},
            "S":{"sigma_f":1.0,"length_scale":2.0,"sigma_obs":0.1},"lambda":0.01}"#;
        let a: Artifact<GpHyperParams> = serde_json::from_str(json).unwrap();
        assert_eq!(a.body.states.len(), 1);
        assert_eq!(a.body.lambda, 0.01);
        let back: Artifact<GpHyperParams> = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(back, a);
    }
}
