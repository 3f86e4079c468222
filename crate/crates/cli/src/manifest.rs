//! `manifest.json`: what each stage wrote, from which config and seed.
//! Each command merges its stage record into the manifest already present
//! in the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context as _, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const MANIFEST_FORMAT: &str = "lcg-manifest";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Named substreams of the root seed used by the stage.
    pub streams: Vec<String>,
    /// Output files, relative to the manifest.
    pub files: Vec<String>,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub core_version: String,
    /// Hash of the most recent stage's resolved config.
    pub config_hash: String,
    pub config: ExperimentConfig,
    /// Every config a recorded stage ran with, by hash.
    #[serde(default)]
    pub configs: BTreeMap<String, ExperimentConfig>,
    pub stages: BTreeMap<String, StageRecord>,
}

/// SHA-256 of the resolved config, ignoring the output directory so that a
/// rerun elsewhere hashes the same.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.out = None;
    let bytes = serde_json::to_vec(&c).expect("config serialises");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)?;
        Ok(Some(
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        ))
    }

    /// Adds or replaces `stage` and writes the manifest.
    pub fn record(dir: &Path, cfg: &ExperimentConfig, stage: &str, rec: StageRecord) -> Result<()> {
        let mut m = Self::load(dir)?.unwrap_or_else(|| RunManifest {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            tool_version: String::new(),
            core_version: String::new(),
            config_hash: String::new(),
            config: cfg.clone(),
            configs: BTreeMap::new(),
            stages: BTreeMap::new(),
        });
        m.tool_version = env!("CARGO_PKG_VERSION").into();
        m.core_version = lcg_core::VERSION.into();
        m.config_hash = rec.config_hash.clone();
        m.config = cfg.clone();
        m.configs.insert(rec.config_hash.clone(), cfg.clone());
        m.stages.insert(stage.to_string(), rec);
        let live: Vec<&String> = m.stages.values().map(|s| &s.config_hash).collect();
        m.configs.retain(|h, _| live.contains(&h));
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(())
    }

    pub fn files(&self) -> Vec<&str> {
        self.stages
            .values()
            .flat_map(|s| s.files.iter().map(String::as_str))
            .collect()
    }
}
