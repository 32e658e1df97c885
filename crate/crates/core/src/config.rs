use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::drift::Thresholds;
use crate::embedding::EmbedderSpec;
use crate::scoring::{CoherenceParams, UtilityWeights};
use crate::store::RenderMode;

pub const LISTEN_ADDRESS_ENV: &str = "INSIGHT_LISTEN_ADDRESS";
pub const DEFAULT_LISTEN_ADDRESS: &str = "127.0.0.1:8080";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    /// Directory for the event log and snapshots; `None` keeps everything
    /// in memory.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub embedder: EmbedderSpec,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub coherence: CoherenceParams,
    #[serde(default)]
    pub weights: UtilityWeights,
    #[serde(default = "default_listen_address")]
    pub listen_address: String,
    #[serde(default)]
    pub rendering: RenderMode,
    /// Write a snapshot after this many events; 0 disables periodic
    /// snapshots (one is still written on shutdown).
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: u64,
}

fn default_listen_address() -> String {
    DEFAULT_LISTEN_ADDRESS.to_string()
}

fn default_snapshot_every() -> u64 {
    1_000
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            data_dir: None,
            embedder: EmbedderSpec::default(),
            thresholds: Thresholds::default(),
            coherence: CoherenceParams::default(),
            weights: UtilityWeights::default(),
            listen_address: default_listen_address(),
            rendering: RenderMode::default(),
            snapshot_every: default_snapshot_every(),
        }
    }
}

impl EngineConfig {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        EngineConfig {
            data_dir: Some(dir.into()),
            ..EngineConfig::default()
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let config: EngineConfig = toml::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads, parses and validates a TOML file, then applies the listen
    /// address override from the environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml_str(&text)?;
        config.apply_env();
        Ok(config)
    }

    pub fn apply_env(&mut self) {
        if let Ok(addr) = std::env::var(LISTEN_ADDRESS_ENV) {
            if !addr.trim().is_empty() {
                self.listen_address = addr;
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.embedder.validate().map_err(|e| invalid(&e))?;
        self.thresholds.validate().map_err(|e| invalid(&e))?;
        self.coherence.validate().map_err(|e| invalid(&e))?;
        self.weights.validate().map_err(|e| invalid(&e))?;
        if self.listen_address.trim().is_empty() {
            return Err(ConfigError::Invalid("listen_address is empty".into()));
        }
        Ok(())
    }

    /// Creates the data directory if needed and checks that it is writable.
    pub fn prepare_data_dir(&self) -> Result<(), ConfigError> {
        let Some(dir) = &self.data_dir else {
            return Ok(());
        };
        let fail = |e: std::io::Error| {
            ConfigError::Invalid(format!("data_dir {} is not writable: {e}", dir.display()))
        };
        fs::create_dir_all(dir).map_err(fail)?;
        let probe = dir.join(".write-probe");
        fs::write(&probe, b"").map_err(fail)?;
        fs::remove_file(&probe).map_err(fail)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbedderProvider;

    #[test]
    fn empty_document_yields_defaults() {
        let c = EngineConfig::from_toml_str("").unwrap();
        assert_eq!(c, EngineConfig::default());
        assert_eq!(c.thresholds.tau_drift, 0.30);
        assert_eq!(c.coherence.half_life_days, 30.0);
        assert_eq!(c.weights.reuse_cap, 100);
    }

    #[test]
    fn full_document_round_trips() {
        let text = r#"
            data_dir = "/tmp/insight"
            listen_address = "0.0.0.0:9000"
            rendering = "rationale_only"
            snapshot_every = 10

            [embedder]
            provider = "external_service"
            endpoint = "http://127.0.0.1:7000/embed"
            dims = 64
            timeout_ms = 500

            [thresholds]
            tau_drift = 0.25

            [coherence]
            half_life_days = 14.0

            [weights]
            w_reuse = 0.25
            w_feedback = 0.25
            w_alignment = 0.25
            w_antidrift = 0.25
        "#;
        let c = EngineConfig::from_toml_str(text).unwrap();
        assert_eq!(c.embedder.provider, EmbedderProvider::ExternalService);
        assert_eq!(c.thresholds.tau_drift, 0.25);
        assert_eq!(c.thresholds.tau_align, 0.70);
        assert_eq!(c.rendering, RenderMode::RationaleOnly);
        let again = EngineConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn invalid_values_are_rejected_at_load() {
        for bad in [
            "[weights]\nw_reuse = 0.5\nw_feedback = 0.5\nw_alignment = 0.5\nw_antidrift = 0.5",
            "[coherence]\nhalf_life_days = 0.0",
            "[thresholds]\ntau_drift = 3.0",
            "[embedder]\nprovider = \"external_service\"",
            "[embedder]\ndims = 2",
            "unknown_key = 1",
        ] {
            assert!(EngineConfig::from_toml_str(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn data_dir_is_created_and_probed() {
        let tmp = tempfile::tempdir().unwrap();
        let c = EngineConfig::in_dir(tmp.path().join("nested/data"));
        c.prepare_data_dir().unwrap();
        assert!(tmp.path().join("nested/data").is_dir());
    }
}
