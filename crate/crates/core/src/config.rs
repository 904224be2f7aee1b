//! TOML configuration files.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archconfig::{ArchConfig, ConfigError, MemoryModel};
use crate::vector::{VectorConfig, VectorError};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
}

/// Reads and deserializes a TOML file.
pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    toml::from_str(&text).map_err(|source| LoadError::Parse {
        path: path.display().to_string(),
        source,
    })
}

/// One simulated system: matrix unit, memory and vector unit.
///
/// ```toml
/// [arch]
/// freq_hz = 2.0e9
/// m_pe = 4
/// # ...
/// [memory]
/// bandwidth_bytes_per_s = 48.0e9
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub arch: ArchConfig,
    pub memory: MemoryModel,
    #[serde(default)]
    pub vector: VectorConfig,
}

#[derive(Debug, Error)]
pub enum SystemError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

impl SystemConfig {
    pub fn case_study() -> Self {
        SystemConfig {
            arch: ArchConfig::case_study(),
            memory: MemoryModel::case_study(),
            vector: VectorConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, LoadError> {
        load_toml(path)
    }

    pub fn validate(&self) -> Result<(), SystemError> {
        self.arch.validate()?;
        self.memory.validate()?;
        self.vector.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let cfg = SystemConfig::case_study();
        let back: SystemConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn defaults_fill_optional_fields() {
        let text = r#"
            [arch]
            freq_hz = 2.0e9
            m_pe = 4
            n_pe = 4
            k_pe_bits = 512
            m_scp = 64
            n_scp = 64
            k_scp_bytes = 64
            [memory]
            bandwidth_bytes_per_s = 48.0e9
        "#;
        let cfg: SystemConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg, SystemConfig::case_study());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "[arch]\nfreq = 1\n[memory]\nbandwidth_bytes_per_s = 1.0\n";
        assert!(toml::from_str::<SystemConfig>(text).is_err());
    }
}
