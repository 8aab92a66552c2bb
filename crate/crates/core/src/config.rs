//! Shared TOML configuration for the CLI and the service.

use crate::analytics::CaseStudyThresholds;
use crate::fams::Role;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Environment variable naming the config file.
pub const CONFIG_ENV: &str = "FOODAI_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamsUser {
    pub id: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceConfig {
    Synthetic { available: usize },
    Directory { path: PathBuf, seed: Option<u64> },
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig::Synthetic { available: 60 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamsConfig {
    pub source: SourceConfig,
    /// API key → FAMS user.
    pub users: BTreeMap<String, FamsUser>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub storage_root: PathBuf,
    pub seed: u64,
    pub listen: String,
    /// Defaults to `<storage_root>/checkpoints/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
    /// Fixed UTC offset for usage reports, e.g. `+08:00`.
    pub time_zone: String,
    /// Seeds qid generation for reproducible runs; random when absent.
    pub qid_seed: Option<u64>,
    pub case_studies: CaseStudyThresholds,
    pub fams: FamsConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            storage_root: PathBuf::from("foodai-data"),
            seed: 0,
            listen: "127.0.0.1:8080".into(),
            checkpoint: None,
            time_zone: "+00:00".into(),
            qid_seed: None,
            case_studies: CaseStudyThresholds::default(),
            fams: FamsConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    /// `explicit`, else `$FOODAI_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) => Self::load(Path::new(&p)),
                None => Ok(Config::default()),
            },
        }
    }

    pub fn layout(&self) -> Layout {
        Layout {
            root: self.storage_root.clone(),
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.layout().default_checkpoint())
    }
}

/// Paths under the storage root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn taxonomy(&self) -> PathBuf {
        self.root.join("taxonomy.json")
    }

    pub fn split(&self, version: u32, seed: u64) -> PathBuf {
        self.root.join("splits").join(format!("v{version:05}_seed{seed}.json"))
    }

    pub fn default_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("model.ckpt")
    }

    pub fn keys(&self) -> PathBuf {
        self.root.join("service").join("keys.json")
    }

    pub fn queries(&self) -> PathBuf {
        self.root.join("service").join("queries.jsonl")
    }

    pub fn feedback(&self) -> PathBuf {
        self.root.join("service").join("feedback.jsonl")
    }

    pub fn query_images(&self) -> PathBuf {
        self.root.join("service").join("images")
    }

    pub fn fams_dir(&self) -> PathBuf {
        self.root.join("fams")
    }
}
