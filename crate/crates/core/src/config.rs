use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{DEFAULT_DIFFICULTY_BITS, MAX_DIFFICULTY_BITS};

pub const CONFIG_FILE: &str = "medledger.toml";
pub const CONFIG_ENV: &str = "MEDLEDGER_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("difficulty_bits {0} outside 0..=32")]
    Difficulty(u8),
}

/// Deployment configuration. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_difficulty")]
    pub difficulty_bits: u8,
    #[serde(default = "default_true")]
    pub auto_mine: bool,
    #[serde(default = "default_vault")]
    pub vault_dir: PathBuf,
    #[serde(default = "default_chain_log")]
    pub chain_log: PathBuf,
    #[serde(default = "default_listen")]
    pub listen_addr: String,
    #[serde(default = "default_ttl")]
    pub session_ttl_ms: u64,
    #[serde(default = "default_keystore")]
    pub keystore_dir: PathBuf,
    #[serde(default = "default_node_key")]
    pub node_key: PathBuf,
    /// Enables `POST /api/debug/corrupt`.
    #[serde(default)]
    pub debug_hooks: bool,
    /// Static web console bundle served under `/app`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub webui_dir: Option<PathBuf>,
}

fn default_difficulty() -> u8 {
    DEFAULT_DIFFICULTY_BITS
}
fn default_true() -> bool {
    true
}
fn default_vault() -> PathBuf {
    "vault".into()
}
fn default_chain_log() -> PathBuf {
    "chain.mlg".into()
}
fn default_listen() -> String {
    "127.0.0.1:8080".into()
}
fn default_ttl() -> u64 {
    60 * 60 * 1000
}
fn default_keystore() -> PathBuf {
    "keystore".into()
}
fn default_node_key() -> PathBuf {
    "node.key".into()
}

impl Default for Config {
    fn default() -> Self {
        Config {
            difficulty_bits: default_difficulty(),
            auto_mine: true,
            vault_dir: default_vault(),
            chain_log: default_chain_log(),
            listen_addr: default_listen(),
            session_ttl_ms: default_ttl(),
            keystore_dir: default_keystore(),
            node_key: default_node_key(),
            debug_hooks: false,
            webui_dir: None,
        }
    }
}

impl Config {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.difficulty_bits > MAX_DIFFICULTY_BITS {
            return Err(ConfigError::Difficulty(self.difficulty_bits));
        }
        Ok(())
    }

    /// Loads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg = Self::parse(&text, path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg.resolved_against(&base))
    }

    /// Loads from `MEDLEDGER_CONFIG` if set, else `<dir>/medledger.toml`.
    pub fn load_default(dir: &Path) -> Result<Self, ConfigError> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) => Self::load(Path::new(&p)),
            None => Self::load(&dir.join(CONFIG_FILE)),
        }
    }

    pub fn resolved_against(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.vault_dir);
        fix(&mut self.chain_log);
        fix(&mut self.keystore_dir);
        fix(&mut self.node_key);
        if let Some(w) = self.webui_dir.as_mut() {
            fix(w);
        }
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
