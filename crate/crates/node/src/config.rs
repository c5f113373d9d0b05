//! Node configuration file, environment overrides and key files.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use aidledger_core::consensus::EngineConfig;
use aidledger_core::crypto::KeyPair;
use aidledger_core::types::Address;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_PREFIX: &str = "AIDLEDGER_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid value for {name}: {value}")]
    Env { name: String, value: String },
    #[error("key file {path}: {message}")]
    Key { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerConfig {
    pub address: Address,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SinkConfig {
    /// JSON lines at `path`, or `bank_instructions.jsonl` in the data dir.
    File {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
    },
    Webhook { url: String },
    None,
}

impl Default for SinkConfig {
    fn default() -> Self {
        SinkConfig::File { path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsensusConfig {
    pub base_timeout_ms: u64,
    pub max_timeout_ms: u64,
    pub block_interval_ms: u64,
    pub allow_empty_blocks: bool,
    pub max_block_txs: usize,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        let e = EngineConfig::default();
        ConsensusConfig {
            base_timeout_ms: e.base_timeout_ms,
            max_timeout_ms: e.max_timeout_ms,
            block_interval_ms: e.block_interval_ms,
            allow_empty_blocks: e.allow_empty_blocks,
            max_block_txs: e.max_block_txs,
        }
    }
}

impl ConsensusConfig {
    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            base_timeout_ms: self.base_timeout_ms,
            max_timeout_ms: self.max_timeout_ms,
            block_interval_ms: self.block_interval_ms,
            allow_empty_blocks: self.allow_empty_blocks,
            max_block_txs: self.max_block_txs,
            ..EngineConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    pub genesis: PathBuf,
    pub key: PathBuf,
    #[serde(default)]
    pub peers: Vec<PeerConfig>,
    /// Overrides the genesis flag for this node's admission checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strict_bank_account_mode: Option<bool>,
    #[serde(default)]
    pub sink: SinkConfig,
    #[serde(default)]
    pub consensus: ConsensusConfig,
}

impl NodeConfig {
    /// Reads a TOML file, resolves relative paths against its directory and
    /// applies `AIDLEDGER_*` environment overrides.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&text).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        config.apply_env(|name| std::env::var(name).ok())?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Recognized: `LISTEN`, `DATA_DIR`, `GENESIS`, `KEY`,
    /// `STRICT_BANK_ACCOUNT_MODE`, `SINK_FILE`, `SINK_WEBHOOK`, each with
    /// the `AIDLEDGER_` prefix.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let get = |name: &str| var(&format!("{ENV_PREFIX}{name}"));
        if let Some(v) = get("LISTEN") {
            self.listen = v;
        }
        if let Some(v) = get("DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = get("GENESIS") {
            self.genesis = v.into();
        }
        if let Some(v) = get("KEY") {
            self.key = v.into();
        }
        if let Some(v) = get("STRICT_BANK_ACCOUNT_MODE") {
            let flag = match v.to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" => true,
                "0" | "false" | "no" => false,
                _ => {
                    return Err(ConfigError::Env {
                        name: format!("{ENV_PREFIX}STRICT_BANK_ACCOUNT_MODE"),
                        value: v,
                    })
                }
            };
            self.strict_bank_account_mode = Some(flag);
        }
        if let Some(v) = get("SINK_FILE") {
            self.sink = SinkConfig::File { path: Some(v.into()) };
        }
        if let Some(v) = get("SINK_WEBHOOK") {
            self.sink = SinkConfig::Webhook { url: v };
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        fix(&mut self.genesis);
        fix(&mut self.key);
        if let SinkConfig::File { path: Some(p) } = &mut self.sink {
            fix(p);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct KeyFile {
    secret: String,
    address: Address,
}

/// Writes `{secret, address}` JSON, readable only by the owner on Unix.
pub fn write_key_file(path: &Path, key: &KeyPair) -> Result<(), ConfigError> {
    let err = |source| ConfigError::Write {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(err)?;
    }
    let body = KeyFile {
        secret: key.secret_hex(),
        address: key.address(),
    };
    let text = serde_json::to_string_pretty(&body).expect("key file serializes");
    write_private(path, text.as_bytes()).map_err(err)
}

#[cfg(unix)]
fn write_private(path: &Path, bytes: &[u8]) -> io::Result<()> {
    use std::io::Write;
    use std::os::unix::fs::OpenOptionsExt;
    let mut f = fs::OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .mode(0o600)
        .open(path)?;
    f.write_all(bytes)
}

#[cfg(not(unix))]
fn write_private(path: &Path, bytes: &[u8]) -> io::Result<()> {
    fs::write(path, bytes)
}

/// Loads a key file and checks that the stored address matches the secret.
pub fn read_key_file(path: &Path) -> Result<KeyPair, ConfigError> {
    let bad = |message: String| ConfigError::Key {
        path: path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let file: KeyFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let secret = hex::decode(file.secret.trim_start_matches("0x")).map_err(|e| bad(e.to_string()))?;
    let secret: [u8; 32] = secret
        .try_into()
        .map_err(|_| bad("secret must be 32 bytes".into()))?;
    let key = KeyPair::from_secret(&secret).map_err(|e| bad(e.to_string()))?;
    if key.address() != file.address {
        return Err(bad(format!(
            "stored address {} does not match secret ({})",
            file.address,
            key.address()
        )));
    }
    Ok(key)
}
