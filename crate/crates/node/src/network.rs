//! Network bootstrap and an in-process multi-node harness.

use std::net::{SocketAddr, TcpListener as StdListener};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use aidledger_core::chain::GenesisDoc;
use aidledger_core::consensus::ValidatorSet;
use aidledger_core::crypto::KeyPair;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;
use tokio::runtime::Runtime;

use crate::config::{read_key_file, write_key_file, ConfigError, ConsensusConfig, NodeConfig, PeerConfig, SinkConfig};
use crate::node::{start, NodeError, RunningNode};

pub const MIN_VALIDATORS: usize = 4;
pub const GENESIS_FILE: &str = "genesis.json";
pub const ORG_KEY_FILE: &str = "organization.key";
pub const CONFIG_FILE: &str = "config.toml";
pub const VALIDATOR_KEY_FILE: &str = "validator.key";

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("need at least {MIN_VALIDATORS} validators, got {0}")]
    TooFewValidators(usize),
    #[error("expected {expected} listen addresses, got {got}")]
    ListenCount { expected: usize, got: usize },
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error("nodes did not converge: {0}")]
    Converge(String),
}

#[derive(Debug, Clone)]
pub struct InitOptions {
    pub validators: usize,
    pub out_dir: PathBuf,
    /// Existing organization key; a fresh one is written when absent.
    pub org_key: Option<PathBuf>,
    /// Makes every generated key and the genesis time deterministic.
    pub seed: Option<u64>,
    pub listen: Vec<SocketAddr>,
    pub chain_id: String,
    pub strict_bank_account_mode: bool,
    pub consensus: ConsensusConfig,
}

impl InitOptions {
    /// Nodes listen on consecutive ports from `base_port`.
    pub fn new(validators: usize, out_dir: impl Into<PathBuf>, base_port: u16) -> Self {
        InitOptions {
            validators,
            out_dir: out_dir.into(),
            org_key: None,
            seed: None,
            listen: (0..validators)
                .map(|i| SocketAddr::from(([127, 0, 0, 1], base_port + i as u16)))
                .collect(),
            chain_id: "aidledger-local".into(),
            strict_bank_account_mode: false,
            consensus: ConsensusConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NetworkLayout {
    pub genesis: GenesisDoc,
    pub genesis_path: PathBuf,
    pub org_key_path: PathBuf,
    pub config_paths: Vec<PathBuf>,
    pub configs: Vec<NodeConfig>,
}

impl NetworkLayout {
    pub fn validator_set(&self) -> ValidatorSet {
        ValidatorSet::new(self.genesis.validators.clone()).expect("init writes a valid set")
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), NetworkError> {
    let io = |source| NetworkError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, text).map_err(io)
}

/// Writes `genesis.json`, the organization key and `node{i}/` with a
/// validator key and config. Only node 0 emits bank instructions so each
/// payout is instructed once.
pub fn init(opts: &InitOptions) -> Result<NetworkLayout, NetworkError> {
    let n = opts.validators;
    if n < MIN_VALIDATORS {
        return Err(NetworkError::TooFewValidators(n));
    }
    if opts.listen.len() != n {
        return Err(NetworkError::ListenCount {
            expected: n,
            got: opts.listen.len(),
        });
    }
    let mut rng = match opts.seed {
        Some(seed) => ChaCha20Rng::seed_from_u64(seed),
        None => ChaCha20Rng::from_entropy(),
    };
    let org_key_path = match &opts.org_key {
        Some(path) => path.clone(),
        None => opts.out_dir.join(ORG_KEY_FILE),
    };
    let org = if org_key_path.exists() {
        read_key_file(&org_key_path)?
    } else {
        let key = KeyPair::generate(&mut rng);
        write_key_file(&org_key_path, &key)?;
        key
    };
    let keys: Vec<KeyPair> = (0..n).map(|_| KeyPair::generate(&mut rng)).collect();
    let timestamp = match opts.seed {
        Some(_) => 1_700_000_000,
        None => crate::node::now_ms() / 1000,
    };
    let genesis = GenesisDoc {
        chain_id: opts.chain_id.clone(),
        organization: org.address(),
        validators: keys.iter().map(KeyPair::address).collect(),
        strict_bank_account_mode: opts.strict_bank_account_mode,
        timestamp,
    };
    let genesis_path = opts.out_dir.join(GENESIS_FILE);
    write_file(
        &genesis_path,
        &serde_json::to_string_pretty(&genesis).expect("genesis serializes"),
    )?;

    let peers: Vec<PeerConfig> = keys
        .iter()
        .zip(&opts.listen)
        .map(|(k, addr)| PeerConfig {
            address: k.address(),
            url: format!("http://{addr}"),
        })
        .collect();
    let mut configs = Vec::new();
    let mut config_paths = Vec::new();
    for (i, key) in keys.iter().enumerate() {
        let dir = opts.out_dir.join(format!("node{i}"));
        write_key_file(&dir.join(VALIDATOR_KEY_FILE), key)?;
        let config = NodeConfig {
            listen: opts.listen[i].to_string(),
            data_dir: PathBuf::from("data"),
            genesis: PathBuf::from("..").join(GENESIS_FILE),
            key: PathBuf::from(VALIDATOR_KEY_FILE),
            peers: peers.iter().filter(|p| p.address != key.address()).cloned().collect(),
            strict_bank_account_mode: None,
            sink: if i == 0 {
                SinkConfig::File { path: None }
            } else {
                SinkConfig::None
            },
            consensus: opts.consensus.clone(),
        };
        let path = dir.join(CONFIG_FILE);
        write_file(&path, &config.to_toml())?;
        configs.push(config);
        config_paths.push(path);
    }
    Ok(NetworkLayout {
        genesis,
        genesis_path,
        org_key_path,
        config_paths,
        configs,
    })
}

/// Reserves `n` loopback ports by binding them now.
pub fn bind_local(n: usize) -> Result<Vec<StdListener>, NetworkError> {
    (0..n)
        .map(|_| {
            StdListener::bind("127.0.0.1:0").map_err(|source| NetworkError::Io {
                path: PathBuf::from("127.0.0.1:0"),
                source,
            })
        })
        .collect()
}

/// A whole network running on a private runtime in this process. Blocking
/// clients may be used from the owning thread.
pub struct LocalNetwork {
    runtime: Runtime,
    nodes: Vec<RunningNode>,
    configs: Vec<NodeConfig>,
    pub layout: NetworkLayout,
}

impl LocalNetwork {
    /// Initializes `opts.out_dir` on fresh loopback ports and starts every node.
    pub fn launch(mut opts: InitOptions) -> Result<Self, NetworkError> {
        let listeners = bind_local(opts.validators)?;
        opts.listen = listeners
            .iter()
            .map(|l| l.local_addr().expect("bound address"))
            .collect();
        let layout = init(&opts)?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .map_err(|source| NetworkError::Io {
                path: PathBuf::from("runtime"),
                source,
            })?;
        let mut nodes = Vec::new();
        let mut configs = Vec::new();
        for (path, listener) in layout.config_paths.iter().zip(listeners) {
            let config = NodeConfig::load(path)?;
            configs.push(config.clone());
            listener.set_nonblocking(true).map_err(|source| NetworkError::Io {
                path: path.clone(),
                source,
            })?;
            let node = runtime.block_on(async {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                start(config, listener).await
            })?;
            nodes.push(node);
        }
        Ok(LocalNetwork {
            runtime,
            nodes,
            configs,
            layout,
        })
    }

    pub fn urls(&self) -> Vec<String> {
        self.nodes.iter().map(RunningNode::url).collect()
    }

    pub fn node(&self, i: usize) -> &RunningNode {
        &self.nodes[i]
    }

    /// The configuration node `i` was started with, paths resolved.
    pub fn config(&self, i: usize) -> &NodeConfig {
        &self.configs[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Waits until every node reports the same head and state root.
    pub fn converge(&self, timeout: Duration) -> Result<(u64, aidledger_core::types::Hash), NetworkError> {
        let deadline = Instant::now() + timeout;
        loop {
            let heads: Vec<_> = self
                .nodes
                .iter()
                .map(|n| {
                    let store = n.shared.store.read().expect("store lock");
                    (store.height(), store.state().state_root())
                })
                .collect();
            if heads.windows(2).all(|w| w[0] == w[1]) {
                return Ok(heads[0]);
            }
            if Instant::now() >= deadline {
                return Err(NetworkError::Converge(format!("{heads:?}")));
            }
            std::thread::sleep(Duration::from_millis(50));
        }
    }

    pub fn shutdown(self) {
        let LocalNetwork { runtime, nodes, .. } = self;
        runtime.block_on(async {
            for node in nodes {
                node.stop().await;
            }
        });
        runtime.shutdown_timeout(Duration::from_secs(2));
    }
}
