//! A running validator: consensus loop, peer links, HTTP front end.
//!
//! The consensus engine lives on one task and is reached only through its
//! inbox. Finalized blocks are committed under the store's write lock;
//! HTTP handlers take short read locks and never see partial commits.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use aidledger_core::chain::GenesisDoc;
use aidledger_core::codec::Canonical;
use aidledger_core::consensus::{Action, ConsensusMessage, Engine};
use aidledger_core::mempool::{AdmitError, Mempool};
use aidledger_core::tx::Transaction;
use aidledger_core::types::{Address, Hash};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;

use crate::config::{read_key_file, ConfigError, NodeConfig, SinkConfig};
use crate::sink::{FileSink, InstructionSink, SinkDispatcher, SinkError, WebhookSink};
use crate::store::{ChainStore, StoreError};
use crate::views::WireEnvelope;

pub const SINK_FILE: &str = "bank_instructions.jsonl";
pub const SINK_LEDGER: &str = "bank_instructions.delivered";

#[derive(Debug, Error)]
pub enum NodeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Sink(#[from] SinkError),
    #[error("genesis {0}: {1}")]
    Genesis(String, String),
    #[error("network: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug)]
pub(crate) enum Input {
    Message(Box<ConsensusMessage>),
    Pending,
    Timeout { height: u64, round: u32 },
    Propose { height: u64, round: u32 },
}

struct Outbound {
    path: &'static str,
    body: WireEnvelope,
}

struct Peer {
    address: Address,
    queue: mpsc::UnboundedSender<Outbound>,
}

/// State reachable from HTTP handlers.
pub struct Shared {
    pub store: RwLock<ChainStore>,
    pub mempool: Mutex<Mempool>,
    pub sink: Option<SinkDispatcher>,
    pub address: Address,
    inbox: mpsc::UnboundedSender<Input>,
    peers: Vec<Peer>,
    halted: Mutex<Option<String>>,
}

impl Shared {
    /// Admits a transaction and, when `gossip` is set, forwards it to peers.
    pub fn submit(&self, tx: Transaction, gossip: bool) -> Result<Hash, AdmitError> {
        let hash = {
            let store = self.store.read().expect("store lock");
            let mut mempool = self.mempool.lock().expect("mempool lock");
            mempool.admit(tx.clone(), store.state())?
        };
        let _ = self.inbox.send(Input::Pending);
        if gossip {
            self.broadcast("/p2p/tx", tx.to_hex());
        }
        Ok(hash)
    }

    pub(crate) fn deliver(&self, message: ConsensusMessage) {
        let _ = self.inbox.send(Input::Message(Box::new(message)));
    }

    /// Why the node stopped committing, if it did.
    pub fn halted(&self) -> Option<String> {
        self.halted.lock().expect("halt lock").clone()
    }

    fn broadcast(&self, path: &'static str, payload: String) {
        for peer in &self.peers {
            let _ = peer.queue.send(Outbound {
                path,
                body: WireEnvelope {
                    payload: payload.clone(),
                },
            });
        }
    }

    fn send_to(&self, to: &Address, path: &'static str, payload: String) {
        if let Some(peer) = self.peers.iter().find(|p| p.address == *to) {
            let _ = peer.queue.send(Outbound {
                path,
                body: WireEnvelope { payload },
            });
        }
    }
}

pub struct RunningNode {
    pub addr: SocketAddr,
    pub shared: Arc<Shared>,
    shutdown: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl RunningNode {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn stop(self) {
        let _ = self.shutdown.send(true);
        for task in self.tasks {
            let _ = task.await;
        }
    }

    /// Resolves when the node halts on a storage failure or is stopped.
    pub async fn wait(&mut self) {
        stopped(&mut self.shutdown.subscribe()).await;
    }
}

async fn stopped(rx: &mut watch::Receiver<bool>) {
    while !*rx.borrow_and_update() {
        if rx.changed().await.is_err() {
            return;
        }
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn open_sink(config: &NodeConfig) -> Result<Option<SinkDispatcher>, NodeError> {
    let sink: Box<dyn InstructionSink> = match &config.sink {
        SinkConfig::None => return Ok(None),
        SinkConfig::File { path } => {
            let path = path.clone().unwrap_or_else(|| config.data_dir.join(SINK_FILE));
            Box::new(FileSink::new(path)?)
        }
        SinkConfig::Webhook { url } => Box::new(WebhookSink::new(url.clone())),
    };
    Ok(Some(SinkDispatcher::spawn(sink, config.data_dir.join(SINK_LEDGER))?))
}

pub fn load_genesis(path: &std::path::Path) -> Result<GenesisDoc, NodeError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| NodeError::Genesis(shown.clone(), e.to_string()))?;
    let genesis: GenesisDoc =
        serde_json::from_str(&text).map_err(|e| NodeError::Genesis(shown.clone(), e.to_string()))?;
    genesis.check().map_err(|e| NodeError::Genesis(shown, e.to_string()))?;
    Ok(genesis)
}

/// Opens the store, replays it and starts serving on `listener`.
pub async fn start(config: NodeConfig, listener: TcpListener) -> Result<RunningNode, NodeError> {
    let genesis = load_genesis(&config.genesis)?;
    let key = read_key_file(&config.key)?;
    let store = ChainStore::open_or_create(&config.data_dir, &genesis)?;
    let sink = open_sink(&config)?;
    if let Some(sink) = &sink {
        // Re-offer everything; the delivery ledger drops what was sent.
        sink.enqueue(store.instructions().to_vec());
    }
    let strict = config
        .strict_bank_account_mode
        .unwrap_or(genesis.strict_bank_account_mode);

    let engine_config = config.consensus.engine();
    let recent_from = store.height().saturating_sub(engine_config.history_len as u64);
    let engine = Engine::new(
        engine_config,
        key.clone(),
        store.validators().clone(),
        store.head().clone(),
        store.state().clone(),
        store.blocks()[recent_from as usize..].iter().cloned(),
    );
    let mut mempool = Mempool::new(strict);
    mempool.on_commit(store.state());

    let (shutdown, shutdown_rx) = watch::channel(false);
    let (inbox, inbox_rx) = mpsc::unbounded_channel();
    let http = reqwest::Client::builder()
        .timeout(Duration::from_secs(3))
        .build()
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    let mut tasks = Vec::new();
    let mut peers = Vec::new();
    for peer in config.peers.iter().filter(|p| p.address != key.address()) {
        let (queue, rx) = mpsc::unbounded_channel();
        tasks.push(tokio::spawn(peer_link(
            http.clone(),
            peer.url.trim_end_matches('/').to_string(),
            rx,
            shutdown_rx.clone(),
        )));
        peers.push(Peer {
            address: peer.address,
            queue,
        });
    }

    let shared = Arc::new(Shared {
        store: RwLock::new(store),
        mempool: Mutex::new(mempool),
        sink,
        address: key.address(),
        inbox: inbox.clone(),
        peers,
        halted: Mutex::new(None),
    });

    tasks.push(tokio::spawn(consensus_loop(
        engine,
        Arc::clone(&shared),
        inbox,
        inbox_rx,
        shutdown.clone(),
    )));

    let addr = listener.local_addr()?;
    let router = crate::api::router(Arc::clone(&shared));
    let mut stop = shutdown_rx.clone();
    tasks.push(tokio::spawn(async move {
        let _ = axum::serve(listener, router)
            .with_graceful_shutdown(async move {
                stopped(&mut stop).await;
            })
            .await;
    }));

    Ok(RunningNode {
        addr,
        shared,
        shutdown,
        tasks,
    })
}

async fn peer_link(
    http: reqwest::Client,
    base: String,
    mut rx: mpsc::UnboundedReceiver<Outbound>,
    mut stop: watch::Receiver<bool>,
) {
    loop {
        tokio::select! {
            _ = stopped(&mut stop) => return,
            next = rx.recv() => {
                let Some(out) = next else { return };
                // Lost messages are recovered by round changes and catch-up.
                let _ = http.post(format!("{base}{}", out.path)).json(&out.body).send().await;
            }
        }
    }
}

async fn consensus_loop(
    mut engine: Engine,
    shared: Arc<Shared>,
    inbox: mpsc::UnboundedSender<Input>,
    mut rx: mpsc::UnboundedReceiver<Input>,
    shutdown: watch::Sender<bool>,
) {
    let mut stop = shutdown.subscribe();
    let mut actions = engine.start(now_ms());
    if !shared.mempool.lock().expect("mempool lock").is_empty() {
        actions.extend(engine.notify_pending(now_ms()));
    }
    loop {
        if let Err(reason) = perform(&mut engine, &shared, &inbox, actions) {
            eprintln!("node {} halting: {reason}", shared.address);
            *shared.halted.lock().expect("halt lock") = Some(reason);
            let _ = shutdown.send(true);
            return;
        }
        let input = tokio::select! {
            _ = stopped(&mut stop) => return,
            next = rx.recv() => match next {
                Some(input) => input,
                None => return,
            },
        };
        let now = now_ms();
        actions = match input {
            Input::Message(msg) => engine.on_message(now, *msg),
            Input::Pending => engine.notify_pending(now),
            Input::Timeout { height, round } => engine.on_timeout(now, height, round),
            Input::Propose { height, round } => {
                let max = engine.config().max_block_txs;
                let pending = shared.mempool.lock().expect("mempool lock").pending(max);
                engine.on_proposal_tick(now, height, round, &pending)
            }
        };
    }
}

fn schedule(inbox: &mpsc::UnboundedSender<Input>, after_ms: u64, input: Input) {
    let inbox = inbox.clone();
    tokio::spawn(async move {
        tokio::time::sleep(Duration::from_millis(after_ms)).await;
        let _ = inbox.send(input);
    });
}

/// Carries out engine actions. Errors are storage failures: fail-stop.
fn perform(
    engine: &mut Engine,
    shared: &Shared,
    inbox: &mpsc::UnboundedSender<Input>,
    mut actions: Vec<Action>,
) -> Result<(), String> {
    while !actions.is_empty() {
        let mut follow_up = Vec::new();
        for action in actions {
            match action {
                Action::Broadcast(msg) => shared.broadcast("/p2p/consensus", hex::encode(msg.to_canonical_bytes())),
                Action::Send { to, message } => {
                    shared.send_to(&to, "/p2p/consensus", hex::encode(message.to_canonical_bytes()))
                }
                Action::ScheduleTimeout { height, round, after_ms } => {
                    schedule(inbox, after_ms, Input::Timeout { height, round })
                }
                Action::ScheduleProposal { height, round, after_ms } => {
                    schedule(inbox, after_ms, Input::Propose { height, round })
                }
                Action::Finalized(done) => {
                    let pending_left = {
                        let mut store = shared.store.write().expect("store lock");
                        let (_, instructions) = store.commit(done.block).map_err(|e| e.to_string())?;
                        if let Some(sink) = &shared.sink {
                            sink.enqueue(instructions);
                        }
                        let mut mempool = shared.mempool.lock().expect("mempool lock");
                        mempool.on_commit(store.state());
                        !mempool.is_empty()
                    };
                    if pending_left {
                        follow_up.extend(engine.notify_pending(now_ms()));
                    }
                }
            }
        }
        actions = follow_up;
    }
    Ok(())
}
