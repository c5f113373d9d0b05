//! Validators and clients as simulator processes.
//!
//! [`SimCluster`] wires N engines, each with its own mempool, into a
//! [`Simulation`]. Validator `i` is simulator node `i`; clients come after.

use std::any::Any;
use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chain::{Block, GenesisDoc};
use crate::consensus::{
    Action, ConsensusMessage, Engine, EngineConfig, EquivocatingProposer, ValidatorSet,
};
use crate::crypto::KeyPair;
use crate::ledger::Event;
use crate::mempool::{AdmitError, Mempool};
use crate::netsim::{Context, NodeId, Process, SimConfig, SimError, SimMessage, Simulation};
use crate::tx::Transaction;
use crate::types::{Address, Hash};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMessage {
    Consensus(ConsensusMessage),
    Tx(Transaction),
}

impl SimMessage for WireMessage {
    fn kind(&self) -> &'static str {
        match self {
            WireMessage::Consensus(m) => m.kind(),
            WireMessage::Tx(_) => "tx",
        }
    }

    fn digest(&self) -> Hash {
        match self {
            WireMessage::Consensus(m) => m.hash(),
            WireMessage::Tx(tx) => tx.hash(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum TimerKind {
    Timeout { height: u64, round: u32 },
    Proposal { height: u64, round: u32 },
}

pub struct SimValidator {
    engine: Engine,
    byzantine: Option<EquivocatingProposer>,
    mempool: Mempool,
    /// Address of each validator node, indexed by node id.
    directory: Vec<Address>,
    timers: HashMap<u64, TimerKind>,
    next_timer: u64,
    chain: Vec<Block>,
    events: Vec<Event>,
    txs_rejected: u64,
    /// Transactions that arrived ahead of their sender's next nonce, held
    /// until the gap closes. Simulated links reorder, real ones mostly don't.
    early: BTreeMap<(Address, u64), Transaction>,
}

const MAX_EARLY: usize = 1024;

impl SimValidator {
    pub fn new(key: KeyPair, genesis: &GenesisDoc, config: EngineConfig) -> Result<Self, SimError> {
        let validators = ValidatorSet::new(genesis.validators.clone())
            .map_err(|_| SimError::InvalidConfig("bad validator set"))?;
        let head = genesis.genesis_block();
        let state = crate::chain::ChainState::genesis(genesis.organization);
        Ok(SimValidator {
            engine: Engine::new(config, key, validators, head, state, []),
            byzantine: None,
            mempool: Mempool::new(genesis.strict_bank_account_mode),
            directory: genesis.validators.clone(),
            timers: HashMap::new(),
            next_timer: 0,
            chain: Vec::new(),
            events: Vec::new(),
            txs_rejected: 0,
            early: BTreeMap::new(),
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    /// Finalized blocks after genesis, in height order.
    pub fn chain(&self) -> &[Block] {
        &self.chain
    }

    pub fn head_height(&self) -> u64 {
        self.engine.head().height()
    }

    /// Events of every successful transaction this node finalized.
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn mempool(&self) -> &Mempool {
        &self.mempool
    }

    pub fn is_byzantine(&self) -> bool {
        self.byzantine.is_some()
    }

    pub fn equivocations(&self) -> u64 {
        self.byzantine.as_ref().map_or(0, |b| b.equivocations)
    }

    pub fn txs_rejected(&self) -> u64 {
        self.txs_rejected
    }

    /// Admits `tx`, parking it if its nonce is ahead. Returns whether
    /// anything new entered the mempool.
    fn admit(&mut self, tx: Transaction) -> bool {
        let state = self.engine.head_state();
        match self.mempool.admit(tx.clone(), state) {
            Ok(_) => {
                self.admit_early();
                true
            }
            Err(AdmitError::BadNonce)
                if tx.nonce > self.mempool.next_nonce(&tx.sender, state) && self.early.len() < MAX_EARLY =>
            {
                self.early.insert((tx.sender, tx.nonce), tx);
                false
            }
            Err(_) => {
                self.txs_rejected += 1;
                false
            }
        }
    }

    /// Moves parked transactions whose turn has come into the mempool and
    /// drops those already overtaken.
    fn admit_early(&mut self) -> bool {
        let mut admitted = false;
        loop {
            let state = self.engine.head_state();
            let mempool = &self.mempool;
            self.early.retain(|(sender, nonce), _| *nonce >= mempool.next_nonce(sender, state));
            let ready = self
                .early
                .keys()
                .find(|(sender, nonce)| *nonce == mempool.next_nonce(sender, state))
                .copied();
            let Some(key) = ready else {
                return admitted;
            };
            let tx = self.early.remove(&key).expect("key just found");
            match self.mempool.admit(tx, self.engine.head_state()) {
                Ok(_) => admitted = true,
                Err(_) => self.txs_rejected += 1,
            }
        }
    }

    fn timer(&mut self, ctx: &mut Context<'_, WireMessage>, after_ms: u64, kind: TimerKind) {
        let id = self.next_timer;
        self.next_timer += 1;
        self.timers.insert(id, kind);
        ctx.set_timer(after_ms, id);
    }

    fn run(&mut self, ctx: &mut Context<'_, WireMessage>, actions: Vec<Action>) {
        let actions = match self.byzantine.as_mut() {
            Some(b) => b.filter(&self.engine, actions),
            None => actions,
        };
        let me = ctx.id();
        let mut more = Vec::new();
        for action in actions {
            match action {
                Action::Broadcast(msg) => {
                    for to in 0..self.directory.len() {
                        if to != me {
                            let _ = ctx.send(to, WireMessage::Consensus(msg.clone()));
                        }
                    }
                }
                Action::Send { to, message } => {
                    if let Some(node) = self.directory.iter().position(|a| *a == to) {
                        let _ = ctx.send(node, WireMessage::Consensus(message));
                    }
                }
                Action::ScheduleTimeout { height, round, after_ms } => {
                    self.timer(ctx, after_ms, TimerKind::Timeout { height, round });
                }
                Action::ScheduleProposal { height, round, after_ms } => {
                    self.timer(ctx, after_ms, TimerKind::Proposal { height, round });
                }
                Action::Finalized(done) => {
                    for receipt in &done.receipts {
                        self.events.extend(receipt.events.iter().cloned());
                    }
                    self.chain.push(done.block);
                    self.mempool.on_commit(&done.state);
                    self.admit_early();
                    if !self.mempool.is_empty() {
                        more.push(());
                    }
                }
            }
        }
        if !more.is_empty() {
            let follow_up = self.engine.notify_pending(ctx.now_ms());
            self.run(ctx, follow_up);
        }
    }
}

impl Process<WireMessage> for SimValidator {
    fn on_start(&mut self, ctx: &mut Context<'_, WireMessage>) {
        let actions = self.engine.start(ctx.now_ms());
        self.run(ctx, actions);
    }

    fn on_message(&mut self, ctx: &mut Context<'_, WireMessage>, _from: NodeId, message: WireMessage) {
        let actions = match message {
            WireMessage::Consensus(msg) => self.engine.on_message(ctx.now_ms(), msg),
            WireMessage::Tx(tx) => {
                if !self.admit(tx) {
                    return;
                }
                self.engine.notify_pending(ctx.now_ms())
            }
        };
        self.run(ctx, actions);
    }

    fn on_timer(&mut self, ctx: &mut Context<'_, WireMessage>, timer: u64) {
        let Some(kind) = self.timers.remove(&timer) else {
            return;
        };
        let now = ctx.now_ms();
        let actions = match kind {
            TimerKind::Timeout { height, round } => self.engine.on_timeout(now, height, round),
            TimerKind::Proposal { height, round } => {
                let pending = self.mempool.pending(self.engine.config().max_block_txs);
                self.engine.on_proposal_tick(now, height, round, &pending)
            }
        };
        self.run(ctx, actions);
    }

    fn make_equivocating(&mut self) -> bool {
        self.byzantine.get_or_insert_with(EquivocatingProposer::new);
        true
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Submits each scheduled transaction to every validator at its time.
pub struct SimClient {
    validators: Vec<NodeId>,
    schedule: Vec<(u64, Transaction)>,
    submitted: usize,
}

impl SimClient {
    pub fn new(validators: Vec<NodeId>, schedule: Vec<(u64, Transaction)>) -> Self {
        SimClient {
            validators,
            schedule,
            submitted: 0,
        }
    }

    pub fn submitted(&self) -> usize {
        self.submitted
    }
}

impl Process<WireMessage> for SimClient {
    fn on_start(&mut self, ctx: &mut Context<'_, WireMessage>) {
        for (i, (at, _)) in self.schedule.iter().enumerate() {
            ctx.set_timer(*at, i as u64);
        }
    }

    fn on_message(&mut self, _ctx: &mut Context<'_, WireMessage>, _from: NodeId, _message: WireMessage) {}

    fn on_timer(&mut self, ctx: &mut Context<'_, WireMessage>, timer: u64) {
        let Some((_, tx)) = self.schedule.get(timer as usize) else {
            return;
        };
        for node in &self.validators {
            let _ = ctx.send(*node, WireMessage::Tx(tx.clone()));
        }
        self.submitted += 1;
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[derive(Debug, Clone)]
pub struct ClusterConfig {
    pub validators: usize,
    pub engine: EngineConfig,
    pub sim: SimConfig,
    pub strict_bank_account_mode: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            validators: 4,
            engine: EngineConfig::default(),
            sim: SimConfig::default(),
            strict_bank_account_mode: false,
        }
    }
}

/// Two validators finalized different blocks at one height.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conflict {
    pub height: u64,
    pub first: Hash,
    pub second: Hash,
}

pub struct SimCluster {
    pub sim: Simulation<WireMessage>,
    pub genesis: GenesisDoc,
    pub organization: KeyPair,
    pub keys: Vec<KeyPair>,
}

impl SimCluster {
    /// Keys are derived from the simulation seed, so a seed fixes everything.
    pub fn new(config: ClusterConfig) -> Result<Self, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.sim.seed);
        rng.set_stream(u64::MAX);
        let organization = KeyPair::generate(&mut rng);
        let keys: Vec<KeyPair> = (0..config.validators)
            .map(|_| KeyPair::generate(&mut rng))
            .collect();
        let genesis = GenesisDoc {
            chain_id: format!("sim-{}", config.sim.seed),
            organization: organization.address(),
            validators: keys.iter().map(KeyPair::address).collect(),
            strict_bank_account_mode: config.strict_bank_account_mode,
            timestamp: 0,
        };
        let mut sim = Simulation::new(config.sim)?;
        for key in &keys {
            let node = SimValidator::new(key.clone(), &genesis, config.engine.clone())?;
            sim.add_node(Box::new(node));
        }
        Ok(SimCluster {
            sim,
            genesis,
            organization,
            keys,
        })
    }

    pub fn validator_count(&self) -> usize {
        self.keys.len()
    }

    pub fn validator(&self, index: usize) -> &SimValidator {
        self.sim
            .process::<SimValidator>(index)
            .expect("validator nodes come first")
    }

    pub fn add_client(&mut self, schedule: Vec<(u64, Transaction)>) -> NodeId {
        let targets = (0..self.validator_count()).collect();
        self.sim.add_node(Box::new(SimClient::new(targets, schedule)))
    }

    pub fn heights(&self) -> Vec<u64> {
        (0..self.validator_count())
            .map(|i| self.validator(i).head_height())
            .collect()
    }

    /// Lowest head among validators that have not crashed.
    pub fn min_live_height(&self) -> u64 {
        (0..self.validator_count())
            .filter(|i| !self.sim.is_crashed(*i))
            .map(|i| self.validator(i).head_height())
            .min()
            .unwrap_or(0)
    }

    /// Most rounds any single validator went through.
    pub fn rounds(&self) -> u64 {
        (0..self.validator_count())
            .map(|i| self.validator(i).engine().metrics().rounds_started)
            .max()
            .unwrap_or(0)
    }

    /// Every height where two validators finalized different blocks.
    pub fn conflicts(&self) -> Vec<Conflict> {
        let mut seen: BTreeMap<u64, Hash> = BTreeMap::new();
        let mut out = Vec::new();
        for i in 0..self.validator_count() {
            for block in self.validator(i).chain() {
                let hash = block.hash();
                let first = *seen.entry(block.height()).or_insert(hash);
                if first != hash {
                    out.push(Conflict {
                        height: block.height(),
                        first,
                        second: hash,
                    });
                }
            }
        }
        out
    }
}
