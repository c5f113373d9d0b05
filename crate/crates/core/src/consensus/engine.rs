//! Per-validator consensus engine.
//!
//! Sans-IO: every entry point takes the current time and returns a list of
//! [`Action`]s for the host to perform (send messages, arm timers, persist a
//! finalized block). The host owns transport, clocks and the mempool.
//!
//! Protocol per height: the round-robin proposer broadcasts a block; each
//! validator prepares the first valid proposal of the round; a quorum of
//! prepares triggers a commit carrying a seal over the block hash; a quorum
//! of commits finalizes. A validator that has sent a commit stays locked on
//! that block for the rest of the height: it never prepares a different
//! block, and re-proposes the locked block when it is the proposer. Round
//! timers double from the base timeout up to the cap.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use thiserror::Error;

use crate::chain::{tx_root, Block, BlockHeader, ChainState, CommitSeal};
use crate::consensus::message::{ConsensusMessage, MessageBody};
use crate::consensus::validate::{validate_block, verify_seals};
use crate::consensus::ValidatorSet;
use crate::crypto::{verify_tx, KeyPair, Signature};
use crate::ledger::Receipt;
use crate::tx::Transaction;
use crate::types::{Address, Hash};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineConfig {
    pub base_timeout_ms: u64,
    pub max_timeout_ms: u64,
    /// Heartbeat for empty blocks, only used when `allow_empty_blocks`.
    pub block_interval_ms: u64,
    pub allow_empty_blocks: bool,
    pub max_block_txs: usize,
    /// Finalized blocks sent per catch-up response.
    pub sync_batch: usize,
    /// Finalized blocks kept in memory for catch-up.
    pub history_len: usize,
    /// How far ahead of the local height messages are buffered.
    pub future_window: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            base_timeout_ms: 500,
            max_timeout_ms: 30_000,
            block_interval_ms: 1_000,
            allow_empty_blocks: false,
            max_block_txs: 1_000,
            sync_batch: 32,
            history_len: 256,
            future_window: 256,
        }
    }
}

impl EngineConfig {
    /// `base * 2^round`, capped.
    pub fn timeout_for(&self, round: u32) -> u64 {
        let factor = 1u64.checked_shl(round.min(63)).unwrap_or(u64::MAX);
        self.base_timeout_ms
            .saturating_mul(factor)
            .min(self.max_timeout_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("this validator is not the proposer for height {height} round {round}")]
    NotProposer { height: u64, round: u32 },
}

/// A block that reached a commit quorum, with its execution results.
#[derive(Debug, Clone)]
pub struct Finalized {
    pub block: Block,
    pub receipts: Vec<Receipt>,
    pub state: ChainState,
}

#[derive(Debug, Clone)]
pub enum Action {
    Broadcast(ConsensusMessage),
    Send { to: Address, message: ConsensusMessage },
    ScheduleTimeout { height: u64, round: u32, after_ms: u64 },
    /// Host should call [`Engine::on_proposal_tick`] after the delay.
    ScheduleProposal { height: u64, round: u32, after_ms: u64 },
    Finalized(Box<Finalized>),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EngineMetrics {
    /// Messages with bad signatures, unknown signers or invalid content.
    pub dropped_invalid: u64,
    pub dropped_stale: u64,
    pub buffered_future: u64,
    /// Every (height, round) this validator entered.
    pub rounds_started: u64,
    pub timeouts: u64,
    pub finalized: u64,
    pub finalized_via_sync: u64,
    pub sync_blocks_sent: u64,
}

#[derive(Debug, Clone)]
struct Candidate {
    block: Block,
    state: ChainState,
    receipts: Vec<Receipt>,
}

#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    key: KeyPair,
    validators: ValidatorSet,

    head: Block,
    head_state: ChainState,
    history: BTreeMap<u64, Block>,

    height: u64,
    round: u32,
    height_started_ms: u64,
    now_ms: u64,
    candidates: HashMap<Hash, Candidate>,
    round_proposal: BTreeMap<u32, Hash>,
    prepared: Option<Hash>,
    committed_round: Option<u32>,
    locked: Option<Hash>,
    proposed_round: Option<u32>,
    prepares: HashMap<(u32, Hash), BTreeSet<Address>>,
    commits: HashMap<(u32, Hash), BTreeMap<Address, Signature>>,
    round_changes: BTreeMap<u32, BTreeSet<Address>>,
    waiting_for_txs: bool,
    timer_armed: bool,

    future: BTreeMap<u64, Vec<ConsensusMessage>>,
    replay: VecDeque<ConsensusMessage>,
    sync_served: HashSet<(Address, u64)>,
    metrics: EngineMetrics,
}

impl Engine {
    /// `recent` are finalized blocks before `head`, kept for catch-up.
    pub fn new(
        config: EngineConfig,
        key: KeyPair,
        validators: ValidatorSet,
        head: Block,
        head_state: ChainState,
        recent: impl IntoIterator<Item = Block>,
    ) -> Self {
        let mut history: BTreeMap<u64, Block> =
            recent.into_iter().map(|b| (b.height(), b)).collect();
        history.insert(head.height(), head.clone());
        let height = head.height() + 1;
        Engine {
            config,
            key,
            validators,
            head,
            head_state,
            history,
            height,
            round: 0,
            height_started_ms: 0,
            now_ms: 0,
            candidates: HashMap::new(),
            round_proposal: BTreeMap::new(),
            prepared: None,
            committed_round: None,
            locked: None,
            proposed_round: None,
            prepares: HashMap::new(),
            commits: HashMap::new(),
            round_changes: BTreeMap::new(),
            waiting_for_txs: false,
            timer_armed: false,
            future: BTreeMap::new(),
            replay: VecDeque::new(),
            sync_served: HashSet::new(),
            metrics: EngineMetrics::default(),
        }
    }

    pub fn address(&self) -> Address {
        self.key.address()
    }

    pub fn key(&self) -> &KeyPair {
        &self.key
    }

    pub fn validators(&self) -> &ValidatorSet {
        &self.validators
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Height currently being decided.
    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn head(&self) -> &Block {
        &self.head
    }

    pub fn head_state(&self) -> &ChainState {
        &self.head_state
    }

    pub fn locked(&self) -> Option<Hash> {
        self.locked
    }

    pub fn metrics(&self) -> &EngineMetrics {
        &self.metrics
    }

    pub fn is_proposer(&self) -> bool {
        self.validators.proposer_for(self.height, self.round) == self.address()
    }

    fn can_propose(&self) -> bool {
        self.round == 0
            || self
                .round_changes
                .get(&self.round)
                .is_some_and(|s| s.len() >= self.validators.quorum())
    }

    /// Enters the first undecided height.
    pub fn start(&mut self, now_ms: u64) -> Vec<Action> {
        self.now_ms = self.now_ms.max(now_ms);
        let mut out = Vec::new();
        self.begin_height(now_ms, &mut out);
        self.drain_replay(now_ms, &mut out);
        out
    }

    /// Tells the engine the host's mempool has transactions. Arms the round
    /// timer and wakes an idle proposer.
    pub fn notify_pending(&mut self, now_ms: u64) -> Vec<Action> {
        self.now_ms = self.now_ms.max(now_ms);
        let mut out = Vec::new();
        self.arm_timer(&mut out);
        if self.waiting_for_txs && self.is_proposer() && self.can_propose() {
            self.waiting_for_txs = false;
            out.push(Action::ScheduleProposal {
                height: self.height,
                round: self.round,
                after_ms: 0,
            });
        }
        out
    }

    /// Fires a previously scheduled proposal. Stale ticks are ignored.
    pub fn on_proposal_tick(
        &mut self,
        now_ms: u64,
        height: u64,
        round: u32,
        pending: &[Transaction],
    ) -> Vec<Action> {
        if height != self.height || round != self.round {
            return Vec::new();
        }
        self.propose(now_ms, pending).unwrap_or_default()
    }

    /// Builds, signs and broadcasts a proposal from `pending` (in order).
    /// Transactions that would not execute (stale nonce, bad signature) are
    /// skipped. With nothing to include and empty blocks disabled, the
    /// engine waits for [`Engine::notify_pending`].
    pub fn propose(&mut self, now_ms: u64, pending: &[Transaction]) -> Result<Vec<Action>, EngineError> {
        if !self.is_proposer() {
            return Err(EngineError::NotProposer {
                height: self.height,
                round: self.round,
            });
        }
        self.now_ms = self.now_ms.max(now_ms);
        let mut out = Vec::new();
        if self.proposed_round == Some(self.round) || !self.can_propose() {
            return Ok(out);
        }

        let block = if let Some(locked) = self.locked {
            match self.candidates.get(&locked) {
                Some(c) => c.block.clone(),
                None => return Ok(out),
            }
        } else {
            let mut working = self.head_state.clone();
            let mut txs = Vec::new();
            let mut receipts = Vec::new();
            for tx in pending {
                if txs.len() >= self.config.max_block_txs {
                    break;
                }
                if let Ok(r) = working.execute_tx(tx) {
                    txs.push(tx.clone());
                    receipts.push(r);
                }
            }
            if txs.is_empty() {
                if !self.config.allow_empty_blocks {
                    self.waiting_for_txs = true;
                    return Ok(out);
                }
                let due = self.height_started_ms + self.config.block_interval_ms;
                if self.round == 0 && now_ms < due {
                    out.push(Action::ScheduleProposal {
                        height: self.height,
                        round: self.round,
                        after_ms: due - now_ms,
                    });
                    return Ok(out);
                }
            }
            let header = BlockHeader {
                height: self.height,
                parent_hash: self.head.hash(),
                tx_root: tx_root(&txs),
                state_root: working.state_root(),
                proposer: self.address(),
                round: self.round,
                timestamp: (now_ms / 1000).max(self.head.header.timestamp),
            };
            let block = Block {
                header,
                transactions: txs,
                commit_seals: Vec::new(),
            };
            self.candidates.insert(
                block.hash(),
                Candidate {
                    block: block.clone(),
                    state: working,
                    receipts,
                },
            );
            block
        };

        self.waiting_for_txs = false;
        self.proposed_round = Some(self.round);
        let hash = block.hash();
        let msg = self.signed(MessageBody::Proposal {
            height: self.height,
            round: self.round,
            block,
        });
        out.push(Action::Broadcast(msg));
        self.round_proposal.entry(self.round).or_insert(hash);
        self.arm_timer(&mut out);
        self.consider_proposal(self.round, hash, &mut out);
        self.drain_replay(now_ms, &mut out);
        Ok(out)
    }

    pub fn on_timeout(&mut self, now_ms: u64, height: u64, round: u32) -> Vec<Action> {
        self.now_ms = self.now_ms.max(now_ms);
        let mut out = Vec::new();
        if height != self.height || round != self.round {
            return out;
        }
        self.metrics.timeouts += 1;
        self.move_to_round(self.round + 1, &mut out);
        self.drain_replay(now_ms, &mut out);
        out
    }

    pub fn on_message(&mut self, now_ms: u64, msg: ConsensusMessage) -> Vec<Action> {
        self.now_ms = self.now_ms.max(now_ms);
        let mut out = Vec::new();
        self.handle(now_ms, msg, &mut out);
        self.drain_replay(now_ms, &mut out);
        out
    }

    fn drain_replay(&mut self, now_ms: u64, out: &mut Vec<Action>) {
        while let Some(msg) = self.replay.pop_front() {
            self.handle_verified(now_ms, msg, out);
        }
    }

    fn signed(&self, body: MessageBody) -> ConsensusMessage {
        ConsensusMessage::sign(&self.key, body)
    }

    fn handle(&mut self, now_ms: u64, msg: ConsensusMessage, out: &mut Vec<Action>) {
        if !self.validators.contains(&msg.signer) || !msg.verify() {
            self.metrics.dropped_invalid += 1;
            return;
        }
        self.handle_verified(now_ms, msg, out);
    }

    fn handle_verified(&mut self, now_ms: u64, msg: ConsensusMessage, out: &mut Vec<Action>) {
        let h = msg.height();
        if h < self.height {
            if !matches!(msg.body, MessageBody::Decided { .. }) {
                let is_round_change = matches!(msg.body, MessageBody::RoundChange { .. });
                self.serve_sync(msg.signer, h, is_round_change, out);
            }
            self.metrics.dropped_stale += 1;
            return;
        }
        if h > self.height {
            let cap = 16 * self.validators.len();
            let slot = self.future.entry(h).or_default();
            if h - self.height <= self.config.future_window && slot.len() < cap {
                slot.push(msg);
                self.metrics.buffered_future += 1;
                // Peers are ahead; run the timer so a round change eventually
                // asks them for the missing blocks.
                self.arm_timer(out);
            }
            return;
        }

        let signer = msg.signer;
        match msg.body {
            MessageBody::Proposal { round, block, .. } => {
                self.on_proposal(signer, round, block, out);
            }
            MessageBody::Prepare { round, block_hash, .. } => {
                self.arm_timer(out);
                self.prepares
                    .entry((round, block_hash))
                    .or_default()
                    .insert(signer);
                self.check_commit(out);
            }
            MessageBody::Commit { round, block_hash, seal, .. } => {
                if !verify_tx(&seal, &block_hash.0, &signer) {
                    self.metrics.dropped_invalid += 1;
                    return;
                }
                self.arm_timer(out);
                self.commits
                    .entry((round, block_hash))
                    .or_default()
                    .insert(signer, seal);
                self.check_finalize(out);
            }
            MessageBody::RoundChange { new_round, .. } => {
                self.on_round_change(signer, new_round, out);
            }
            MessageBody::Decided { block } => {
                self.on_decided(now_ms, block, out);
            }
        }
    }

    fn on_proposal(&mut self, signer: Address, round: u32, block: Block, out: &mut Vec<Action>) {
        if signer != self.validators.proposer_for(self.height, round) || block.header.round > round {
            self.metrics.dropped_invalid += 1;
            return;
        }
        let hash = block.hash();
        if !self.candidates.contains_key(&hash) {
            match validate_block(&block, &self.head.header, &self.head_state, &self.validators) {
                Ok((state, receipts)) => {
                    let block = Block {
                        commit_seals: Vec::new(),
                        ..block
                    };
                    self.candidates.insert(
                        hash,
                        Candidate {
                            block,
                            state,
                            receipts,
                        },
                    );
                }
                Err(_) => {
                    self.metrics.dropped_invalid += 1;
                    return;
                }
            }
        }
        self.arm_timer(out);
        self.round_proposal.entry(round).or_insert(hash);
        if round == self.round && self.round_proposal.get(&round) == Some(&hash) {
            self.consider_proposal(round, hash, out);
        }
        self.check_commit(out);
        // A late body may complete a commit quorum already collected.
        self.check_finalize(out);
    }

    fn consider_proposal(&mut self, round: u32, hash: Hash, out: &mut Vec<Action>) {
        if round != self.round || self.prepared.is_some() {
            return;
        }
        if self.locked.is_some_and(|l| l != hash) {
            return;
        }
        self.prepared = Some(hash);
        let msg = self.signed(MessageBody::Prepare {
            height: self.height,
            round,
            block_hash: hash,
        });
        out.push(Action::Broadcast(msg));
        let me = self.address();
        self.prepares.entry((round, hash)).or_default().insert(me);
        self.check_commit(out);
    }

    fn check_commit(&mut self, out: &mut Vec<Action>) {
        if self.committed_round == Some(self.round) {
            return;
        }
        let Some(hash) = self.prepared else { return };
        let votes = self
            .prepares
            .get(&(self.round, hash))
            .map_or(0, BTreeSet::len);
        if votes < self.validators.quorum() {
            return;
        }
        self.committed_round = Some(self.round);
        self.locked = Some(hash);
        let seal = self.key.sign(&hash.0);
        let msg = self.signed(MessageBody::Commit {
            height: self.height,
            round: self.round,
            block_hash: hash,
            seal,
        });
        out.push(Action::Broadcast(msg));
        let me = self.address();
        self.commits
            .entry((self.round, hash))
            .or_default()
            .insert(me, seal);
        self.check_finalize(out);
    }

    fn check_finalize(&mut self, out: &mut Vec<Action>) {
        let now_ms = self.now_ms;
        let quorum = self.validators.quorum();
        let ready = self
            .commits
            .iter()
            .filter(|((_, hash), seals)| seals.len() >= quorum && self.candidates.contains_key(hash))
            .map(|((round, hash), _)| (*round, *hash))
            .min();
        let Some((round, hash)) = ready else { return };
        let seals = self.commits[&(round, hash)]
            .iter()
            .map(|(validator, signature)| CommitSeal {
                validator: *validator,
                signature: *signature,
            })
            .collect();
        let candidate = self.candidates.remove(&hash).expect("checked above");
        self.finalize(now_ms, candidate, seals, false, out);
    }

    fn finalize(
        &mut self,
        now_ms: u64,
        candidate: Candidate,
        mut seals: Vec<CommitSeal>,
        via_sync: bool,
        out: &mut Vec<Action>,
    ) {
        seals.sort_by_key(|s| self.validators.index_of(&s.validator));
        let block = Block {
            commit_seals: seals,
            ..candidate.block
        };
        self.head = block.clone();
        self.head_state = candidate.state.clone();
        self.history.insert(block.height(), block.clone());
        while self.history.len() > self.config.history_len.max(1) {
            self.history.pop_first();
        }
        self.metrics.finalized += 1;
        if via_sync {
            self.metrics.finalized_via_sync += 1;
        }
        out.push(Action::Finalized(Box::new(Finalized {
            block,
            receipts: candidate.receipts,
            state: candidate.state,
        })));
        self.begin_height(now_ms, out);
    }

    fn begin_height(&mut self, now_ms: u64, out: &mut Vec<Action>) {
        self.height = self.head.height() + 1;
        self.round = 0;
        self.height_started_ms = now_ms;
        self.candidates.clear();
        self.round_proposal.clear();
        self.prepared = None;
        self.committed_round = None;
        self.locked = None;
        self.proposed_round = None;
        self.prepares.clear();
        self.commits.clear();
        self.round_changes.clear();
        self.waiting_for_txs = false;
        self.timer_armed = false;
        self.sync_served.retain(|(_, h)| *h + 1 >= self.height);
        self.metrics.rounds_started += 1;

        if self.config.allow_empty_blocks {
            self.arm_timer(out);
        }
        if self.is_proposer() {
            out.push(Action::ScheduleProposal {
                height: self.height,
                round: 0,
                after_ms: 0,
            });
        }
        let stale: Vec<u64> = self.future.range(..self.height).map(|(h, _)| *h).collect();
        for h in stale {
            self.future.remove(&h);
        }
        if let Some(msgs) = self.future.remove(&self.height) {
            self.replay.extend(msgs);
        }
    }

    fn arm_timer(&mut self, out: &mut Vec<Action>) {
        if self.timer_armed {
            return;
        }
        self.timer_armed = true;
        let mut after_ms = self.config.timeout_for(self.round);
        if self.round == 0 && self.config.allow_empty_blocks {
            after_ms += self.config.block_interval_ms;
        }
        out.push(Action::ScheduleTimeout {
            height: self.height,
            round: self.round,
            after_ms,
        });
    }

    fn move_to_round(&mut self, round: u32, out: &mut Vec<Action>) {
        if round <= self.round && round != 0 {
            return;
        }
        self.round = round;
        self.prepared = None;
        self.timer_armed = false;
        self.metrics.rounds_started += 1;
        let me = self.address();
        if self.round_changes.entry(round).or_default().insert(me) {
            let msg = self.signed(MessageBody::RoundChange {
                height: self.height,
                new_round: round,
            });
            out.push(Action::Broadcast(msg));
        }
        self.arm_timer(out);
        if self.is_proposer() && self.can_propose() {
            out.push(Action::ScheduleProposal {
                height: self.height,
                round,
                after_ms: 0,
            });
        }
        if let Some(hash) = self.round_proposal.get(&round).copied() {
            self.consider_proposal(round, hash, out);
        }
    }

    fn on_round_change(&mut self, signer: Address, new_round: u32, out: &mut Vec<Action>) {
        if new_round == 0 {
            self.metrics.dropped_invalid += 1;
            return;
        }
        self.arm_timer(out);
        let count = {
            let set = self.round_changes.entry(new_round).or_default();
            set.insert(signer);
            set.len()
        };
        if new_round > self.round && count > self.validators.max_faulty() {
            // f + 1 validators moved on, so at least one honest one did.
            self.move_to_round(new_round, out);
        } else if new_round == self.round
            && count >= self.validators.quorum()
            && self.is_proposer()
            && self.proposed_round != Some(new_round)
        {
            out.push(Action::ScheduleProposal {
                height: self.height,
                round: new_round,
                after_ms: 0,
            });
        }
    }

    fn on_decided(&mut self, now_ms: u64, block: Block, out: &mut Vec<Action>) {
        if verify_seals(&block, &self.validators).is_err() {
            self.metrics.dropped_invalid += 1;
            return;
        }
        match validate_block(&block, &self.head.header, &self.head_state, &self.validators) {
            Ok((state, receipts)) => {
                let seals = block.commit_seals.clone();
                let candidate = Candidate {
                    block,
                    state,
                    receipts,
                };
                self.finalize(now_ms, candidate, seals, true, out);
            }
            Err(_) => self.metrics.dropped_invalid += 1,
        }
    }

    fn serve_sync(&mut self, peer: Address, their_height: u64, always: bool, out: &mut Vec<Action>) {
        if peer == self.address() {
            return;
        }
        if !always && !self.sync_served.insert((peer, their_height)) {
            return;
        }
        let last = self
            .head
            .height()
            .min(their_height + self.config.sync_batch.max(1) as u64 - 1);
        for h in their_height..=last {
            if let Some(block) = self.history.get(&h) {
                let msg = self.signed(MessageBody::Decided { block: block.clone() });
                self.metrics.sync_blocks_sent += 1;
                out.push(Action::Send { to: peer, message: msg });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::GenesisDoc;
    use crate::ledger::TxPayload;
    use crate::types::Amount;
    use rand::SeedableRng;

    fn key(seed: u64) -> KeyPair {
        KeyPair::generate(&mut rand_chacha::ChaCha20Rng::seed_from_u64(seed))
    }

    struct Net {
        org: KeyPair,
        keys: Vec<KeyPair>,
        engines: Vec<Engine>,
        genesis: GenesisDoc,
        finalized: Vec<Vec<Block>>,
    }

    impl Net {
        fn new() -> Self {
            let org = key(1);
            let keys: Vec<KeyPair> = (0..4).map(|i| key(10 + i)).collect();
            let genesis = GenesisDoc {
                chain_id: "engine-test".into(),
                organization: org.address(),
                validators: keys.iter().map(KeyPair::address).collect(),
                strict_bank_account_mode: false,
                timestamp: 0,
            };
            let set = ValidatorSet::new(genesis.validators.clone()).unwrap();
            let engines = keys
                .iter()
                .map(|k| {
                    Engine::new(
                        EngineConfig::default(),
                        k.clone(),
                        set.clone(),
                        genesis.genesis_block(),
                        ChainState::genesis(org.address()),
                        [],
                    )
                })
                .collect();
            Net {
                org,
                keys,
                engines,
                genesis,
                finalized: vec![Vec::new(); 4],
            }
        }

        fn index_of(&self, a: &Address) -> usize {
            self.keys.iter().position(|k| k.address() == *a).unwrap()
        }

        /// Delivers messages until quiet. Timers are dropped; proposals are
        /// fired immediately with `pending`.
        fn run(&mut self, from: usize, actions: Vec<Action>, pending: &[Transaction]) {
            let mut queue: VecDeque<(usize, Action)> = actions.into_iter().map(|a| (from, a)).collect();
            while let Some((src, action)) = queue.pop_front() {
                match action {
                    Action::Broadcast(msg) => {
                        for i in (0..4).filter(|i| *i != src) {
                            let out = self.engines[i].on_message(0, msg.clone());
                            queue.extend(out.into_iter().map(|a| (i, a)));
                        }
                    }
                    Action::Send { to, message } => {
                        let i = self.index_of(&to);
                        let out = self.engines[i].on_message(0, message);
                        queue.extend(out.into_iter().map(|a| (i, a)));
                    }
                    Action::ScheduleProposal { height, round, .. } => {
                        let out = self.engines[src].on_proposal_tick(0, height, round, pending);
                        queue.extend(out.into_iter().map(|a| (src, a)));
                    }
                    Action::ScheduleTimeout { .. } => {}
                    Action::Finalized(f) => self.finalized[src].push(f.block),
                }
            }
        }

        fn funding_tx(&self, nonce: u64) -> Transaction {
            Transaction::sign(&self.org, nonce, TxPayload::AddFunds { amount: Amount(10) })
        }
    }

    #[test]
    fn four_engines_finalize_the_same_block() {
        let mut net = Net::new();
        let pending = vec![net.funding_tx(0)];
        for i in 0..4 {
            let out = net.engines[i].start(0);
            net.run(i, out, &pending);
            let out = net.engines[i].notify_pending(0);
            net.run(i, out, &pending);
        }
        let first = net.finalized[0][0].clone();
        assert_eq!(first.height(), 1);
        assert_eq!(first.transactions.len(), 1);
        assert_eq!(first.header.proposer, net.keys[1].address());
        // Seal sets may differ; any quorum of them is acceptable.
        for i in 0..4 {
            assert_eq!(net.finalized[i].len(), 1);
            let b = &net.finalized[i][0];
            assert_eq!(b.hash(), first.hash());
            assert!(verify_seals(b, net.engines[i].validators()).is_ok());
            assert_eq!(net.engines[i].height(), 2);
        }
    }

    #[test]
    fn idle_proposer_waits_for_transactions() {
        let mut net = Net::new();
        let out = net.engines[1].start(0);
        assert!(out.iter().any(|a| matches!(a, Action::ScheduleProposal { .. })));
        assert!(net.engines[1].propose(0, &[]).unwrap().is_empty());
        let out = net.engines[1].notify_pending(0);
        assert!(out
            .iter()
            .any(|a| matches!(a, Action::ScheduleProposal { height: 1, round: 0, after_ms: 0 })));
        assert!(matches!(
            net.engines[0].propose(0, &[]),
            Err(EngineError::NotProposer { height: 1, round: 0 })
        ));
    }

    fn block_by(net: &Net, proposer: usize, round: u32, txs: Vec<Transaction>) -> Block {
        let state = ChainState::genesis(net.org.address()).execute_block(&txs).unwrap().0;
        let parent = net.genesis.genesis_block();
        Block {
            header: BlockHeader {
                height: 1,
                parent_hash: parent.hash(),
                tx_root: tx_root(&txs),
                state_root: state.state_root(),
                proposer: net.keys[proposer].address(),
                round,
                timestamp: 0,
            },
            transactions: txs,
            commit_seals: Vec::new(),
        }
    }

    fn prepares(out: &[Action]) -> Vec<Hash> {
        out.iter()
            .filter_map(|a| match a {
                Action::Broadcast(ConsensusMessage {
                    body: MessageBody::Prepare { block_hash, .. },
                    ..
                }) => Some(*block_hash),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn committed_validator_never_prepares_another_block() {
        let mut net = Net::new();
        let e = &mut net.engines[0];
        e.start(0);
        let a = block_by(&net, 1, 0, vec![net.funding_tx(0)]);
        let a_hash = a.hash();
        let proposal = ConsensusMessage::sign(&net.keys[1], MessageBody::Proposal { height: 1, round: 0, block: a });
        let e = &mut net.engines[0];
        assert_eq!(prepares(&e.on_message(0, proposal)), vec![a_hash]);
        for k in [1, 2] {
            let p = ConsensusMessage::sign(&net.keys[k], MessageBody::Prepare { height: 1, round: 0, block_hash: a_hash });
            e.on_message(0, p);
        }
        assert_eq!(e.locked(), Some(a_hash));

        // Round 1 brings a different block from the next proposer.
        let e_out = e.on_timeout(0, 1, 0);
        assert!(e_out.iter().any(|a| matches!(
            a,
            Action::Broadcast(ConsensusMessage { body: MessageBody::RoundChange { new_round: 1, .. }, .. })
        )));
        let b = block_by(&net, 2, 1, vec![net.funding_tx(0), net.funding_tx(1)]);
        let proposal = ConsensusMessage::sign(&net.keys[2], MessageBody::Proposal { height: 1, round: 1, block: b });
        let e = &mut net.engines[0];
        assert!(prepares(&e.on_message(0, proposal)).is_empty());
        assert_eq!(e.locked(), Some(a_hash));
    }

    #[test]
    fn invalid_proposals_are_dropped() {
        let mut net = Net::new();
        net.engines[0].start(0);
        let mut tampered = block_by(&net, 1, 0, vec![net.funding_tx(0)]);
        tampered.header.state_root.0[0] ^= 1;
        let wrong_proposer = block_by(&net, 3, 0, vec![]);
        let msgs = [
            ConsensusMessage::sign(&net.keys[1], MessageBody::Proposal { height: 1, round: 0, block: tampered }),
            ConsensusMessage::sign(&net.keys[3], MessageBody::Proposal { height: 1, round: 0, block: wrong_proposer }),
            // Signed by someone outside the validator set.
            ConsensusMessage::sign(&net.org, MessageBody::RoundChange { height: 1, new_round: 1 }),
        ];
        let e = &mut net.engines[0];
        for m in msgs {
            assert!(prepares(&e.on_message(0, m)).is_empty());
        }
        assert_eq!(e.metrics().dropped_invalid, 3);
    }

    #[test]
    fn stale_timeouts_are_ignored() {
        let mut net = Net::new();
        let e = &mut net.engines[0];
        e.start(0);
        assert!(!e.on_timeout(0, 1, 0).is_empty());
        assert_eq!(e.round(), 1);
        assert!(e.on_timeout(0, 1, 0).is_empty());
        assert!(e.on_timeout(0, 7, 1).is_empty());
        assert_eq!(e.round(), 1);
    }

    #[test]
    fn f_plus_one_round_changes_pull_a_validator_forward() {
        let mut net = Net::new();
        let e = &mut net.engines[0];
        e.start(0);
        let rc = |k: &KeyPair| ConsensusMessage::sign(k, MessageBody::RoundChange { height: 1, new_round: 3 });
        e.on_message(0, rc(&net.keys[1]));
        assert_eq!(e.round(), 0);
        e.on_message(0, rc(&net.keys[2]));
        assert_eq!(e.round(), 3);
    }

    #[test]
    fn lagging_peer_is_sent_finalized_blocks() {
        let mut net = Net::new();
        let pending = vec![net.funding_tx(0)];
        for i in 0..4 {
            let out = net.engines[i].start(0);
            net.run(i, out, &pending);
            let out = net.engines[i].notify_pending(0);
            net.run(i, out, &pending);
        }
        let block = net.finalized[0][0].clone();
        // A fresh engine still at height 1 asks for a round change.
        let stale = ConsensusMessage::sign(&net.keys[3], MessageBody::RoundChange { height: 1, new_round: 1 });
        let out = net.engines[0].on_message(0, stale.clone());
        let sent: Vec<_> = out
            .iter()
            .filter_map(|a| match a {
                Action::Send { to, message: ConsensusMessage { body: MessageBody::Decided { block }, .. } } => {
                    Some((*to, block.hash()))
                }
                _ => None,
            })
            .collect();
        assert_eq!(sent, vec![(net.keys[3].address(), block.hash())]);
        // Round changes are always answered; other stale messages once.
        assert_eq!(net.engines[0].on_message(0, stale).len(), 1);
        let prepare = ConsensusMessage::sign(&net.keys[3], MessageBody::Prepare { height: 1, round: 0, block_hash: Hash::ZERO });
        assert_eq!(net.engines[0].on_message(0, prepare.clone()).len(), 1);
        assert!(net.engines[0].on_message(0, prepare).is_empty());
    }
}
