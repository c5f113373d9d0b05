//! Append-only block log with replay on open.
//!
//! A data directory holds `genesis.json` and `blocks.log`. Each block after
//! genesis is one frame: `u32 length | canonical block bytes | u32 crc32`.
//! Opening a store replays every frame from genesis, re-executing and
//! re-checking seals, so the materialized state is always the replay of
//! the log. A frame cut short by a crash is truncated away; a frame whose
//! checksum does not match refuses to open.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use aidledger_core::audit::AuditTotals;
use aidledger_core::chain::{Block, ChainState, GenesisDoc, GenesisError};
use aidledger_core::codec::{Canonical, DecodeError};
use aidledger_core::consensus::{validate_block, verify_seals, InvalidBlock, ValidatorSet, ValidatorSetError};
use aidledger_core::ledger::{Event, Receipt};
use aidledger_core::types::{Address, Amount, Hash};
use thiserror::Error;

use crate::sink::BankInstruction;

pub const GENESIS_FILE: &str = "genesis.json";
pub const LOG_FILE: &str = "blocks.log";

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("expected height {expected}, found {got}")]
    GapInChain { expected: u64, got: u64 },
    #[error("hash mismatch at height {height}")]
    HashMismatch { height: u64 },
    #[error("invalid block at height {height}: {reason}")]
    Invalid { height: u64, reason: InvalidBlock },
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage failure: {0}")]
    Io(#[from] io::Error),
    #[error("checksum mismatch in frame at byte {offset}")]
    Checksum { offset: u64 },
    #[error("undecodable block in frame at byte {offset}: {source}")]
    Decode { offset: u64, source: DecodeError },
    #[error("bad genesis: {0}")]
    Genesis(String),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("a store already exists in {0}")]
    AlreadyExists(PathBuf),
}

impl From<GenesisError> for StoreError {
    fn from(e: GenesisError) -> Self {
        StoreError::Genesis(e.to_string())
    }
}

impl From<ValidatorSetError> for StoreError {
    fn from(e: ValidatorSetError) -> Self {
        StoreError::Genesis(e.to_string())
    }
}

/// One event with its position in the chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedEvent {
    pub height: u64,
    pub tx_index: u32,
    pub tx_hash: Hash,
    pub event_index: u32,
    pub event: Event,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxLocation {
    pub height: u64,
    pub index: u32,
}

#[derive(Debug, Clone, Default)]
pub struct EventQuery {
    pub kind: Option<String>,
    pub recipient: Option<Address>,
    pub from_height: Option<u64>,
    pub to_height: Option<u64>,
}

impl EventQuery {
    pub fn matches(&self, e: &IndexedEvent) -> bool {
        self.kind.as_deref().is_none_or(|k| e.event.kind() == k)
            && self.recipient.is_none_or(|r| e.event.recipient() == Some(r))
            && self.from_height.is_none_or(|h| e.height >= h)
            && self.to_height.is_none_or(|h| e.height <= h)
    }
}

/// Chain-following state shared by replay and live commits.
#[derive(Debug, Clone)]
struct Follower {
    validators: ValidatorSet,
    blocks: Vec<Block>,
    state: ChainState,
    receipts: Vec<Vec<Receipt>>,
    events: Vec<IndexedEvent>,
    txs: HashMap<Hash, TxLocation>,
    instructions: Vec<BankInstruction>,
    audit: AuditTotals,
}

impl Follower {
    fn new(genesis: &GenesisDoc) -> Result<Self, StoreError> {
        genesis.check()?;
        Ok(Follower {
            validators: ValidatorSet::new(genesis.validators.clone())?,
            blocks: vec![genesis.genesis_block()],
            state: ChainState::genesis(genesis.organization),
            receipts: vec![Vec::new()],
            events: Vec::new(),
            txs: HashMap::new(),
            instructions: Vec::new(),
            audit: AuditTotals::default(),
        })
    }

    fn head(&self) -> &Block {
        self.blocks.last().expect("genesis is always present")
    }

    /// Checks `block` against the head without applying it.
    fn check(&self, block: &Block) -> Result<(ChainState, Vec<Receipt>), ReplayError> {
        let head = self.head();
        let expected = head.height() + 1;
        if block.height() != expected {
            return Err(ReplayError::GapInChain {
                expected,
                got: block.height(),
            });
        }
        if block.header.parent_hash != head.hash() {
            return Err(ReplayError::HashMismatch { height: expected });
        }
        let invalid = |reason| ReplayError::Invalid {
            height: expected,
            reason,
        };
        verify_seals(block, &self.validators).map_err(invalid)?;
        validate_block(block, &head.header, &self.state, &self.validators).map_err(|e| match e {
            InvalidBlock::StateRoot => ReplayError::HashMismatch { height: expected },
            other => invalid(other),
        })
    }

    fn apply(&mut self, block: Block, state: ChainState, receipts: Vec<Receipt>) -> Vec<BankInstruction> {
        let height = block.height();
        // Walk the transactions again to capture each allowance's account
        // as registered at that moment.
        let mut working = self.state.aid.clone();
        let mut fresh = Vec::new();
        for (i, (tx, receipt)) in block.transactions.iter().zip(&receipts).enumerate() {
            let tx_hash = tx.hash();
            working.apply_mut(&tx.sender, &tx.payload);
            self.txs.insert(
                tx_hash,
                TxLocation {
                    height,
                    index: i as u32,
                },
            );
            for (j, event) in receipt.events.iter().enumerate() {
                // Totals are bounded by the u128 balance arithmetic.
                let _ = self.audit.record(event);
                if let Event::AllowanceSent { recipient, amount } = event {
                    fresh.push(BankInstruction::new(
                        *recipient,
                        working.bank_account(recipient),
                        *amount,
                        height,
                        tx_hash,
                        j as u32,
                    ));
                }
                self.events.push(IndexedEvent {
                    height,
                    tx_index: i as u32,
                    tx_hash,
                    event_index: j as u32,
                    event: event.clone(),
                });
            }
        }
        debug_assert_eq!(working.state_root(), state.state_root());
        self.instructions.extend(fresh.iter().cloned());
        self.blocks.push(block);
        self.state = state;
        self.receipts.push(receipts);
        fresh
    }

    fn push(&mut self, block: Block) -> Result<Vec<BankInstruction>, ReplayError> {
        let (state, receipts) = self.check(&block)?;
        Ok(self.apply(block, state, receipts))
    }
}

/// Rebuilds the state from genesis and the blocks after it. A leading
/// height-0 block must be the genesis block itself.
pub fn replay(genesis: &GenesisDoc, blocks: &[Block]) -> Result<ChainState, StoreError> {
    let mut f = Follower::new(genesis)?;
    let mut rest = blocks;
    if let Some(first) = blocks.first() {
        if first.height() == 0 {
            if first.hash() != f.head().hash() {
                return Err(ReplayError::HashMismatch { height: 0 }.into());
            }
            rest = &blocks[1..];
        }
    }
    for block in rest {
        f.push(block.clone())?;
    }
    Ok(f.state)
}

pub struct ChainStore {
    dir: PathBuf,
    genesis: GenesisDoc,
    log: File,
    chain: Follower,
    truncated_bytes: u64,
}

impl ChainStore {
    /// Initializes an empty store. Fails if the directory already has one.
    pub fn create(dir: impl AsRef<Path>, genesis: &GenesisDoc) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let genesis_path = dir.join(GENESIS_FILE);
        if genesis_path.exists() {
            return Err(StoreError::AlreadyExists(dir));
        }
        genesis.check()?;
        let text = serde_json::to_string_pretty(genesis).expect("genesis serializes");
        fs::write(&genesis_path, text)?;
        File::create(dir.join(LOG_FILE))?.sync_all()?;
        Self::open(dir)
    }

    /// Opens an existing store and replays its log.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        let log_path = dir.join(LOG_FILE);
        OpenOptions::new().create(true).append(true).open(&log_path)?;
        let (genesis, chain, valid_len, truncated_bytes) = load(&dir)?;
        if truncated_bytes > 0 {
            let f = OpenOptions::new().write(true).open(&log_path)?;
            f.set_len(valid_len)?;
            f.sync_all()?;
        }
        let log = OpenOptions::new().append(true).open(&log_path)?;
        Ok(ChainStore {
            dir,
            genesis,
            log,
            chain,
            truncated_bytes,
        })
    }

    pub fn open_or_create(dir: impl AsRef<Path>, genesis: &GenesisDoc) -> Result<Self, StoreError> {
        if dir.as_ref().join(GENESIS_FILE).exists() {
            let store = Self::open(dir)?;
            if store.genesis != *genesis {
                return Err(StoreError::Genesis("data directory holds a different genesis".into()));
            }
            Ok(store)
        } else {
            Self::create(dir, genesis)
        }
    }

    /// Validates, persists (fsync) and applies a finalized block. Returns
    /// its receipts and the bank instructions it produced.
    pub fn commit(&mut self, block: Block) -> Result<(Vec<Receipt>, Vec<BankInstruction>), StoreError> {
        let (state, receipts) = self.chain.check(&block)?;
        let payload = block.to_canonical_bytes();
        let mut frame = Vec::with_capacity(payload.len() + 8);
        frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        frame.extend_from_slice(&payload);
        frame.extend_from_slice(&crc32fast::hash(&payload).to_be_bytes());
        self.log.write_all(&frame)?;
        self.log.sync_data()?;
        let instructions = self.chain.apply(block, state, receipts.clone());
        Ok((receipts, instructions))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn genesis(&self) -> &GenesisDoc {
        &self.genesis
    }

    pub fn validators(&self) -> &ValidatorSet {
        &self.chain.validators
    }

    /// Bytes dropped from a torn final frame when the store was opened.
    pub fn truncated_bytes(&self) -> u64 {
        self.truncated_bytes
    }

    pub fn head(&self) -> &Block {
        self.chain.head()
    }

    pub fn height(&self) -> u64 {
        self.head().height()
    }

    pub fn state(&self) -> &ChainState {
        &self.chain.state
    }

    pub fn block(&self, height: u64) -> Option<&Block> {
        self.chain.blocks.get(usize::try_from(height).ok()?)
    }

    /// All blocks from genesis to head.
    pub fn blocks(&self) -> &[Block] {
        &self.chain.blocks
    }

    pub fn receipts(&self, height: u64) -> Option<&[Receipt]> {
        self.chain
            .receipts
            .get(usize::try_from(height).ok()?)
            .map(Vec::as_slice)
    }

    pub fn locate_tx(&self, hash: &Hash) -> Option<TxLocation> {
        self.chain.txs.get(hash).copied()
    }

    pub fn receipt(&self, hash: &Hash) -> Option<(TxLocation, &Receipt)> {
        let loc = self.locate_tx(hash)?;
        let receipt = self.receipts(loc.height)?.get(loc.index as usize)?;
        Some((loc, receipt))
    }

    pub fn events(&self) -> &[IndexedEvent] {
        &self.chain.events
    }

    /// Matching events in block order: total count and one page.
    pub fn query_events(&self, q: &EventQuery, offset: usize, limit: usize) -> (usize, Vec<&IndexedEvent>) {
        let mut total = 0;
        let mut page = Vec::new();
        for e in self.chain.events.iter().filter(|e| q.matches(e)) {
            if total >= offset && page.len() < limit {
                page.push(e);
            }
            total += 1;
        }
        (total, page)
    }

    pub fn audit(&self) -> &AuditTotals {
        &self.chain.audit
    }

    pub fn disbursed_to(&self, recipient: &Address) -> Amount {
        self.chain.audit.disbursed_to(recipient)
    }

    /// Every instruction the chain implies, in block order.
    pub fn instructions(&self) -> &[BankInstruction] {
        &self.chain.instructions
    }
}

/// `Ok(None)` marks a torn tail; a complete frame with a bad checksum is an
/// error.
/// Reads and replays a data directory. Returns the replayed chain, the
/// length of the valid log prefix and the number of torn bytes after it.
fn load(dir: &Path) -> Result<(GenesisDoc, Follower, u64, u64), StoreError> {
    let text = fs::read_to_string(dir.join(GENESIS_FILE))?;
    let genesis: GenesisDoc = serde_json::from_str(&text).map_err(|e| StoreError::Genesis(e.to_string()))?;
    let mut chain = Follower::new(&genesis)?;
    let mut bytes = Vec::new();
    File::open(dir.join(LOG_FILE))?.read_to_end(&mut bytes)?;

    let mut offset = 0usize;
    while offset < bytes.len() {
        let Some((payload, next)) = read_frame(&bytes, offset)? else {
            break;
        };
        let block = Block::from_canonical_bytes(payload).map_err(|source| StoreError::Decode {
            offset: offset as u64,
            source,
        })?;
        chain.push(block)?;
        offset = next;
    }
    Ok((genesis, chain, offset as u64, (bytes.len() - offset) as u64))
}

/// A verified, read-only view of a data directory.
#[derive(Debug, Clone)]
pub struct LogExport {
    pub genesis: GenesisDoc,
    /// Every block from genesis on, each with its receipts.
    pub blocks: Vec<(Block, Vec<Receipt>)>,
    pub state: ChainState,
    /// Trailing bytes of an incomplete frame, left in place.
    pub torn_bytes: u64,
}

/// Replays `dir` without modifying it, so a running or crashed node's
/// directory can be inspected.
pub fn export_log(dir: impl AsRef<Path>) -> Result<LogExport, StoreError> {
    let (genesis, chain, _, torn_bytes) = load(dir.as_ref())?;
    Ok(LogExport {
        genesis,
        blocks: chain.blocks.into_iter().zip(chain.receipts).collect(),
        state: chain.state,
        torn_bytes,
    })
}

fn read_frame(bytes: &[u8], offset: usize) -> Result<Option<(&[u8], usize)>, StoreError> {
    let rest = &bytes[offset..];
    if rest.len() < 4 {
        return Ok(None);
    }
    let len = u32::from_be_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
    let end = 4 + len + 4;
    if rest.len() < end {
        return Ok(None);
    }
    let payload = &rest[4..4 + len];
    let crc = u32::from_be_bytes(rest[4 + len..end].try_into().expect("4 bytes"));
    if crc32fast::hash(payload) != crc {
        return Err(StoreError::Checksum {
            offset: offset as u64,
        });
    }
    Ok(Some((payload, offset + end)))
}
