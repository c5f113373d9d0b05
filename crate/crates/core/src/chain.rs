//! Blocks, genesis and deterministic block execution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Reader, Writer};
use crate::crypto::{verify_tx, KeyPair, Signature};
use crate::ledger::{AidState, Receipt};
use crate::tx::Transaction;
use crate::types::{Address, Hash};

/// Network bootstrap document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisDoc {
    pub chain_id: String,
    pub organization: Address,
    pub validators: Vec<Address>,
    #[serde(default)]
    pub strict_bank_account_mode: bool,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenesisError {
    #[error("validator {0} listed twice")]
    DuplicateValidator(Address),
    #[error("validator set is empty")]
    NoValidators,
}

impl GenesisDoc {
    pub fn check(&self) -> Result<(), GenesisError> {
        if self.validators.is_empty() {
            return Err(GenesisError::NoValidators);
        }
        for (i, v) in self.validators.iter().enumerate() {
            if self.validators[..i].contains(v) {
                return Err(GenesisError::DuplicateValidator(*v));
            }
        }
        Ok(())
    }

    pub fn genesis_block(&self) -> Block {
        let state = ChainState::genesis(self.organization);
        Block {
            header: BlockHeader {
                height: 0,
                parent_hash: Hash::ZERO,
                tx_root: tx_root(&[]),
                state_root: state.state_root(),
                proposer: Address::default(),
                round: 0,
                timestamp: self.timestamp,
            },
            transactions: Vec::new(),
            commit_seals: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockHeader {
    pub height: u64,
    pub parent_hash: Hash,
    pub tx_root: Hash,
    pub state_root: Hash,
    pub proposer: Address,
    pub round: u32,
    pub timestamp: u64,
}

impl BlockHeader {
    pub fn hash(&self) -> Hash {
        Hash::of(&self.to_canonical_bytes())
    }
}

impl Canonical for BlockHeader {
    fn encode_to(&self, w: &mut Writer) {
        w.u64(self.height)
            .fixed(&self.parent_hash.0)
            .fixed(&self.tx_root.0)
            .fixed(&self.state_root.0)
            .fixed(&self.proposer.0)
            .u32(self.round)
            .u64(self.timestamp);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(BlockHeader {
            height: r.u64()?,
            parent_hash: Hash::decode_from(r)?,
            tx_root: Hash::decode_from(r)?,
            state_root: Hash::decode_from(r)?,
            proposer: Address::decode_from(r)?,
            round: r.u32()?,
            timestamp: r.u64()?,
        })
    }
}

/// A validator's signature over a finalized header hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommitSeal {
    pub validator: Address,
    pub signature: Signature,
}

impl CommitSeal {
    pub fn create(key: &KeyPair, header_hash: &Hash) -> CommitSeal {
        CommitSeal {
            validator: key.address(),
            signature: key.sign(&header_hash.0),
        }
    }

    pub fn verify(&self, header_hash: &Hash) -> bool {
        verify_tx(&self.signature, &header_hash.0, &self.validator)
    }
}

impl Canonical for CommitSeal {
    fn encode_to(&self, w: &mut Writer) {
        w.fixed(&self.validator.0);
        self.signature.encode_to(w);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(CommitSeal {
            validator: Address::decode_from(r)?,
            signature: Signature::decode_from(r)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
    pub commit_seals: Vec<CommitSeal>,
}

impl Block {
    pub fn hash(&self) -> Hash {
        self.header.hash()
    }

    pub fn height(&self) -> u64 {
        self.header.height
    }
}

impl Canonical for Block {
    fn encode_to(&self, w: &mut Writer) {
        self.header.encode_to(w);
        w.count(self.transactions.len());
        for tx in &self.transactions {
            w.bytes(&tx.to_canonical_bytes());
        }
        w.count(self.commit_seals.len());
        for seal in &self.commit_seals {
            seal.encode_to(w);
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let header = BlockHeader::decode_from(r)?;
        let n = r.count()?;
        let transactions = (0..n)
            .map(|_| Transaction::from_canonical_bytes(r.bytes()?))
            .collect::<Result<_, _>>()?;
        let n = r.count()?;
        let commit_seals = (0..n)
            .map(|_| CommitSeal::decode_from(r))
            .collect::<Result<_, _>>()?;
        Ok(Block {
            header,
            transactions,
            commit_seals,
        })
    }
}

/// Keccak-256 of the concatenated transaction hashes.
pub fn tx_root(txs: &[Transaction]) -> Hash {
    let mut buf = Vec::with_capacity(txs.len() * 32);
    for tx in txs {
        buf.extend_from_slice(&tx.hash().0);
    }
    Hash::of(&buf)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TxRejection {
    #[error("invalid signature")]
    BadSignature,
    #[error("bad nonce: expected {expected}, got {got}")]
    BadNonce { expected: u64, got: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecutionError {
    #[error("transaction {index}: {reason}")]
    InvalidTransaction { index: usize, reason: TxRejection },
}

/// Contract state plus per-sender replay counters.
///
/// Only the contract state is committed by `state_root`; nonces are a pure
/// function of the transaction history and are rebuilt on replay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainState {
    pub aid: AidState,
    nonces: BTreeMap<Address, u64>,
}

impl ChainState {
    pub fn genesis(organization: Address) -> ChainState {
        ChainState {
            aid: AidState::init(organization),
            nonces: BTreeMap::new(),
        }
    }

    pub fn next_nonce(&self, sender: &Address) -> u64 {
        self.nonces.get(sender).copied().unwrap_or(0)
    }

    pub fn state_root(&self) -> Hash {
        self.aid.state_root()
    }

    /// Checks signature and nonce, then applies. A contract-level failure
    /// still consumes the nonce; only the receipt records it.
    pub fn execute_tx(&mut self, tx: &Transaction) -> Result<Receipt, TxRejection> {
        let expected = self.next_nonce(&tx.sender);
        if tx.nonce != expected {
            return Err(TxRejection::BadNonce {
                expected,
                got: tx.nonce,
            });
        }
        if !tx.verify() {
            return Err(TxRejection::BadSignature);
        }
        self.nonces.insert(tx.sender, expected + 1);
        Ok(self.aid.apply_mut(&tx.sender, &tx.payload))
    }

    /// Executes every transaction in order. Any transaction with a bad
    /// signature or nonce invalidates the whole block.
    pub fn execute_block(&self, txs: &[Transaction]) -> Result<(ChainState, Vec<Receipt>), ExecutionError> {
        let mut next = self.clone();
        let mut receipts = Vec::with_capacity(txs.len());
        for (index, tx) in txs.iter().enumerate() {
            let receipt = next
                .execute_tx(tx)
                .map_err(|reason| ExecutionError::InvalidTransaction { index, reason })?;
            receipts.push(receipt);
        }
        Ok((next, receipts))
    }
}
