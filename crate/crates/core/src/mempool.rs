//! Transaction admission and FIFO ordering for proposal.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::ChainState;
use crate::ledger::TxPayload;
use crate::tx::Transaction;
use crate::types::{Address, Hash};

/// Largest bank-account identifier accepted, in bytes.
pub const MAX_ACCOUNT_LEN: usize = 256;

/// Admission failures. Integer codes continue after the contract codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error, Serialize, Deserialize)]
pub enum AdmitError {
    #[error("signature does not verify for the sender")]
    BadSignature,
    #[error("nonce is not the sender's next expected nonce")]
    BadNonce,
    #[error("payload is malformed")]
    Malformed,
    #[error("strict mode: recipient has no registered bank account")]
    StrictModeNoAccount,
    #[error("mempool is full")]
    Full,
}

impl AdmitError {
    pub fn code(self) -> u8 {
        match self {
            AdmitError::BadSignature => 10,
            AdmitError::BadNonce => 11,
            AdmitError::Malformed => 12,
            AdmitError::StrictModeNoAccount => 13,
            AdmitError::Full => 14,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AdmitError::BadSignature => "BadSignature",
            AdmitError::BadNonce => "BadNonce",
            AdmitError::Malformed => "Malformed",
            AdmitError::StrictModeNoAccount => "StrictModeNoAccount",
            AdmitError::Full => "Full",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mempool {
    strict_bank_account_mode: bool,
    capacity: usize,
    queue: VecDeque<Transaction>,
    hashes: HashSet<Hash>,
    // Next nonce per sender counting pending transactions.
    pending_next: HashMap<Address, u64>,
}

impl Mempool {
    pub fn new(strict_bank_account_mode: bool) -> Self {
        Self::with_capacity(strict_bank_account_mode, 10_000)
    }

    pub fn with_capacity(strict_bank_account_mode: bool, capacity: usize) -> Self {
        Mempool {
            strict_bank_account_mode,
            capacity,
            queue: VecDeque::new(),
            hashes: HashSet::new(),
            pending_next: HashMap::new(),
        }
    }

    pub fn strict_mode(&self) -> bool {
        self.strict_bank_account_mode
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn contains(&self, hash: &Hash) -> bool {
        self.hashes.contains(hash)
    }

    /// Next nonce `sender` should use, including pending transactions.
    pub fn next_nonce(&self, sender: &Address, committed: &ChainState) -> u64 {
        self.pending_next
            .get(sender)
            .copied()
            .unwrap_or_else(|| committed.next_nonce(sender))
    }

    pub fn admit(&mut self, tx: Transaction, committed: &ChainState) -> Result<Hash, AdmitError> {
        if !tx.verify() {
            return Err(AdmitError::BadSignature);
        }
        if let TxPayload::RegisterBankAccount { account, .. } = &tx.payload {
            if account.len() > MAX_ACCOUNT_LEN {
                return Err(AdmitError::Malformed);
            }
        }
        if tx.nonce != self.next_nonce(&tx.sender, committed) {
            return Err(AdmitError::BadNonce);
        }
        if self.strict_bank_account_mode {
            if let TxPayload::SendAllowance { recipient, .. } = &tx.payload {
                if !self.has_account(recipient, committed) {
                    return Err(AdmitError::StrictModeNoAccount);
                }
            }
        }
        if self.queue.len() >= self.capacity {
            return Err(AdmitError::Full);
        }
        let hash = tx.hash();
        self.pending_next.insert(tx.sender, tx.nonce + 1);
        self.hashes.insert(hash);
        self.queue.push_back(tx);
        Ok(hash)
    }

    fn has_account(&self, recipient: &Address, committed: &ChainState) -> bool {
        committed.aid.bank_account(recipient).is_some()
            || self.queue.iter().any(|tx| {
                matches!(&tx.payload,
                    TxPayload::RegisterBankAccount { recipient: r, account }
                        if r == recipient && !account.is_empty())
            })
    }

    /// Up to `limit` transactions in arrival order.
    pub fn pending(&self, limit: usize) -> Vec<Transaction> {
        self.queue.iter().take(limit).cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transaction> {
        self.queue.iter()
    }

    /// Drops everything the new head made stale: included transactions and
    /// any whose nonce is now behind the committed counter. Transactions
    /// that no longer chain from the committed nonce are dropped as well.
    pub fn on_commit(&mut self, committed: &ChainState) {
        let mut expected: HashMap<Address, u64> = HashMap::new();
        let mut kept = VecDeque::with_capacity(self.queue.len());
        self.hashes.clear();
        for tx in self.queue.drain(..) {
            let next = expected
                .entry(tx.sender)
                .or_insert_with(|| committed.next_nonce(&tx.sender));
            if tx.nonce == *next {
                *next += 1;
                self.hashes.insert(tx.hash());
                kept.push_back(tx);
            }
        }
        self.queue = kept;
        self.pending_next = expected;
    }
}
