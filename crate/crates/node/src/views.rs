//! JSON bodies of the HTTP API. Amounts travel as decimal strings and
//! byte values as `0x` hex, so no client loses precision.

use aidledger_core::chain::Block;
use aidledger_core::ledger::{Event, Receipt, TxPayload};
use aidledger_core::tx::Transaction;
use aidledger_core::types::{AccountHash, Address, Amount, Hash};
use serde::{Deserialize, Serialize};

use crate::store::IndexedEvent;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxSubmission {
    /// Canonical transaction bytes, hex encoded.
    pub tx: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxAccepted {
    pub tx_hash: Hash,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<u8>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceView {
    pub address: Address,
    pub balance: Amount,
    pub height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipientView {
    pub address: Address,
    pub enrolled: bool,
    pub bank_account_registered: bool,
    pub account_hash: Option<AccountHash>,
    pub height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountView {
    pub address: Address,
    /// Includes transactions waiting in the mempool.
    pub next_nonce: u64,
    pub committed_nonce: u64,
    pub height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventView {
    pub height: u64,
    pub tx_hash: Hash,
    pub tx_index: u32,
    pub event_index: u32,
    #[serde(flatten)]
    pub event: Event,
}

impl From<&IndexedEvent> for EventView {
    fn from(e: &IndexedEvent) -> Self {
        EventView {
            height: e.height,
            tx_hash: e.tx_hash,
            tx_index: e.tx_index,
            event_index: e.event_index,
            event: e.event.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventsPage {
    pub height: u64,
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub events: Vec<EventView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisbursedView {
    pub address: Address,
    pub disbursed: Amount,
    pub height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadView {
    pub chain_id: String,
    pub height: u64,
    pub hash: Hash,
    pub state_root: Hash,
    pub timestamp: u64,
    pub organization: Address,
    pub validators: Vec<Address>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MempoolView {
    pub size: usize,
    pub transactions: Vec<Hash>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum PayloadView {
    AddRecipient { recipient: Address },
    RemoveRecipient { recipient: Address },
    /// The submitted bytes, hex encoded.
    RegisterBankAccount { recipient: Address, account: String },
    AddFunds { amount: Amount },
    SendAllowance { recipient: Address, amount: Amount },
}

impl From<&TxPayload> for PayloadView {
    fn from(p: &TxPayload) -> Self {
        match p {
            TxPayload::AddRecipient { recipient } => PayloadView::AddRecipient { recipient: *recipient },
            TxPayload::RemoveRecipient { recipient } => PayloadView::RemoveRecipient { recipient: *recipient },
            TxPayload::RegisterBankAccount { recipient, account } => PayloadView::RegisterBankAccount {
                recipient: *recipient,
                account: format!("0x{}", hex::encode(account)),
            },
            TxPayload::AddFunds { amount } => PayloadView::AddFunds { amount: *amount },
            TxPayload::SendAllowance { recipient, amount } => PayloadView::SendAllowance {
                recipient: *recipient,
                amount: *amount,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiptView {
    pub success: bool,
    pub error: Option<String>,
    pub error_code: Option<u8>,
    pub events: Vec<Event>,
}

impl From<&Receipt> for ReceiptView {
    fn from(r: &Receipt) -> Self {
        ReceiptView {
            success: r.is_success(),
            error: r.error.map(|e| e.name().to_string()),
            error_code: r.error.map(|e| e.code()),
            events: r.events.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxView {
    pub hash: Hash,
    pub sender: Address,
    pub nonce: u64,
    pub payload: PayloadView,
    pub receipt: ReceiptView,
}

impl TxView {
    pub fn new(tx: &Transaction, receipt: &Receipt) -> Self {
        TxView {
            hash: tx.hash(),
            sender: tx.sender,
            nonce: tx.nonce,
            payload: (&tx.payload).into(),
            receipt: receipt.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockView {
    pub height: u64,
    pub hash: Hash,
    pub parent_hash: Hash,
    pub tx_root: Hash,
    pub state_root: Hash,
    pub proposer: Address,
    pub round: u32,
    pub timestamp: u64,
    pub transactions: Vec<TxView>,
    pub sealed_by: Vec<Address>,
}

impl BlockView {
    pub fn new(block: &Block, receipts: &[Receipt]) -> Self {
        let h = &block.header;
        BlockView {
            height: h.height,
            hash: block.hash(),
            parent_hash: h.parent_hash,
            tx_root: h.tx_root,
            state_root: h.state_root,
            proposer: h.proposer,
            round: h.round,
            timestamp: h.timestamp,
            transactions: block
                .transactions
                .iter()
                .zip(receipts)
                .map(|(tx, r)| TxView::new(tx, r))
                .collect(),
            sealed_by: block.commit_seals.iter().map(|s| s.validator).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiptLookup {
    pub tx_hash: Hash,
    pub height: u64,
    pub tx_index: u32,
    pub receipt: ReceiptView,
}

/// Peer-to-peer envelope: canonical bytes, hex encoded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireEnvelope {
    pub payload: String,
}
