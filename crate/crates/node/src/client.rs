//! Blocking HTTP client for the node API. Must not be called from inside
//! an async runtime.

use std::thread::sleep;
use std::time::{Duration, Instant};

use aidledger_core::crypto::KeyPair;
use aidledger_core::ledger::TxPayload;
use aidledger_core::tx::Transaction;
use aidledger_core::types::{AccountHash, Address, Hash};
use reqwest::blocking::{Client, Response};
use serde::de::DeserializeOwned;
use thiserror::Error;

use crate::views::*;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach node: {0}")]
    Connection(String),
    #[error("{}: {}", .body.error, .body.message)]
    Api { status: u16, body: ErrorBody },
    #[error("unexpected response: {0}")]
    Decode(String),
    #[error("timed out waiting for {0}")]
    Timeout(String),
}

impl ClientError {
    /// The error name reported by the node, if any.
    pub fn api_error(&self) -> Option<&str> {
        match self {
            ClientError::Api { body, .. } => Some(&body.error),
            _ => None,
        }
    }

    pub fn is_not_found(&self) -> bool {
        matches!(self, ClientError::Api { status: 404, .. })
    }
}

/// Only the keccak digest of the plaintext is submitted. An empty
/// plaintext stays empty so the contract can reject it.
pub fn bank_account_payload(recipient: Address, plaintext: &str) -> TxPayload {
    let account = if plaintext.is_empty() {
        Vec::new()
    } else {
        AccountHash::of_account(plaintext.as_bytes()).0.to_vec()
    };
    TxPayload::RegisterBankAccount { recipient, account }
}

#[derive(Debug, Clone, Default)]
pub struct EventFilter {
    pub kind: Option<String>,
    pub recipient: Option<Address>,
    pub from_height: Option<u64>,
    pub to_height: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct NodeClient {
    base: String,
    http: Client,
}

impl NodeClient {
    pub fn new(base: impl Into<String>) -> Self {
        let http = Client::builder()
            .timeout(Duration::from_secs(10))
            .build()
            .expect("http client");
        NodeClient {
            base: base.into().trim_end_matches('/').to_string(),
            http,
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn decode<T: DeserializeOwned>(response: Response) -> Result<T, ClientError> {
        let status = response.status();
        let text = response.text().map_err(|e| ClientError::Connection(e.to_string()))?;
        if status.is_success() {
            serde_json::from_str(&text).map_err(|e| ClientError::Decode(format!("{e}: {text}")))
        } else {
            let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
                error: status.canonical_reason().unwrap_or("HttpError").to_string(),
                code: None,
                message: text,
            });
            Err(ClientError::Api {
                status: status.as_u16(),
                body,
            })
        }
    }

    fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, String)]) -> Result<T, ClientError> {
        let response = self
            .http
            .get(format!("{}{path}", self.base))
            .query(query)
            .send()
            .map_err(|e| ClientError::Connection(e.to_string()))?;
        Self::decode(response)
    }

    pub fn submit(&self, tx: &Transaction) -> Result<TxAccepted, ClientError> {
        let response = self
            .http
            .post(format!("{}/tx", self.base))
            .json(&TxSubmission { tx: tx.to_hex() })
            .send()
            .map_err(|e| ClientError::Connection(e.to_string()))?;
        Self::decode(response)
    }

    /// Signs `payload` with the next nonce the node expects from `key`.
    pub fn sign_next(&self, key: &KeyPair, payload: TxPayload) -> Result<Transaction, ClientError> {
        let nonce = self.account(&key.address())?.next_nonce;
        Ok(Transaction::sign(key, nonce, payload))
    }

    pub fn head(&self) -> Result<HeadView, ClientError> {
        self.get("/head", &[])
    }

    pub fn balance(&self, address: &Address) -> Result<BalanceView, ClientError> {
        self.get(&format!("/balance/{address}"), &[])
    }

    pub fn recipient(&self, address: &Address) -> Result<RecipientView, ClientError> {
        self.get(&format!("/recipient/{address}"), &[])
    }

    pub fn account(&self, address: &Address) -> Result<AccountView, ClientError> {
        self.get(&format!("/account/{address}"), &[])
    }

    pub fn disbursed(&self, address: &Address) -> Result<DisbursedView, ClientError> {
        self.get(&format!("/audit/disbursed/{address}"), &[])
    }

    pub fn block(&self, height: u64) -> Result<BlockView, ClientError> {
        self.get(&format!("/block/{height}"), &[])
    }

    pub fn mempool(&self) -> Result<MempoolView, ClientError> {
        self.get("/mempool", &[])
    }

    pub fn receipt(&self, hash: &Hash) -> Result<Option<ReceiptLookup>, ClientError> {
        match self.get(&format!("/receipt/{hash}"), &[]) {
            Ok(r) => Ok(Some(r)),
            Err(e) if e.is_not_found() => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn events_page(&self, filter: &EventFilter, offset: usize, limit: usize) -> Result<EventsPage, ClientError> {
        let mut q = vec![("offset", offset.to_string()), ("limit", limit.to_string())];
        if let Some(k) = &filter.kind {
            q.push(("type", k.clone()));
        }
        if let Some(r) = &filter.recipient {
            q.push(("recipient", r.to_string()));
        }
        if let Some(h) = filter.from_height {
            q.push(("from_height", h.to_string()));
        }
        if let Some(h) = filter.to_height {
            q.push(("to_height", h.to_string()));
        }
        self.get("/events", &q)
    }

    /// Pages through every matching event.
    pub fn all_events(&self, filter: &EventFilter) -> Result<Vec<EventView>, ClientError> {
        let mut out = Vec::new();
        loop {
            let page = self.events_page(filter, out.len(), crate::api::MAX_PAGE)?;
            let done = page.events.is_empty() || out.len() + page.events.len() >= page.total;
            out.extend(page.events);
            if done {
                return Ok(out);
            }
        }
    }

    /// Polls until the transaction is finalized.
    pub fn wait_receipt(&self, hash: &Hash, timeout: Duration) -> Result<ReceiptLookup, ClientError> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(r) = self.receipt(hash)? {
                return Ok(r);
            }
            if Instant::now() >= deadline {
                return Err(ClientError::Timeout(format!("receipt of {hash}")));
            }
            sleep(Duration::from_millis(50));
        }
    }

    /// Polls until the head reaches `height`.
    pub fn wait_height(&self, height: u64, timeout: Duration) -> Result<HeadView, ClientError> {
        let deadline = Instant::now() + timeout;
        loop {
            let head = self.head()?;
            if head.height >= height {
                return Ok(head);
            }
            if Instant::now() >= deadline {
                return Err(ClientError::Timeout(format!("height {height}")));
            }
            sleep(Duration::from_millis(50));
        }
    }
}
