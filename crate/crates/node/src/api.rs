//! HTTP routes. Reads reflect finalized state only, except `/mempool` and
//! the pending-aware nonce in `/account`.

use std::sync::Arc;

use aidledger_core::codec::Canonical;
use aidledger_core::consensus::ConsensusMessage;
use aidledger_core::ledger::Event;
use aidledger_core::tx::Transaction;
use aidledger_core::types::{Address, Hash};
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use crate::node::Shared;
use crate::store::EventQuery;
use crate::views::*;

pub const DEFAULT_PAGE: usize = 100;
pub const MAX_PAGE: usize = 1000;

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn not_found(what: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            body: ErrorBody {
                error: "NotFound".into(),
                code: None,
                message: what.into(),
            },
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                error: "BadRequest".into(),
                code: None,
                message: message.into(),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/tx", post(submit_tx))
        .route("/balance/{address}", get(balance))
        .route("/recipient/{address}", get(recipient))
        .route("/account/{address}", get(account))
        .route("/events", get(events))
        .route("/audit/disbursed/{address}", get(disbursed))
        .route("/block/{height}", get(block))
        .route("/receipt/{hash}", get(receipt))
        .route("/head", get(head))
        .route("/mempool", get(mempool))
        .route("/p2p/consensus", post(p2p_consensus))
        .route("/p2p/tx", post(p2p_tx))
        .with_state(shared)
}

fn parse_address(text: &str) -> Result<Address, ApiError> {
    text.parse()
        .map_err(|e| ApiError::bad_request(format!("address {text:?}: {e}")))
}

fn malformed(message: String) -> ApiError {
    ApiError {
        status: StatusCode::BAD_REQUEST,
        body: ErrorBody {
            error: "Malformed".into(),
            code: Some(aidledger_core::mempool::AdmitError::Malformed.code()),
            message,
        },
    }
}

fn decode_tx(hex_text: &str) -> Result<Transaction, ApiError> {
    Transaction::from_hex(hex_text.trim().trim_start_matches("0x")).map_err(|e| malformed(e.to_string()))
}

fn admit(shared: &Shared, body: TxSubmission, gossip: bool) -> ApiResult<TxAccepted> {
    let tx = decode_tx(&body.tx)?;
    match shared.submit(tx, gossip) {
        Ok(tx_hash) => Ok(Json(TxAccepted {
            tx_hash,
            status: "accepted".into(),
        })),
        Err(e) => Err(ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: ErrorBody {
                error: e.name().into(),
                code: Some(e.code()),
                message: e.to_string(),
            },
        }),
    }
}

async fn submit_tx(
    State(s): State<Arc<Shared>>,
    body: Result<Json<TxSubmission>, JsonRejection>,
) -> ApiResult<TxAccepted> {
    let Json(body) = body.map_err(|e| malformed(e.body_text()))?;
    admit(&s, body, true)
}

async fn p2p_tx(State(s): State<Arc<Shared>>, Json(body): Json<WireEnvelope>) -> ApiResult<TxAccepted> {
    admit(&s, TxSubmission { tx: body.payload }, false)
}

async fn p2p_consensus(State(s): State<Arc<Shared>>, Json(body): Json<WireEnvelope>) -> Result<StatusCode, ApiError> {
    let bytes = hex::decode(&body.payload).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let msg = ConsensusMessage::from_canonical_bytes(&bytes).map_err(|e| ApiError::bad_request(e.to_string()))?;
    s.deliver(msg);
    Ok(StatusCode::ACCEPTED)
}

async fn balance(State(s): State<Arc<Shared>>, Path(address): Path<String>) -> ApiResult<BalanceView> {
    let address = parse_address(&address)?;
    let store = s.store.read().expect("store lock");
    Ok(Json(BalanceView {
        address,
        balance: store.state().aid.balance_of(&address),
        height: store.height(),
    }))
}

async fn recipient(State(s): State<Arc<Shared>>, Path(address): Path<String>) -> ApiResult<RecipientView> {
    let address = parse_address(&address)?;
    let store = s.store.read().expect("store lock");
    let aid = &store.state().aid;
    let account_hash = aid.bank_account(&address);
    Ok(Json(RecipientView {
        address,
        enrolled: aid.is_recipient(&address),
        bank_account_registered: account_hash.is_some(),
        account_hash,
        height: store.height(),
    }))
}

async fn account(State(s): State<Arc<Shared>>, Path(address): Path<String>) -> ApiResult<AccountView> {
    let address = parse_address(&address)?;
    let store = s.store.read().expect("store lock");
    let mempool = s.mempool.lock().expect("mempool lock");
    Ok(Json(AccountView {
        address,
        next_nonce: mempool.next_nonce(&address, store.state()),
        committed_nonce: store.state().next_nonce(&address),
        height: store.height(),
    }))
}

#[derive(Debug, Deserialize)]
struct EventsParams {
    #[serde(rename = "type")]
    kind: Option<String>,
    recipient: Option<String>,
    from_height: Option<u64>,
    to_height: Option<u64>,
    offset: Option<usize>,
    limit: Option<usize>,
}

async fn events(State(s): State<Arc<Shared>>, Query(p): Query<EventsParams>) -> ApiResult<EventsPage> {
    if let Some(kind) = &p.kind {
        if !Event::KINDS.contains(&kind.as_str()) {
            return Err(ApiError::bad_request(format!(
                "unknown event type {kind:?}; expected one of {}",
                Event::KINDS.join(", ")
            )));
        }
    }
    let query = EventQuery {
        kind: p.kind,
        recipient: p.recipient.as_deref().map(parse_address).transpose()?,
        from_height: p.from_height,
        to_height: p.to_height,
    };
    let offset = p.offset.unwrap_or(0);
    let limit = p.limit.unwrap_or(DEFAULT_PAGE).min(MAX_PAGE);
    let store = s.store.read().expect("store lock");
    let (total, page) = store.query_events(&query, offset, limit);
    Ok(Json(EventsPage {
        height: store.height(),
        total,
        offset,
        limit,
        events: page.into_iter().map(EventView::from).collect(),
    }))
}

async fn disbursed(State(s): State<Arc<Shared>>, Path(address): Path<String>) -> ApiResult<DisbursedView> {
    let address = parse_address(&address)?;
    let store = s.store.read().expect("store lock");
    Ok(Json(DisbursedView {
        address,
        disbursed: store.disbursed_to(&address),
        height: store.height(),
    }))
}

async fn block(State(s): State<Arc<Shared>>, Path(height): Path<u64>) -> ApiResult<BlockView> {
    let store = s.store.read().expect("store lock");
    let block = store
        .block(height)
        .ok_or_else(|| ApiError::not_found(format!("no block at height {height}")))?;
    let receipts = store.receipts(height).unwrap_or(&[]);
    Ok(Json(BlockView::new(block, receipts)))
}

async fn receipt(State(s): State<Arc<Shared>>, Path(hash): Path<String>) -> ApiResult<ReceiptLookup> {
    let tx_hash: Hash = hash
        .parse()
        .map_err(|e| ApiError::bad_request(format!("hash {hash:?}: {e}")))?;
    let store = s.store.read().expect("store lock");
    let (loc, receipt) = store
        .receipt(&tx_hash)
        .ok_or_else(|| ApiError::not_found(format!("no finalized transaction {tx_hash}")))?;
    Ok(Json(ReceiptLookup {
        tx_hash,
        height: loc.height,
        tx_index: loc.index,
        receipt: receipt.into(),
    }))
}

async fn head(State(s): State<Arc<Shared>>) -> ApiResult<HeadView> {
    let store = s.store.read().expect("store lock");
    let head = store.head();
    Ok(Json(HeadView {
        chain_id: store.genesis().chain_id.clone(),
        height: head.height(),
        hash: head.hash(),
        state_root: store.state().state_root(),
        timestamp: head.header.timestamp,
        organization: store.genesis().organization,
        validators: store.genesis().validators.clone(),
    }))
}

async fn mempool(State(s): State<Arc<Shared>>) -> ApiResult<MempoolView> {
    let mempool = s.mempool.lock().expect("mempool lock");
    Ok(Json(MempoolView {
        size: mempool.len(),
        transactions: mempool.iter().map(Transaction::hash).collect(),
    }))
}
