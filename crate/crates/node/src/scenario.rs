//! Scripted end-to-end runs against a local network.
//!
//! A script is a list of organization actions, each with the outcome it
//! should have, followed by checks on the final state. Recipient keys come
//! from the script seed, so a script replayed on a fresh network always
//! ends at the same state root.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use aidledger_core::crypto::KeyPair;
use aidledger_core::ledger::TxPayload;
use aidledger_core::types::{Address, Amount, Hash};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{bank_account_payload, ClientError, EventFilter, NodeClient};
use crate::config::read_key_file;
use crate::network::{InitOptions, LocalNetwork, NetworkError};
use crate::node::SINK_FILE;
use crate::sink::read_instructions;

const RECEIPT_TIMEOUT: Duration = Duration::from_secs(20);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum Action {
    /// Creates a named recipient key.
    Keygen { name: String },
    AddFunds { amount: Amount },
    AddRecipient { recipient: String },
    RemoveRecipient { recipient: String },
    /// `account` is the plaintext; only its digest is submitted.
    RegisterAccount { recipient: String, account: String },
    SendAllowance { recipient: String, amount: Amount },
}

impl Action {
    pub fn label(&self) -> String {
        match self {
            Action::Keygen { name } => format!("keygen {name}"),
            Action::AddFunds { amount } => format!("add-funds {amount}"),
            Action::AddRecipient { recipient } => format!("add-recipient {recipient}"),
            Action::RemoveRecipient { recipient } => format!("remove-recipient {recipient}"),
            Action::RegisterAccount { recipient, account } => format!("register-account {recipient} {account:?}"),
            Action::SendAllowance { recipient, amount } => format!("send-allowance {recipient} {amount}"),
        }
    }
}

/// `"ok"`, `{"rejected": "<admission error>"}` or `{"failed": "<contract error>"}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    #[default]
    Ok,
    Rejected(String),
    Failed(String),
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Outcome::Ok => f.write_str("ok"),
            Outcome::Rejected(e) => write!(f, "rejected {e}"),
            Outcome::Failed(e) => write!(f, "failed {e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    #[serde(flatten)]
    pub action: Action,
    #[serde(default)]
    pub expect: Outcome,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinalChecks {
    pub org_balance: Option<Amount>,
    /// Event kinds in ledger order.
    pub events: Option<Vec<String>>,
    pub bank_instructions: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub strict_bank_account_mode: bool,
    pub steps: Vec<Step>,
    #[serde(default)]
    pub expect: FinalChecks,
}

fn step(action: Action) -> Step {
    Step {
        action,
        expect: Outcome::Ok,
    }
}

fn canonical_events() -> Vec<String> {
    ["FundsAdded", "RecipientAdded", "BankAccountRegistered", "AllowanceSent"]
        .map(String::from)
        .to_vec()
}

impl ScenarioScript {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Fund 1000, enroll, register a bank account, disburse 300.
    pub fn canonical() -> Self {
        let r = || "recipient".to_string();
        ScenarioScript {
            name: "canonical".into(),
            seed: 7,
            strict_bank_account_mode: false,
            steps: vec![
                step(Action::Keygen { name: r() }),
                step(Action::AddFunds { amount: Amount(1000) }),
                step(Action::AddRecipient { recipient: r() }),
                step(Action::RegisterAccount {
                    recipient: r(),
                    account: "IBAN-TEST-001".into(),
                }),
                step(Action::SendAllowance {
                    recipient: r(),
                    amount: Amount(300),
                }),
            ],
            expect: FinalChecks {
                org_balance: Some(Amount(700)),
                events: Some(canonical_events()),
                bank_instructions: Some(1),
            },
        }
    }

    /// Strict mode with an allowance attempted before registration. The
    /// early allowance must be turned away at admission; the rest of the
    /// script then completes as in the canonical run.
    pub fn strict_variant() -> Self {
        let r = || "recipient".to_string();
        ScenarioScript {
            name: "strict-allowance-before-registration".into(),
            seed: 7,
            strict_bank_account_mode: true,
            steps: vec![
                step(Action::Keygen { name: r() }),
                step(Action::AddFunds { amount: Amount(1000) }),
                step(Action::AddRecipient { recipient: r() }),
                Step {
                    action: Action::SendAllowance {
                        recipient: r(),
                        amount: Amount(300),
                    },
                    expect: Outcome::Rejected("StrictModeNoAccount".into()),
                },
                step(Action::RegisterAccount {
                    recipient: r(),
                    account: "IBAN-TEST-001".into(),
                }),
                step(Action::SendAllowance {
                    recipient: r(),
                    amount: Amount(300),
                }),
            ],
            expect: FinalChecks {
                org_balance: Some(Amount(700)),
                events: Some(canonical_events()),
                bank_instructions: Some(1),
            },
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("step {step} ({label}): expected {expected}, got {got}")]
    Step {
        step: usize,
        label: String,
        expected: Outcome,
        got: Outcome,
    },
    #[error("unknown recipient {0:?}; create it with a keygen step or give an address")]
    UnknownName(String),
    #[error("assertion failed: {0}")]
    Assertion(String),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepReport {
    pub step: usize,
    pub action: String,
    pub node: String,
    pub tx_hash: Option<Hash>,
    pub height: Option<u64>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub steps: Vec<StepReport>,
    pub height: u64,
    pub state_root: Hash,
    pub org_balance: Amount,
    pub events: Vec<String>,
    pub bank_instructions: usize,
    pub recipients: BTreeMap<String, Address>,
}

struct Runner<'a> {
    clients: Vec<NodeClient>,
    org: KeyPair,
    rng: ChaCha20Rng,
    names: BTreeMap<String, Address>,
    log: &'a mut dyn Write,
}

impl Runner<'_> {
    fn resolve(&self, name: &str) -> Result<Address, ScenarioError> {
        if let Some(a) = self.names.get(name) {
            return Ok(*a);
        }
        name.parse().map_err(|_| ScenarioError::UnknownName(name.into()))
    }

    fn payload(&self, action: &Action) -> Result<TxPayload, ScenarioError> {
        Ok(match action {
            Action::Keygen { .. } => unreachable!("keygen submits nothing"),
            Action::AddFunds { amount } => TxPayload::AddFunds { amount: *amount },
            Action::AddRecipient { recipient } => TxPayload::AddRecipient {
                recipient: self.resolve(recipient)?,
            },
            Action::RemoveRecipient { recipient } => TxPayload::RemoveRecipient {
                recipient: self.resolve(recipient)?,
            },
            Action::RegisterAccount { recipient, account } => bank_account_payload(self.resolve(recipient)?, account),
            Action::SendAllowance { recipient, amount } => TxPayload::SendAllowance {
                recipient: self.resolve(recipient)?,
                amount: *amount,
            },
        })
    }

    fn run_step(&mut self, index: usize, step: &Step) -> Result<StepReport, ScenarioError> {
        let label = step.action.label();
        // Spread submissions over the nodes; any of them may take a transaction.
        let client = &self.clients[index % self.clients.len()];
        let mut report = StepReport {
            step: index,
            action: label.clone(),
            node: client.base().to_string(),
            tx_hash: None,
            height: None,
            outcome: Outcome::Ok,
        };
        if let Action::Keygen { name } = &step.action {
            let key = KeyPair::generate(&mut self.rng);
            self.names.insert(name.clone(), key.address());
            writeln!(self.log, "  [{index}] {label}: {}", key.address()).ok();
        } else {
            let tx = client.sign_next(&self.org, self.payload(&step.action)?)?;
            report.outcome = match client.submit(&tx) {
                Ok(accepted) => {
                    report.tx_hash = Some(accepted.tx_hash);
                    let receipt = client.wait_receipt(&accepted.tx_hash, RECEIPT_TIMEOUT)?;
                    report.height = Some(receipt.height);
                    match receipt.receipt.error {
                        None => Outcome::Ok,
                        Some(e) => Outcome::Failed(e),
                    }
                }
                Err(ClientError::Api { status: 422, body }) => Outcome::Rejected(body.error),
                Err(e) => return Err(e.into()),
            };
            let at = report.height.map(|h| format!(" at height {h}")).unwrap_or_default();
            writeln!(self.log, "  [{index}] {label}: {}{at}", report.outcome).ok();
        }
        if report.outcome != step.expect {
            return Err(ScenarioError::Step {
                step: index,
                label,
                expected: step.expect.clone(),
                got: report.outcome,
            });
        }
        Ok(report)
    }
}

fn check<T: PartialEq + std::fmt::Debug>(what: &str, expected: &Option<T>, got: &T) -> Result<(), ScenarioError> {
    match expected {
        Some(e) if e != got => Err(ScenarioError::Assertion(format!("{what}: expected {e:?}, got {got:?}"))),
        _ => Ok(()),
    }
}

/// Boots a fresh 4-validator network in `out_dir`, runs the script, checks
/// the final state on every node and shuts the network down.
pub fn run_scenario(script: &ScenarioScript, out_dir: &Path, log: &mut dyn Write) -> Result<ScenarioReport, ScenarioError> {
    let mut opts = InitOptions::new(4, out_dir, 0);
    opts.seed = Some(script.seed);
    opts.strict_bank_account_mode = script.strict_bank_account_mode;
    opts.chain_id = format!("scenario-{}", script.name);
    let network = LocalNetwork::launch(opts)?;
    writeln!(log, "network up: {}", network.urls().join(" ")).ok();
    let result = drive(script, &network, log);
    network.shutdown();
    result
}

fn drive(script: &ScenarioScript, network: &LocalNetwork, log: &mut dyn Write) -> Result<ScenarioReport, ScenarioError> {
    let org = read_key_file(&network.layout.org_key_path).map_err(NetworkError::from)?;
    let org_address = org.address();
    let mut runner = Runner {
        clients: network.urls().into_iter().map(NodeClient::new).collect(),
        org,
        // Distinct stream from the one that made the network keys.
        rng: ChaCha20Rng::seed_from_u64(script.seed ^ 0x7265_6369_7069_656e),
        names: BTreeMap::new(),
        log,
    };
    let mut steps = Vec::new();
    for (i, step) in script.steps.iter().enumerate() {
        steps.push(runner.run_step(i, step)?);
    }

    let (height, state_root) = network.converge(Duration::from_secs(10))?;
    let reader = &runner.clients[runner.clients.len() - 1];
    let org_balance = reader.balance(&org_address)?.balance;
    let events: Vec<String> = reader
        .all_events(&EventFilter::default())?
        .into_iter()
        .map(|e| e.event.kind().to_string())
        .collect();

    let sink = network
        .node(0)
        .shared
        .sink
        .as_ref()
        .ok_or_else(|| ScenarioError::Other("node 0 has no bank sink".into()))?;
    if !sink.flush(Duration::from_secs(5)) {
        return Err(ScenarioError::Assertion(format!("bank sink did not drain: {:?}", sink.status())));
    }
    let sink_path = network.config(0).data_dir.join(SINK_FILE);
    let bank_instructions = read_instructions(&sink_path)
        .map_err(|e| ScenarioError::Other(e.to_string()))?
        .len();

    writeln!(runner.log, "organization balance: {org_balance}").ok();
    writeln!(runner.log, "events: {}", events.join(", ")).ok();
    writeln!(runner.log, "bank instructions: {bank_instructions}").ok();
    writeln!(runner.log, "height {height} state_root {state_root}").ok();

    check("organization balance", &script.expect.org_balance, &org_balance)?;
    check("event sequence", &script.expect.events, &events)?;
    check("bank instructions", &script.expect.bank_instructions, &bank_instructions)?;

    Ok(ScenarioReport {
        name: script.name.clone(),
        steps,
        height,
        state_root,
        org_balance,
        events,
        bank_instructions,
        recipients: runner.names,
    })
}
