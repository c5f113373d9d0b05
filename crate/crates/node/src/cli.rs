//! The `aidledger` command line.
//!
//! Exit codes: 0 success, 1 usage, 2 node unreachable, 3 application error
//! (admission rejection, failed receipt, missing record, bad local file).
//! Rejections print the error name and its numeric code so every contract
//! and admission error stays distinguishable.
//!
//! Key files are JSON objects `{"secret": "<64 hex>", "address": "0x.."}`
//! written with owner-only permissions. The address is checked against the
//! secret on load.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use aidledger_core::audit::AuditTotals;
use aidledger_core::crypto::KeyPair;
use aidledger_core::ledger::{Event, TxPayload};
use aidledger_core::types::{Address, Amount};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::client::{bank_account_payload, ClientError, EventFilter, NodeClient};
use crate::config::{read_key_file, write_key_file, ConfigError, NodeConfig};
use crate::network::{init, InitOptions, NetworkError};
use crate::scenario::{run_scenario, ScenarioError, ScenarioScript};
use crate::store::export_log;
use crate::views::{BlockView, EventView};

pub const DEFAULT_NODE_URL: &str = "http://127.0.0.1:26650";
const WAIT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Parser)]
#[command(name = "aidledger", version, about = "Operate an aid-distribution ledger network")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Node HTTP endpoint.
    #[arg(long, global = true, default_value = DEFAULT_NODE_URL)]
    pub node_url: String,
    /// Key file used to sign transactions.
    #[arg(long, global = true)]
    pub key: Option<PathBuf>,
    /// Wait until submitted transactions are finalized.
    #[arg(long, global = true)]
    pub wait: bool,
    /// Print machine-readable JSON.
    #[arg(long = "json-style", global = true)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Key management.
    #[command(subcommand)]
    Keys(KeysCommand),
    /// Bootstrap and run validator networks.
    #[command(subcommand)]
    Network(NetworkCommand),
    /// Organization transactions.
    #[command(subcommand)]
    Org(OrgCommand),
    /// Read-only queries.
    #[command(subcommand)]
    Query(QueryCommand),
}

#[derive(Debug, Subcommand)]
pub enum KeysCommand {
    /// Generate a key file and print its address.
    Gen {
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing file.
        #[arg(long)]
        force: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum NetworkCommand {
    /// Write genesis, validator keys and one config per node.
    Init {
        #[arg(long, default_value_t = 4)]
        validators: usize,
        #[arg(long)]
        out_dir: PathBuf,
        /// Organization key to use; generated in the output directory if omitted.
        #[arg(long)]
        org_key: Option<PathBuf>,
        /// Derive all keys deterministically.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 26650)]
        base_port: u16,
        #[arg(long, default_value = "aidledger-local")]
        chain_id: String,
        /// Refuse allowances to recipients without a registered account.
        #[arg(long)]
        strict: bool,
    },
    /// Run one node until interrupted.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Boot a local 4-validator network and run a scripted scenario.
    Demo {
        /// Keep the network files here instead of a temporary directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Run the strict-mode script with an allowance before registration.
        #[arg(long, conflicts_with = "script")]
        strict: bool,
        /// JSON scenario script.
        #[arg(long)]
        script: Option<PathBuf>,
    },
    /// Verify a node's block log and write it out as JSON. Read-only.
    Export {
        #[arg(long)]
        data_dir: PathBuf,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Subcommand)]
pub enum OrgCommand {
    AddRecipient { recipient: Address },
    RemoveRecipient { recipient: Address },
    /// The account plaintext never leaves this process; only its digest is sent.
    RegisterAccount { recipient: Address, account: String },
    AddFunds { amount: Amount },
    SendAllowance { recipient: Address, amount: Amount },
}

impl OrgCommand {
    pub fn payload(&self) -> TxPayload {
        match self {
            OrgCommand::AddRecipient { recipient } => TxPayload::AddRecipient { recipient: *recipient },
            OrgCommand::RemoveRecipient { recipient } => TxPayload::RemoveRecipient { recipient: *recipient },
            OrgCommand::RegisterAccount { recipient, account } => bank_account_payload(*recipient, account),
            OrgCommand::AddFunds { amount } => TxPayload::AddFunds { amount: *amount },
            OrgCommand::SendAllowance { recipient, amount } => TxPayload::SendAllowance {
                recipient: *recipient,
                amount: *amount,
            },
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum QueryCommand {
    /// Balance of an address, or of the --key holder.
    Balance { address: Option<Address> },
    /// Enrollment and bank-account status.
    Recipient { address: Option<Address> },
    Events {
        #[arg(long = "type")]
        kind: Option<String>,
        #[arg(long)]
        recipient: Option<Address>,
        #[arg(long)]
        from_height: Option<u64>,
        #[arg(long)]
        to_height: Option<u64>,
    },
    /// Full event history with running totals.
    AuditExport {
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Connection(String),
    App(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Connection(_) => 2,
            CliError::App(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Connection(m) | CliError::App(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match &e {
            ClientError::Connection(_) => CliError::Connection(e.to_string()),
            ClientError::Api { body, .. } => match body.code {
                Some(code) => CliError::App(format!("rejected: {} (code {code}): {}", body.error, body.message)),
                None => CliError::App(format!("{}: {}", body.error, body.message)),
            },
            _ => CliError::App(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::App(e.to_string())
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::TooFewValidators(_) => CliError::Usage(e.to_string()),
            e => CliError::App(e.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Client(c) => c.into(),
            e => CliError::App(e.to_string()),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(cli, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = stdout.flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let g = cli.global;
    match cli.command {
        Command::Keys(KeysCommand::Gen { out: path, force }) => keys_gen(&g, &path, force, out),
        Command::Network(cmd) => network(&g, cmd, out),
        Command::Org(cmd) => org(&g, &cmd, out),
        Command::Query(cmd) => query(&g, cmd, out),
    }
}

fn emit<T: Serialize>(g: &GlobalOpts, out: &mut dyn Write, value: &T, pretty: impl FnOnce() -> String) -> Result<(), CliError> {
    let text = if g.json {
        serde_json::to_string(value).expect("views serialize")
    } else {
        pretty()
    };
    writeln!(out, "{text}").map_err(|e| CliError::App(e.to_string()))
}

fn key(g: &GlobalOpts) -> Result<KeyPair, CliError> {
    let path = g
        .key
        .as_ref()
        .ok_or_else(|| CliError::Usage("this command needs --key <FILE>".into()))?;
    Ok(read_key_file(path)?)
}

fn address_or_key(g: &GlobalOpts, address: Option<Address>) -> Result<Address, CliError> {
    match address {
        Some(a) => Ok(a),
        None => key(g).map(|k| k.address()),
    }
}

#[derive(Serialize)]
struct KeyView {
    address: Address,
    path: PathBuf,
}

fn keys_gen(g: &GlobalOpts, path: &Path, force: bool, out: &mut dyn Write) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::App(format!("{} exists; pass --force to replace it", path.display())));
    }
    let key = KeyPair::generate(&mut rand::rngs::OsRng);
    write_key_file(path, &key)?;
    let view = KeyView {
        address: key.address(),
        path: path.to_path_buf(),
    };
    emit(g, out, &view, || view.address.to_string())
}

#[derive(Serialize)]
struct InitView {
    chain_id: String,
    organization: Address,
    validators: Vec<Address>,
    max_faulty: usize,
    quorum: usize,
    genesis: PathBuf,
    configs: Vec<PathBuf>,
}

fn network(g: &GlobalOpts, cmd: NetworkCommand, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        NetworkCommand::Init {
            validators,
            out_dir,
            org_key,
            seed,
            base_port,
            chain_id,
            strict,
        } => {
            if base_port as usize + validators > u16::MAX as usize + 1 {
                return Err(CliError::Usage(format!("base port {base_port} leaves no room for {validators} nodes")));
            }
            let mut opts = InitOptions::new(validators, out_dir, base_port);
            opts.org_key = org_key;
            opts.seed = seed;
            opts.chain_id = chain_id;
            opts.strict_bank_account_mode = strict;
            let layout = init(&opts)?;
            let set = layout.validator_set();
            let view = InitView {
                chain_id: layout.genesis.chain_id.clone(),
                organization: layout.genesis.organization,
                validators: layout.genesis.validators.clone(),
                max_faulty: set.max_faulty(),
                quorum: set.quorum(),
                genesis: layout.genesis_path.clone(),
                configs: layout.config_paths.clone(),
            };
            emit(g, out, &view, || {
                let mut s = format!(
                    "chain {} with {} validators (f={}, quorum={})\norganization {}\n",
                    view.chain_id,
                    view.validators.len(),
                    view.max_faulty,
                    view.quorum,
                    view.organization
                );
                for (v, c) in view.validators.iter().zip(&view.configs) {
                    s.push_str(&format!("  {v}  {}\n", c.display()));
                }
                s.push_str(&format!("genesis {}", view.genesis.display()));
                s
            })
        }
        NetworkCommand::Run { config } => run_node(&config, out),
        NetworkCommand::Export { data_dir, out: path } => {
            let export = chain_export(&data_dir)?;
            let text = serde_json::to_string_pretty(&export).expect("export serializes");
            match path {
                Some(path) => {
                    std::fs::write(&path, text)
                        .map_err(|e| CliError::App(format!("cannot write {}: {e}", path.display())))?;
                    emit(g, out, &export.state_root, || {
                        format!(
                            "{} blocks to {}; head {} state_root {}",
                            export.blocks.len(),
                            path.display(),
                            export.height,
                            export.state_root
                        )
                    })
                }
                None => writeln!(out, "{text}").map_err(|e| CliError::App(e.to_string())),
            }
        }
        NetworkCommand::Demo { out_dir, strict, script } => {
            let script = match script {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| CliError::App(format!("cannot read {}: {e}", path.display())))?;
                    ScenarioScript::from_json(&text)
                        .map_err(|e| CliError::App(format!("invalid script {}: {e}", path.display())))?
                }
                None if strict => ScenarioScript::strict_variant(),
                None => ScenarioScript::canonical(),
            };
            let temp;
            let dir = match out_dir {
                Some(d) => d,
                None => {
                    temp = tempfile::tempdir().map_err(|e| CliError::App(e.to_string()))?;
                    temp.path().to_path_buf()
                }
            };
            let mut log: Box<dyn Write> = if g.json {
                Box::new(std::io::sink())
            } else {
                Box::new(std::io::stderr())
            };
            writeln!(log, "scenario {}", script.name).ok();
            let report = run_scenario(&script, &dir, &mut log)?;
            emit(g, out, &report, || {
                format!("scenario {} passed\nstate_root {}", report.name, report.state_root)
            })
        }
    }
}

fn run_node(config_path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let config = NodeConfig::load(config_path)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::App(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&config.listen)
            .await
            .map_err(|e| CliError::App(format!("cannot listen on {}: {e}", config.listen)))?;
        let mut node = crate::node::start(config, listener)
            .await
            .map_err(|e| CliError::App(e.to_string()))?;
        writeln!(out, "node {} listening on {}", node.shared.address, node.url()).ok();
        out.flush().ok();
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = terminated() => {}
            _ = node.wait() => {}
        }
        let halted = node.shared.halted();
        node.stop().await;
        match halted {
            Some(reason) => Err(CliError::App(format!("node halted: {reason}"))),
            None => Ok(()),
        }
    })
}

#[cfg(unix)]
async fn terminated() {
    use tokio::signal::unix::{signal, SignalKind};
    match signal(SignalKind::terminate()) {
        Ok(mut s) => {
            s.recv().await;
        }
        Err(_) => std::future::pending().await,
    }
}

#[cfg(not(unix))]
async fn terminated() {
    std::future::pending().await
}

#[derive(Serialize)]
struct SubmitView {
    tx_hash: aidledger_core::types::Hash,
    nonce: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    receipt: Option<crate::views::ReceiptLookup>,
}

fn org(g: &GlobalOpts, cmd: &OrgCommand, out: &mut dyn Write) -> Result<(), CliError> {
    let key = key(g)?;
    let client = NodeClient::new(&g.node_url);
    let tx = client.sign_next(&key, cmd.payload())?;
    let accepted = client.submit(&tx)?;
    let mut view = SubmitView {
        tx_hash: accepted.tx_hash,
        nonce: tx.nonce,
        receipt: None,
    };
    if g.wait {
        view.receipt = Some(client.wait_receipt(&accepted.tx_hash, WAIT_TIMEOUT)?);
    }
    emit(g, out, &view, || {
        let mut s = format!("tx {}", view.tx_hash);
        if let Some(r) = &view.receipt {
            s.push_str(&format!("\nfinalized at height {} index {}", r.height, r.tx_index));
            for e in &r.receipt.events {
                s.push_str(&format!("\n  {}", describe(e)));
            }
        }
        s
    })?;
    match view.receipt.and_then(|r| r.receipt.error.zip(r.receipt.error_code)) {
        Some((name, code)) => Err(CliError::App(format!("failed: {name} (code {code})"))),
        None => Ok(()),
    }
}

fn describe(e: &Event) -> String {
    match e {
        Event::RecipientAdded { recipient } => format!("RecipientAdded {recipient}"),
        Event::RecipientRemoved { recipient } => format!("RecipientRemoved {recipient}"),
        Event::BankAccountRegistered { recipient, account_hash } => {
            format!("BankAccountRegistered {recipient} {account_hash}")
        }
        Event::FundsAdded { amount } => format!("FundsAdded {amount}"),
        Event::AllowanceSent { recipient, amount } => format!("AllowanceSent {recipient} {amount}"),
    }
}

/// One exported row: the event plus running totals after it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct AuditRow {
    #[serde(flatten)]
    pub event: EventView,
    pub total_added: Amount,
    pub total_disbursed: Amount,
    /// `total_added - total_disbursed`, which must equal the organization balance.
    pub expected_org_balance: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct AuditExport {
    pub chain_id: String,
    pub height: u64,
    pub organization: Address,
    pub org_balance: Amount,
    pub conserved: bool,
    pub rows: Vec<AuditRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ChainExport {
    pub chain_id: String,
    pub height: u64,
    pub state_root: aidledger_core::types::Hash,
    /// Bytes of an incomplete trailing frame, ignored by the export.
    pub torn_bytes: u64,
    pub blocks: Vec<BlockView>,
}

pub fn chain_export(data_dir: &Path) -> Result<ChainExport, CliError> {
    let log = export_log(data_dir).map_err(|e| CliError::App(format!("{}: {e}", data_dir.display())))?;
    Ok(ChainExport {
        chain_id: log.genesis.chain_id.clone(),
        height: log.blocks.last().map_or(0, |(b, _)| b.height()),
        state_root: log.state.state_root(),
        torn_bytes: log.torn_bytes,
        blocks: log.blocks.iter().map(|(b, r)| BlockView::new(b, r)).collect(),
    })
}

pub fn audit_export(client: &NodeClient) -> Result<AuditExport, CliError> {
    let head = client.head()?;
    let events = client.all_events(&EventFilter {
        to_height: Some(head.height),
        ..EventFilter::default()
    })?;
    let org_balance = client.balance(&head.organization)?.balance;
    let mut totals = AuditTotals::default();
    let mut rows = Vec::with_capacity(events.len());
    for view in events {
        totals
            .record(&view.event)
            .map_err(|e| CliError::App(format!("event at height {}: {e}", view.height)))?;
        rows.push(AuditRow {
            event: view,
            total_added: totals.added,
            total_disbursed: totals.disbursed,
            expected_org_balance: Amount(totals.added.0 - totals.disbursed.0),
        });
    }
    Ok(AuditExport {
        chain_id: head.chain_id,
        height: head.height,
        organization: head.organization,
        org_balance,
        conserved: totals.check_conservation(org_balance).is_ok(),
        rows,
    })
}

fn query(g: &GlobalOpts, cmd: QueryCommand, out: &mut dyn Write) -> Result<(), CliError> {
    let client = NodeClient::new(&g.node_url);
    match cmd {
        QueryCommand::Balance { address } => {
            let v = client.balance(&address_or_key(g, address)?)?;
            emit(g, out, &v, || v.balance.to_string())
        }
        QueryCommand::Recipient { address } => {
            let v = client.recipient(&address_or_key(g, address)?)?;
            emit(g, out, &v, || {
                let account = match &v.account_hash {
                    Some(h) => format!("registered {h}"),
                    None => "none".into(),
                };
                format!(
                    "{}\n  enrolled: {}\n  bank account: {account}\n  as of height {}",
                    v.address, v.enrolled, v.height
                )
            })
        }
        QueryCommand::Events {
            kind,
            recipient,
            from_height,
            to_height,
        } => {
            let events = client.all_events(&EventFilter {
                kind,
                recipient,
                from_height,
                to_height,
            })?;
            emit(g, out, &events, || {
                events
                    .iter()
                    .map(|e| format!("{:>6} {} {}", e.height, e.tx_hash, describe(&e.event)))
                    .collect::<Vec<_>>()
                    .join("\n")
            })
        }
        QueryCommand::AuditExport { out: path } => {
            let export = audit_export(&client)?;
            let text = serde_json::to_string_pretty(&export).expect("export serializes");
            match path {
                Some(path) => {
                    std::fs::write(&path, text)
                        .map_err(|e| CliError::App(format!("cannot write {}: {e}", path.display())))?;
                    emit(g, out, &export.conserved, || {
                        format!(
                            "{} rows to {}; conservation {}",
                            export.rows.len(),
                            path.display(),
                            if export.conserved { "holds" } else { "VIOLATED" }
                        )
                    })?;
                }
                None => writeln!(out, "{text}").map_err(|e| CliError::App(e.to_string()))?,
            }
            if export.conserved {
                Ok(())
            } else {
                Err(CliError::App("conservation check failed".into()))
            }
        }
    }
}
