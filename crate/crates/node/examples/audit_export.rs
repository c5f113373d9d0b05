//! Disburses to two recipients on a local network, exports the audit trail
//! from a live node and checks it against the bank instructions node 0
//! emitted.

use std::io::Write;
use std::time::{Duration, Instant};

use aidledger_core::audit::check_exactly_once;
use aidledger_core::ledger::{Event, TxPayload};
use aidledger_core::types::Amount;
use aidledger_node::cli::audit_export;
use aidledger_node::client::NodeClient;
use aidledger_node::config::read_key_file;
use aidledger_node::network::{InitOptions, LocalNetwork};
use aidledger_node::node::SINK_FILE;
use aidledger_node::sink::read_instructions;
use aidledger_node::testkit::seeded_key;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let net = LocalNetwork::launch(InitOptions::new(4, dir.path(), 0))?;
    let org = read_key_file(&net.layout.org_key_path)?;
    let client = NodeClient::new(net.urls()[1].clone());

    let a = seeded_key(1).address();
    let b = seeded_key(2).address();
    let mut last = None;
    for payload in [
        TxPayload::AddFunds { amount: Amount(900) },
        TxPayload::AddRecipient { recipient: a },
        TxPayload::AddRecipient { recipient: b },
        TxPayload::SendAllowance { recipient: a, amount: Amount(200) },
        TxPayload::SendAllowance { recipient: b, amount: Amount(50) },
        TxPayload::SendAllowance { recipient: a, amount: Amount(25) },
    ] {
        let tx = client.sign_next(&org, payload)?;
        client.submit(&tx)?;
        last = Some(tx.hash());
    }
    client.wait_receipt(&last.expect("submitted"), Duration::from_secs(20))?;
    net.converge(Duration::from_secs(20))?;

    let export = audit_export(&client)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{:>6} {:<16} {:>8} {:>10} {:>9}", "height", "event", "added", "disbursed", "expected")?;
    for row in &export.rows {
        writeln!(
            out,
            "{:>6} {:<16} {:>8} {:>10} {:>9}",
            row.event.height,
            row.event.event.kind(),
            row.total_added,
            row.total_disbursed,
            row.expected_org_balance
        )?;
    }
    writeln!(out, "org balance {}, conserved {}", export.org_balance, export.conserved)?;

    let sink = net.config(0).data_dir.join(SINK_FILE);
    let allowances: Vec<_> = export
        .rows
        .iter()
        .filter_map(|r| match r.event.event {
            Event::AllowanceSent { recipient, amount } => Some((recipient, amount)),
            _ => None,
        })
        .collect();
    // The sink writes asynchronously.
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        let instructions = read_instructions(&sink).unwrap_or_default();
        let pairs = instructions.iter().map(|i| (i.recipient, i.amount));
        if check_exactly_once(allowances.clone(), pairs).is_ok() {
            writeln!(out, "{} bank instructions, each allowance exactly once", instructions.len())?;
            break;
        }
        if Instant::now() > deadline {
            return Err("bank instructions do not match allowances".into());
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    net.shutdown();
    Ok(())
}
