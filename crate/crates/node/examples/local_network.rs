//! Starts four validators in this process, funds a recipient through one
//! node and reads the result back from another.
//!
//! Usage: `cargo run --example local_network [OUT_DIR]`

use std::time::Duration;

use aidledger_core::ledger::TxPayload;
use aidledger_core::types::Amount;
use aidledger_node::client::{bank_account_payload, NodeClient};
use aidledger_node::config::read_key_file;
use aidledger_node::network::{InitOptions, LocalNetwork};
use aidledger_node::testkit::seeded_key;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let temp = tempfile::tempdir()?;
    let out_dir = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| temp.path().to_path_buf());
    let mut opts = InitOptions::new(4, &out_dir, 0);
    opts.seed = Some(1);
    let net = LocalNetwork::launch(opts)?;
    for url in net.urls() {
        println!("validator at {url}");
    }

    let org = read_key_file(&net.layout.org_key_path)?;
    let recipient = seeded_key(2024).address();
    let writer = NodeClient::new(net.urls()[0].clone());
    for payload in [
        TxPayload::AddFunds { amount: Amount(1_000) },
        TxPayload::AddRecipient { recipient },
        bank_account_payload(recipient, "ES9121000418450200051332"),
        TxPayload::SendAllowance { recipient, amount: Amount(150) },
    ] {
        let kind = payload.kind();
        let tx = writer.sign_next(&org, payload)?;
        writer.submit(&tx)?;
        let done = writer.wait_receipt(&tx.hash(), Duration::from_secs(20))?;
        println!("{kind:<20} height {} success {}", done.height, done.receipt.success);
    }

    let (height, root) = net.converge(Duration::from_secs(20))?;
    println!("all nodes at height {height}, state root {root}");
    let reader = NodeClient::new(net.urls()[3].clone());
    println!("org balance on node 3: {}", reader.balance(&org.address())?.balance);
    println!("disbursed to recipient: {}", reader.disbursed(&recipient)?.disbursed);
    net.shutdown();
    Ok(())
}
