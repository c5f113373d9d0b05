//! Writes a chain to disk, cuts the last frame short as a crash would, and
//! reopens the store to show replay dropping the torn tail.

use std::fs::OpenOptions;
use std::io::Write;

use aidledger_core::ledger::TxPayload;
use aidledger_core::types::{Address, Amount};
use aidledger_node::store::{ChainStore, LOG_FILE};
use aidledger_node::testkit::TestChain;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut chain = TestChain::new(4);
    let mut store = ChainStore::create(dir.path(), &chain.genesis)?;

    let alice = Address([0xa1; 20]);
    store.commit(chain.next_block(vec![
        TxPayload::AddFunds { amount: Amount(500) },
        TxPayload::AddRecipient { recipient: alice },
    ]))?;
    for i in 1..=5 {
        let (_, instructions) = store.commit(chain.next_block(vec![TxPayload::SendAllowance {
            recipient: alice,
            amount: Amount(i * 10),
        }]))?;
        for ins in instructions {
            println!("height {} instruction {} -> {} (manual review {})", ins.block_height, ins.amount, ins.recipient, ins.manual_review);
        }
    }
    let root = store.state().state_root();
    println!("wrote height {} root {root}", store.height());
    drop(store);

    // Half of a frame header plus some garbage.
    let mut log = OpenOptions::new().append(true).open(dir.path().join(LOG_FILE))?;
    log.write_all(&[0, 0, 1, 0, 0xde, 0xad])?;
    drop(log);

    let reopened = ChainStore::open(dir.path())?;
    println!(
        "reopened height {} root {} (dropped {} torn bytes)",
        reopened.height(),
        reopened.state().state_root(),
        reopened.truncated_bytes()
    );
    assert_eq!(reopened.state().state_root(), root);
    println!("organization balance {}", reopened.state().aid.balance_of(&chain.org.address()));
    Ok(())
}
