//! Runs the aid contract directly: fund, enroll, register, disburse, and a
//! few calls that the guards refuse.

use aidledger_core::audit::AuditTotals;
use aidledger_core::ledger::{AidState, TxPayload};
use aidledger_core::types::{Address, Amount};

fn main() {
    let org = Address([0x0a; 20]);
    let alice = Address([0x01; 20]);
    let stranger = Address([0xee; 20]);
    let mut state = AidState::init(org);
    let mut audit = AuditTotals::default();

    let calls = [
        (org, TxPayload::AddFunds { amount: Amount(1_000) }),
        (org, TxPayload::SendAllowance { recipient: alice, amount: Amount(10) }),
        (org, TxPayload::AddRecipient { recipient: alice }),
        (org, TxPayload::RegisterBankAccount { recipient: alice, account: Vec::new() }),
        (org, TxPayload::RegisterBankAccount { recipient: alice, account: b"FR1420041010050500013M02606".to_vec() }),
        (stranger, TxPayload::AddFunds { amount: Amount(5) }),
        (org, TxPayload::SendAllowance { recipient: alice, amount: Amount(300) }),
        (org, TxPayload::SendAllowance { recipient: alice, amount: Amount(900) }),
    ];

    for (sender, payload) in &calls {
        let receipt = state.apply_mut(sender, payload);
        let who = if *sender == org { "org" } else { "stranger" };
        match receipt.error {
            None => {
                for e in &receipt.events {
                    audit.record(e).expect("amounts fit");
                    println!("{who:>8} {:<20} ok  {e:?}", payload.kind());
                }
            }
            Some(err) => println!("{who:>8} {:<20} err {} (code {})", payload.kind(), err.name(), err.code()),
        }
    }

    let balance = state.balance_of(&org);
    println!("\norganization balance {balance}");
    println!("added {} disbursed {}", audit.added, audit.disbursed);
    println!("conservation holds: {}", audit.check_conservation(balance).is_ok());
    println!("state root {}", state.state_root());
}
