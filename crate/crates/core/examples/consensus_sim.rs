//! Four validators agreeing on blocks over a simulated network.
//!
//! Usage: `cargo run --example consensus_sim [SEED] [DROP_RATE]`


use aidledger_core::cluster::{ClusterConfig, SimCluster};
use aidledger_core::ledger::TxPayload;
use aidledger_core::netsim::SimConfig;
use aidledger_core::tx::Transaction;
use aidledger_core::types::Amount;

fn main() {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let drop_rate: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.0);

    let config = ClusterConfig {
        sim: SimConfig {
            seed,
            drop_rate,
            record_trace: false,
            ..SimConfig::default()
        },
        ..ClusterConfig::default()
    };
    let mut cluster = SimCluster::new(config).expect("valid config");
    let schedule = (0..40)
        .map(|n| {
            let tx = Transaction::sign(&cluster.organization, n, TxPayload::AddFunds { amount: Amount(10) });
            (n * 25, tx)
        })
        .collect();
    cluster.add_client(schedule);

    let out = cluster.sim.run_for(20_000);
    println!("seed {seed}, drop rate {drop_rate}");
    println!("{} events, {} messages dropped", out.events_processed, cluster.sim.messages_dropped());
    for i in 0..cluster.validator_count() {
        let v = cluster.validator(i);
        let m = v.engine().metrics();
        println!(
            "validator {i}: height {:>3}  rounds {:>3}  timeouts {:>2}  synced {:>2}  balance {}",
            v.head_height(),
            m.rounds_started,
            m.timeouts,
            m.finalized_via_sync,
            v.engine().head_state().aid.balance_of(&cluster.organization.address()),
        );
    }
    let included: usize = cluster.validator(0).chain().iter().map(|b| b.transactions.len()).sum();
    println!("transactions included: {included} of 40");
    println!("conflicting heights: {}", cluster.conflicts().len());
}
