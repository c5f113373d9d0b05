//! Injects faults by directive and checks that no two honest validators
//! finalize different blocks.
//!
//! Usage: `cargo run --example fault_injection [SEED] [DIRECTIVE...]`
//! Directives: `crash:NODE@MS`, `equivocate:NODE`, `delay:NODE+MS`.

use aidledger_core::cluster::{ClusterConfig, SimCluster};
use aidledger_core::consensus::EngineConfig;
use aidledger_core::netsim::{FaultDirective, SimConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(42);
    let mut directives: Vec<FaultDirective> = Vec::new();
    for text in args {
        match text.parse() {
            Ok(d) => directives.push(d),
            Err(e) => {
                eprintln!("{e}");
                std::process::exit(1);
            }
        }
    }
    if directives.is_empty() {
        directives = vec!["equivocate:1".parse().unwrap(), "delay:3+120".parse().unwrap()];
    }

    let config = ClusterConfig {
        engine: EngineConfig {
            allow_empty_blocks: true,
            ..EngineConfig::default()
        },
        sim: SimConfig { seed, ..SimConfig::default() },
        ..ClusterConfig::default()
    };
    let mut cluster = SimCluster::new(config).expect("valid config");
    for d in &directives {
        println!("inject {d}");
        cluster.sim.inject_fault(d.clone()).expect("node exists");
    }
    let out = cluster.sim.run_for(30_000);

    let trace = &out.trace;
    println!("{} events; first deliveries:", out.events_processed);
    for record in trace.iter().take(8) {
        println!("  {record}");
    }
    for i in 0..cluster.validator_count() {
        let v = cluster.validator(i);
        let state = if cluster.sim.is_crashed(i) {
            "crashed"
        } else if v.is_byzantine() {
            "byzantine"
        } else {
            "honest"
        };
        println!(
            "validator {i} ({state}): height {}, equivocations {}",
            v.head_height(),
            v.equivocations()
        );
    }
    let conflicts = cluster.conflicts();
    println!("conflicting heights: {}", conflicts.len());
    if !conflicts.is_empty() {
        std::process::exit(2);
    }
}
