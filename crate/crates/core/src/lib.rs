pub mod codec;
pub mod crypto;
pub mod ledger;
pub mod types;
pub mod tx;
pub mod chain;
pub mod mempool;
pub mod consensus;
pub mod netsim;
pub mod audit;
pub mod cluster;
