//! Builds sealed chains without running consensus. Used by tests and
//! examples that exercise storage and queries directly.

use aidledger_core::chain::{tx_root, Block, BlockHeader, ChainState, CommitSeal, GenesisDoc};
use aidledger_core::consensus::ValidatorSet;
use aidledger_core::crypto::KeyPair;
use aidledger_core::ledger::TxPayload;
use aidledger_core::tx::Transaction;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub struct TestChain {
    pub genesis: GenesisDoc,
    pub org: KeyPair,
    pub validators: Vec<KeyPair>,
    pub head: Block,
    pub state: ChainState,
    set: ValidatorSet,
}

/// Deterministic key from a small seed.
pub fn seeded_key(seed: u64) -> KeyPair {
    KeyPair::generate(&mut ChaCha20Rng::seed_from_u64(seed))
}

impl TestChain {
    pub fn new(validators: usize) -> Self {
        let org = seeded_key(1);
        let validators: Vec<KeyPair> = (0..validators as u64).map(|i| seeded_key(100 + i)).collect();
        let genesis = GenesisDoc {
            chain_id: "test".into(),
            organization: org.address(),
            validators: validators.iter().map(KeyPair::address).collect(),
            strict_bank_account_mode: false,
            timestamp: 1_700_000_000,
        };
        let set = ValidatorSet::new(genesis.validators.clone()).expect("distinct keys");
        TestChain {
            head: genesis.genesis_block(),
            state: ChainState::genesis(org.address()),
            genesis,
            org,
            validators,
            set,
        }
    }

    /// Organization transactions with consecutive nonces, sealed by every
    /// validator.
    pub fn next_block(&mut self, payloads: Vec<TxPayload>) -> Block {
        let base = self.state.next_nonce(&self.org.address());
        let txs = payloads
            .into_iter()
            .enumerate()
            .map(|(i, p)| Transaction::sign(&self.org, base + i as u64, p))
            .collect();
        self.next_block_from(txs)
    }

    /// Arbitrary transactions; they must execute against the head state.
    pub fn next_block_from(&mut self, txs: Vec<Transaction>) -> Block {
        let (state, _) = self.state.execute_block(&txs).expect("valid transactions");
        let height = self.head.height() + 1;
        let header = BlockHeader {
            height,
            parent_hash: self.head.hash(),
            tx_root: tx_root(&txs),
            state_root: state.state_root(),
            proposer: self.set.proposer_for(height, 0),
            round: 0,
            timestamp: self.head.header.timestamp + 1,
        };
        let hash = header.hash();
        let block = Block {
            header,
            transactions: txs,
            commit_seals: self.validators.iter().map(|k| CommitSeal::create(k, &hash)).collect(),
        };
        self.head = block.clone();
        self.state = state;
        block
    }
}
