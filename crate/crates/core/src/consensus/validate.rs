use std::collections::BTreeSet;

use thiserror::Error;

use crate::chain::{tx_root, Block, BlockHeader, ChainState, ExecutionError};
use crate::consensus::ValidatorSet;
use crate::ledger::Receipt;

/// Why a block was refused. Carried for diagnostics only.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvalidBlock {
    #[error("height {got} does not follow parent height {parent}")]
    Height { parent: u64, got: u64 },
    #[error("parent hash does not match")]
    ParentHash,
    #[error("proposer is not the round-robin proposer for its height and round")]
    WrongProposer,
    #[error("timestamp precedes parent")]
    Timestamp,
    #[error("tx_root does not match the transactions")]
    TxRoot,
    #[error(transparent)]
    Execution(#[from] ExecutionError),
    #[error("state_root does not match re-execution")]
    StateRoot,
    #[error("only {valid} valid commit seals, quorum is {quorum}")]
    Seals { valid: usize, quorum: usize },
}

/// Checks linkage and proposer, then re-executes the transactions over
/// `parent_state` and compares both roots. Returns the post-state.
pub fn validate_block(
    block: &Block,
    parent: &BlockHeader,
    parent_state: &ChainState,
    validators: &ValidatorSet,
) -> Result<(ChainState, Vec<Receipt>), InvalidBlock> {
    let h = &block.header;
    if h.height != parent.height + 1 {
        return Err(InvalidBlock::Height {
            parent: parent.height,
            got: h.height,
        });
    }
    if h.parent_hash != parent.hash() {
        return Err(InvalidBlock::ParentHash);
    }
    if h.proposer != validators.proposer_for(h.height, h.round) {
        return Err(InvalidBlock::WrongProposer);
    }
    if h.timestamp < parent.timestamp {
        return Err(InvalidBlock::Timestamp);
    }
    if h.tx_root != tx_root(&block.transactions) {
        return Err(InvalidBlock::TxRoot);
    }
    let (state, receipts) = parent_state.execute_block(&block.transactions)?;
    if state.state_root() != h.state_root {
        return Err(InvalidBlock::StateRoot);
    }
    Ok((state, receipts))
}

/// Boolean form of [`validate_block`].
pub fn is_valid_block(
    block: &Block,
    parent: &BlockHeader,
    parent_state: &ChainState,
    validators: &ValidatorSet,
) -> bool {
    validate_block(block, parent, parent_state, validators).is_ok()
}

/// At least a quorum of distinct validators sealed the header hash.
pub fn verify_seals(block: &Block, validators: &ValidatorSet) -> Result<(), InvalidBlock> {
    let hash = block.hash();
    let signers: BTreeSet<_> = block
        .commit_seals
        .iter()
        .filter(|s| validators.contains(&s.validator) && s.verify(&hash))
        .map(|s| s.validator)
        .collect();
    if signers.len() >= validators.quorum() {
        Ok(())
    } else {
        Err(InvalidBlock::Seals {
            valid: signers.len(),
            quorum: validators.quorum(),
        })
    }
}
