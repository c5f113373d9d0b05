//! BFT agreement on blocks among a fixed validator set.

mod engine;
mod message;
mod validate;
mod validators;

pub use engine::{Action, Engine, EngineConfig, EngineError, EngineMetrics, Finalized};
pub use message::{ConsensusMessage, MessageBody};
pub use validate::{is_valid_block, validate_block, verify_seals, InvalidBlock};
pub use validators::{ValidatorSet, ValidatorSetError};

/// Byzantine output filter: when the wrapped engine proposes, peers at even
/// positions in the validator set get the real block and odd positions get
/// a conflicting one (timestamp bumped by one). Every other message passes
/// through, so the node otherwise votes like an honest one.
#[derive(Debug, Clone, Default)]
pub struct EquivocatingProposer {
    pub equivocations: u64,
}

impl EquivocatingProposer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rewrites `engine`'s output.
    pub fn filter(&mut self, engine: &Engine, actions: Vec<Action>) -> Vec<Action> {
        let me = engine.address();
        let mut out = Vec::with_capacity(actions.len());
        for action in actions {
            let Action::Broadcast(msg) = &action else {
                out.push(action);
                continue;
            };
            let MessageBody::Proposal { height, round, block } = &msg.body else {
                out.push(action);
                continue;
            };
            let mut twin = block.clone();
            twin.header.timestamp += 1;
            let twin_msg = ConsensusMessage::sign(
                engine.key(),
                MessageBody::Proposal {
                    height: *height,
                    round: *round,
                    block: twin,
                },
            );
            self.equivocations += 1;
            for (i, to) in engine.validators().iter().copied().enumerate() {
                if to == me {
                    continue;
                }
                let message = if i % 2 == 0 { msg.clone() } else { twin_msg.clone() };
                out.push(Action::Send { to, message });
            }
        }
        out
    }
}
