use crate::chain::Block;
use crate::codec::{Canonical, DecodeError, Reader, Writer};
use crate::crypto::{verify_tx, KeyPair, Signature};
use crate::types::{Address, Hash};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MessageBody {
    Proposal { height: u64, round: u32, block: Block },
    Prepare { height: u64, round: u32, block_hash: Hash },
    /// `seal` signs the block hash alone so it can be copied into the block.
    Commit { height: u64, round: u32, block_hash: Hash, seal: Signature },
    RoundChange { height: u64, new_round: u32 },
    /// A finalized block with its commit seals, sent to lagging validators.
    Decided { block: Block },
}

impl MessageBody {
    pub fn height(&self) -> u64 {
        match self {
            MessageBody::Proposal { height, .. }
            | MessageBody::Prepare { height, .. }
            | MessageBody::Commit { height, .. }
            | MessageBody::RoundChange { height, .. } => *height,
            MessageBody::Decided { block } => block.height(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            MessageBody::Proposal { .. } => "proposal",
            MessageBody::Prepare { .. } => "prepare",
            MessageBody::Commit { .. } => "commit",
            MessageBody::RoundChange { .. } => "round-change",
            MessageBody::Decided { .. } => "decided",
        }
    }
}

impl Canonical for MessageBody {
    fn encode_to(&self, w: &mut Writer) {
        match self {
            MessageBody::Proposal { height, round, block } => {
                w.u8(1).u64(*height).u32(*round);
                w.bytes(&block.to_canonical_bytes());
            }
            MessageBody::Prepare { height, round, block_hash } => {
                w.u8(2).u64(*height).u32(*round).fixed(&block_hash.0);
            }
            MessageBody::Commit { height, round, block_hash, seal } => {
                w.u8(3).u64(*height).u32(*round).fixed(&block_hash.0);
                seal.encode_to(w);
            }
            MessageBody::RoundChange { height, new_round } => {
                w.u8(4).u64(*height).u32(*new_round);
            }
            MessageBody::Decided { block } => {
                w.u8(5).bytes(&block.to_canonical_bytes());
            }
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match r.u8()? {
            1 => MessageBody::Proposal {
                height: r.u64()?,
                round: r.u32()?,
                block: Block::from_canonical_bytes(r.bytes()?)?,
            },
            2 => MessageBody::Prepare {
                height: r.u64()?,
                round: r.u32()?,
                block_hash: Hash::decode_from(r)?,
            },
            3 => MessageBody::Commit {
                height: r.u64()?,
                round: r.u32()?,
                block_hash: Hash::decode_from(r)?,
                seal: Signature::decode_from(r)?,
            },
            4 => MessageBody::RoundChange {
                height: r.u64()?,
                new_round: r.u32()?,
            },
            5 => MessageBody::Decided {
                block: Block::from_canonical_bytes(r.bytes()?)?,
            },
            tag => return Err(DecodeError::UnknownTag { what: "consensus message", tag }),
        })
    }
}

/// A consensus message signed by a validator. The signature covers the
/// canonical body followed by the signer address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusMessage {
    pub body: MessageBody,
    pub signer: Address,
    pub signature: Signature,
}

fn signing_bytes(body: &MessageBody, signer: &Address) -> Vec<u8> {
    let mut w = Writer::new();
    body.encode_to(&mut w);
    w.fixed(&signer.0);
    w.finish()
}

impl ConsensusMessage {
    pub fn sign(key: &KeyPair, body: MessageBody) -> Self {
        let signer = key.address();
        let signature = key.sign(&signing_bytes(&body, &signer));
        ConsensusMessage {
            body,
            signer,
            signature,
        }
    }

    pub fn verify(&self) -> bool {
        verify_tx(&self.signature, &signing_bytes(&self.body, &self.signer), &self.signer)
    }

    pub fn height(&self) -> u64 {
        self.body.height()
    }

    pub fn kind(&self) -> &'static str {
        self.body.kind()
    }

    pub fn hash(&self) -> Hash {
        Hash::of(&self.to_canonical_bytes())
    }
}

impl Canonical for ConsensusMessage {
    fn encode_to(&self, w: &mut Writer) {
        self.body.encode_to(w);
        w.fixed(&self.signer.0);
        self.signature.encode_to(w);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(ConsensusMessage {
            body: MessageBody::decode_from(r)?,
            signer: Address::decode_from(r)?,
            signature: Signature::decode_from(r)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn sign_verify_and_codec() {
        let k = KeyPair::generate(&mut rand_chacha::ChaCha20Rng::seed_from_u64(1));
        let msg = ConsensusMessage::sign(
            &k,
            MessageBody::Prepare { height: 3, round: 1, block_hash: Hash([7; 32]) },
        );
        assert!(msg.verify());
        let back = ConsensusMessage::from_canonical_bytes(&msg.to_canonical_bytes()).unwrap();
        assert_eq!(back, msg);

        let mut forged = msg.clone();
        forged.body = MessageBody::Prepare { height: 3, round: 2, block_hash: Hash([7; 32]) };
        assert!(!forged.verify());
    }
}
