//! Signed, nonce-carrying transaction envelope.

use crate::codec::{Canonical, DecodeError, Reader, Writer};
use crate::crypto::{verify_tx, KeyPair, PublicKey, Signature};
use crate::ledger::TxPayload;
use crate::types::{Address, Hash};

/// Wire layout: `sender | nonce | len-prefixed payload | public_key | r | s`.
/// The signature covers everything before `r`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub sender: Address,
    pub nonce: u64,
    pub payload: TxPayload,
    pub signature: Signature,
}

fn write_unsigned(w: &mut Writer, sender: &Address, nonce: u64, payload: &TxPayload, pk: &PublicKey) {
    w.fixed(&sender.0).u64(nonce);
    w.bytes(&payload.to_canonical_bytes());
    pk.encode_to(w);
}

impl Transaction {
    pub fn sign(key: &KeyPair, nonce: u64, payload: TxPayload) -> Transaction {
        let sender = key.address();
        let mut w = Writer::new();
        write_unsigned(&mut w, &sender, nonce, &payload, &key.public());
        let signature = key.sign(&w.finish());
        Transaction {
            sender,
            nonce,
            payload,
            signature,
        }
    }

    pub fn public_key(&self) -> PublicKey {
        self.signature.public_key
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        write_unsigned(&mut w, &self.sender, self.nonce, &self.payload, &self.signature.public_key);
        w.finish()
    }

    /// Signature valid and the carried key hashes to `sender`.
    pub fn verify(&self) -> bool {
        verify_tx(&self.signature, &self.signing_bytes(), &self.sender)
    }

    pub fn hash(&self) -> Hash {
        Hash::of(&self.to_canonical_bytes())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_canonical_bytes())
    }

    pub fn from_hex(text: &str) -> Result<Transaction, DecodeError> {
        let text = text.trim();
        let text = text.strip_prefix("0x").unwrap_or(text);
        let bytes = hex::decode(text).map_err(|_| DecodeError::Invalid("hex"))?;
        Transaction::from_canonical_bytes(&bytes)
    }
}

impl Canonical for Transaction {
    fn encode_to(&self, w: &mut Writer) {
        write_unsigned(w, &self.sender, self.nonce, &self.payload, &self.signature.public_key);
        self.signature.encode_rs(w);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let sender = Address::decode_from(r)?;
        let nonce = r.u64()?;
        let payload = TxPayload::from_canonical_bytes(r.bytes()?)?;
        let pk = PublicKey::decode_from(r)?;
        let signature = Signature::decode_rs(pk, r)?;
        Ok(Transaction {
            sender,
            nonce,
            payload,
            signature,
        })
    }
}
