//! Hashing, key management, address derivation and signatures.
//!
//! Identities follow Ethereum's conventions: secp256k1 keys, addresses are
//! the last 20 bytes of `keccak256(x || y)`, and messages are signed as
//! `keccak256(message)` with deterministic (RFC 6979) ECDSA in low-s form.

mod keccak;

use std::fmt;

use k256::ecdsa::signature::hazmat::{PrehashSigner, PrehashVerifier};
use k256::ecdsa::{Signature as EcdsaSignature, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Reader, Writer};
use crate::types::Address;

pub use keccak::keccak256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("public key is not a valid secp256k1 point")]
    InvalidPoint,
    #[error("secret key is out of range")]
    InvalidSecret,
}

/// Uncompressed secp256k1 point without the SEC1 `0x04` tag: `x || y`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey(pub [u8; 64]);

impl PublicKey {
    fn verifying_key(&self) -> Result<VerifyingKey, CryptoError> {
        let mut sec1 = [0u8; 65];
        sec1[0] = 0x04;
        sec1[1..].copy_from_slice(&self.0);
        VerifyingKey::from_sec1_bytes(&sec1).map_err(|_| CryptoError::InvalidPoint)
    }

    fn from_verifying_key(vk: &VerifyingKey) -> Self {
        let point = vk.to_encoded_point(false);
        let mut out = [0u8; 64];
        out.copy_from_slice(&point.as_bytes()[1..]);
        PublicKey(out)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey(0x{})", hex::encode(self.0))
    }
}

impl Canonical for PublicKey {
    fn encode_to(&self, w: &mut Writer) {
        w.fixed(&self.0);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.array().map(PublicKey)
    }
}

/// Address of a public key. Fails if the bytes are not a curve point.
pub fn derive_address(public: &PublicKey) -> Result<Address, CryptoError> {
    public.verifying_key()?;
    Ok(address_suffix(public))
}

fn address_suffix(public: &PublicKey) -> Address {
    let digest = keccak256(&public.0);
    let mut out = [0u8; 20];
    out.copy_from_slice(&digest[12..]);
    Address(out)
}

/// ECDSA signature with the signer's public key carried alongside.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature {
    pub r: [u8; 32],
    pub s: [u8; 32],
    pub public_key: PublicKey,
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Signature")
            .field("r", &hex::encode(self.r))
            .field("s", &hex::encode(self.s))
            .finish_non_exhaustive()
    }
}

impl Signature {
    /// Encoded as `r || s` only; callers place the public key where their
    /// own layout requires it.
    pub fn encode_rs(&self, w: &mut Writer) {
        w.fixed(&self.r).fixed(&self.s);
    }

    pub fn decode_rs(public_key: PublicKey, r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Signature {
            r: r.array()?,
            s: r.array()?,
            public_key,
        })
    }

    pub fn signer(&self) -> Result<Address, CryptoError> {
        derive_address(&self.public_key)
    }
}

impl Canonical for Signature {
    fn encode_to(&self, w: &mut Writer) {
        self.public_key.encode_to(w);
        self.encode_rs(w);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let pk = PublicKey::decode_from(r)?;
        Signature::decode_rs(pk, r)
    }
}

/// A secp256k1 key pair. The secret is never printed or serialized except
/// through [`KeyPair::secret_hex`] for key files.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    public: PublicKey,
    address: Address,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("address", &self.address)
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn from_secret(secret: &[u8; 32]) -> Result<Self, CryptoError> {
        let signing =
            SigningKey::from_bytes(secret.into()).map_err(|_| CryptoError::InvalidSecret)?;
        let public = PublicKey::from_verifying_key(signing.verifying_key());
        let address = address_suffix(&public);
        Ok(KeyPair {
            signing,
            public,
            address,
        })
    }

    /// Draws secrets from `rng` until one is a valid scalar.
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        loop {
            let mut secret = [0u8; 32];
            rng.fill_bytes(&mut secret);
            if let Ok(kp) = KeyPair::from_secret(&secret) {
                return kp;
            }
        }
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.signing.to_bytes().into()
    }

    pub fn secret_hex(&self) -> String {
        hex::encode(self.secret_bytes())
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn address(&self) -> Address {
        self.address
    }

    /// Deterministic ECDSA over `keccak256(message)`, normalized to low-s.
    pub fn sign(&self, message: &[u8]) -> Signature {
        let digest = keccak256(message);
        let sig: EcdsaSignature = self
            .signing
            .sign_prehash(&digest)
            .expect("prehash of 32 bytes is always signable");
        let sig = sig.normalize_s().unwrap_or(sig);
        let (r, s) = sig.split_bytes();
        Signature {
            r: r.into(),
            s: s.into(),
            public_key: self.public,
        }
    }
}

/// Signs `tx_bytes` with a raw secret.
pub fn sign_tx(secret: &[u8; 32], tx_bytes: &[u8]) -> Result<Signature, CryptoError> {
    Ok(KeyPair::from_secret(secret)?.sign(tx_bytes))
}

/// True iff `signature` is a canonical (low-s) signature of `message` under
/// its carried public key and that key's address is `claimed_sender`.
pub fn verify_tx(signature: &Signature, message: &[u8], claimed_sender: &Address) -> bool {
    let Ok(vk) = signature.public_key.verifying_key() else {
        return false;
    };
    if address_suffix(&signature.public_key) != *claimed_sender {
        return false;
    }
    let Ok(sig) = EcdsaSignature::from_scalars(signature.r, signature.s) else {
        return false;
    };
    if sig.normalize_s().is_some() {
        return false;
    }
    vk.verify_prehash(&keccak256(message), &sig).is_ok()
}

// Key pairs serialize as their hex secret so configuration files can embed
// them; only key files use this.
impl Serialize for KeyPair {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.secret_hex())
    }
}

impl<'de> Deserialize<'de> for KeyPair {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let mut secret = [0u8; 32];
        hex::decode_to_slice(text.trim(), &mut secret).map_err(serde::de::Error::custom)?;
        KeyPair::from_secret(&secret).map_err(serde::de::Error::custom)
    }
}
