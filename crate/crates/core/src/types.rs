//! Fixed-width identifiers and amounts shared by every layer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Reader, Writer};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("missing 0x prefix")]
    MissingPrefix,
    #[error("expected {expected} hex digits, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("invalid hex digit (lowercase only)")]
    InvalidHex,
    #[error("invalid decimal amount")]
    InvalidAmount,
}

fn parse_prefixed_hex<const N: usize>(s: &str) -> Result<[u8; N], ParseError> {
    let digits = s.strip_prefix("0x").ok_or(ParseError::MissingPrefix)?;
    if digits.len() != N * 2 {
        return Err(ParseError::WrongLength {
            expected: N * 2,
            got: digits.len(),
        });
    }
    // Canonical text form is lowercase; accepting uppercase would break
    // parse-then-print identity.
    if !digits.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
        return Err(ParseError::InvalidHex);
    }
    let mut out = [0u8; N];
    hex::decode_to_slice(digits, &mut out).map_err(|_| ParseError::InvalidHex)?;
    Ok(out)
}

macro_rules! fixed_bytes {
    ($(#[$doc:meta])* $name:ident, $len:expr) => {
        $(#[$doc])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub const fn new(bytes: [u8; $len]) -> Self {
                Self(bytes)
            }

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.pad(&format!("0x{}", hex::encode(self.0)))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self)
            }
        }

        impl FromStr for $name {
            type Err = ParseError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                parse_prefixed_hex::<$len>(s).map(Self)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }

        impl Canonical for $name {
            fn encode_to(&self, w: &mut Writer) {
                w.fixed(&self.0);
            }

            fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
                r.array().map(Self)
            }
        }
    };
}

fixed_bytes!(
    /// 20-byte account identifier: the last 20 bytes of the keccak-256 of an
    /// uncompressed public key.
    Address,
    20
);

fixed_bytes!(
    /// 32-byte keccak-256 digest.
    Hash,
    32
);

fixed_bytes!(
    /// Keccak-256 of a bank-account identifier. The plaintext never reaches
    /// the ledger.
    AccountHash,
    32
);

impl Hash {
    pub const ZERO: Hash = Hash([0u8; 32]);

    pub fn of(data: &[u8]) -> Hash {
        Hash(crate::crypto::keccak256(data))
    }
}

impl AccountHash {
    /// Hash of the packed encoding of a single byte string, which is the raw
    /// bytes themselves.
    pub fn of_account(account: &[u8]) -> AccountHash {
        AccountHash(crate::crypto::keccak256(account))
    }
}

/// Indivisible currency units. Arithmetic is always checked.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Amount(pub u128);

impl Amount {
    pub const ZERO: Amount = Amount(0);
    pub const MAX: Amount = Amount(u128::MAX);

    pub fn checked_add(self, other: Amount) -> Option<Amount> {
        self.0.checked_add(other.0).map(Amount)
    }

    pub fn checked_sub(self, other: Amount) -> Option<Amount> {
        self.0.checked_sub(other.0).map(Amount)
    }

    pub fn value(self) -> u128 {
        self.0
    }
}

impl From<u128> for Amount {
    fn from(v: u128) -> Self {
        Amount(v)
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl fmt::Debug for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Amount({})", self.0)
    }
}

impl FromStr for Amount {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ParseError::InvalidAmount);
        }
        s.parse::<u128>()
            .map(Amount)
            .map_err(|_| ParseError::InvalidAmount)
    }
}

// Amounts travel as decimal strings: JSON numbers lose precision past 2^53.
impl Serialize for Amount {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Amount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Canonical for Amount {
    fn encode_to(&self, w: &mut Writer) {
        w.u128(self.0);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.u128().map(Amount)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn address_text_form() {
        let a = Address([0xab; 20]);
        let s = a.to_string();
        assert_eq!(s, format!("0x{}", "ab".repeat(20)));
        assert_eq!(s.parse::<Address>().unwrap(), a);
    }

    #[test]
    fn address_parse_errors() {
        assert_eq!(
            "ab".repeat(20).parse::<Address>(),
            Err(ParseError::MissingPrefix)
        );
        assert!(matches!(
            "0xabcd".parse::<Address>(),
            Err(ParseError::WrongLength { expected: 40, got: 4 })
        ));
        assert_eq!(
            format!("0x{}", "AB".repeat(20)).parse::<Address>(),
            Err(ParseError::InvalidHex)
        );
        assert_eq!(
            format!("0x{}", "zz".repeat(20)).parse::<Address>(),
            Err(ParseError::InvalidHex)
        );
    }

    #[test]
    fn amount_checked_arithmetic() {
        assert_eq!(Amount::MAX.checked_add(Amount(1)), None);
        assert_eq!(Amount(0).checked_sub(Amount(1)), None);
        assert_eq!(Amount(5).checked_sub(Amount(2)), Some(Amount(3)));
        assert_eq!(Amount::MAX.0, 340282366920938463463374607431768211455);
    }

    #[test]
    fn amount_decimal_text() {
        let text = Amount(u128::MAX).to_string();
        assert_eq!(text.parse::<Amount>(), Ok(Amount::MAX));
        assert!("-1".parse::<Amount>().is_err());
        assert!("".parse::<Amount>().is_err());
        assert!("340282366920938463463374607431768211456".parse::<Amount>().is_err());
    }

    proptest! {
        #[test]
        fn address_parse_print_identity(bytes in any::<[u8; 20]>()) {
            let a = Address(bytes);
            let text = a.to_string();
            prop_assert_eq!(text.parse::<Address>().unwrap(), a);
            prop_assert_eq!(text.parse::<Address>().unwrap().to_string(), text);
        }
    }
}
