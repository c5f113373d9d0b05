use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Address;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidatorSetError {
    #[error("validator set is empty")]
    Empty,
    #[error("validator {0} listed twice")]
    Duplicate(Address),
}

/// Fixed, ordered consortium membership.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Address>", into = "Vec<Address>")]
pub struct ValidatorSet {
    validators: Vec<Address>,
}

impl TryFrom<Vec<Address>> for ValidatorSet {
    type Error = ValidatorSetError;

    fn try_from(v: Vec<Address>) -> Result<Self, Self::Error> {
        ValidatorSet::new(v)
    }
}

impl From<ValidatorSet> for Vec<Address> {
    fn from(v: ValidatorSet) -> Self {
        v.validators
    }
}

impl ValidatorSet {
    pub fn new(validators: Vec<Address>) -> Result<Self, ValidatorSetError> {
        if validators.is_empty() {
            return Err(ValidatorSetError::Empty);
        }
        for (i, v) in validators.iter().enumerate() {
            if validators[..i].contains(v) {
                return Err(ValidatorSetError::Duplicate(*v));
            }
        }
        Ok(ValidatorSet { validators })
    }

    pub fn len(&self) -> usize {
        self.validators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.validators.is_empty()
    }

    /// Tolerated byzantine faults: `floor((N - 1) / 3)`.
    pub fn max_faulty(&self) -> usize {
        (self.len() - 1) / 3
    }

    /// `N - f`, which is `2f + 1` when `N = 3f + 1` and keeps any two
    /// quorums intersecting in at least `f + 1` members for other sizes.
    pub fn quorum(&self) -> usize {
        self.len() - self.max_faulty()
    }

    pub fn contains(&self, who: &Address) -> bool {
        self.validators.contains(who)
    }

    pub fn index_of(&self, who: &Address) -> Option<usize> {
        self.validators.iter().position(|v| v == who)
    }

    pub fn get(&self, index: usize) -> Option<&Address> {
        self.validators.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Address> {
        self.validators.iter()
    }

    /// Round-robin: `validators[(height + round) mod N]`.
    pub fn proposer_for(&self, height: u64, round: u32) -> Address {
        let n = self.len() as u128;
        let i = (height as u128 + round as u128) % n;
        self.validators[i as usize]
    }
}
