//! Fund-flow totals recomputed from the event history.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::ledger::Event;
use crate::types::{Address, Amount};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("event totals overflow")]
    Overflow,
    #[error("organization balance {balance} + disbursed {disbursed} != added {added}")]
    Imbalance {
        balance: Amount,
        disbursed: Amount,
        added: Amount,
    },
    #[error("bank instructions do not match allowance events one to one")]
    InstructionMismatch,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AuditTotals {
    pub added: Amount,
    pub disbursed: Amount,
    pub per_recipient: BTreeMap<Address, Amount>,
}

impl AuditTotals {
    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a Event>) -> Result<Self, AuditError> {
        let mut totals = AuditTotals::default();
        for event in events {
            totals.record(event)?;
        }
        Ok(totals)
    }

    pub fn record(&mut self, event: &Event) -> Result<(), AuditError> {
        match event {
            Event::FundsAdded { amount } => {
                self.added = self.added.checked_add(*amount).ok_or(AuditError::Overflow)?;
            }
            Event::AllowanceSent { recipient, amount } => {
                self.disbursed = self
                    .disbursed
                    .checked_add(*amount)
                    .ok_or(AuditError::Overflow)?;
                let slot = self.per_recipient.entry(*recipient).or_default();
                *slot = slot.checked_add(*amount).ok_or(AuditError::Overflow)?;
            }
            _ => {}
        }
        Ok(())
    }

    pub fn disbursed_to(&self, recipient: &Address) -> Amount {
        self.per_recipient.get(recipient).copied().unwrap_or_default()
    }

    /// organization balance + Σ disbursed = Σ added.
    pub fn check_conservation(&self, org_balance: Amount) -> Result<(), AuditError> {
        let lhs = org_balance
            .checked_add(self.disbursed)
            .ok_or(AuditError::Overflow)?;
        if lhs == self.added {
            Ok(())
        } else {
            Err(AuditError::Imbalance {
                balance: org_balance,
                disbursed: self.disbursed,
                added: self.added,
            })
        }
    }
}

/// Multiset equality of (recipient, amount) pairs.
pub fn check_exactly_once(
    allowances: impl IntoIterator<Item = (Address, Amount)>,
    instructions: impl IntoIterator<Item = (Address, Amount)>,
) -> Result<(), AuditError> {
    let mut counts: BTreeMap<(Address, Amount), i64> = BTreeMap::new();
    for pair in allowances {
        *counts.entry(pair).or_default() += 1;
    }
    for pair in instructions {
        *counts.entry(pair).or_default() -= 1;
    }
    if counts.values().all(|c| *c == 0) {
        Ok(())
    } else {
        Err(AuditError::InstructionMismatch)
    }
}
