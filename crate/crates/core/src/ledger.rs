//! The aid-distribution contract as a pure state machine.
//!
//! One organization, fixed at genesis, enrolls recipients, registers hashed
//! bank accounts, adds funds and sends allowances. Allowances leave the
//! ledger: the organization's balance is debited and the recipient is paid
//! off-chain, so recipients are never credited on-chain.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Reader, Writer};
use crate::types::{AccountHash, Address, Amount, Hash};

/// Contract-level failure codes. The integer values are part of the API.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error, Serialize, Deserialize)]
pub enum ErrorCode {
    #[error("sender is not the organization")]
    Unauthorized,
    #[error("address is not an enrolled recipient")]
    NotRecipient,
    #[error("bank account must not be empty")]
    EmptyAccount,
    #[error("organization balance is below the requested amount")]
    InsufficientFunds,
    #[error("amount arithmetic overflowed")]
    Overflow,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 5] = [
        ErrorCode::Unauthorized,
        ErrorCode::NotRecipient,
        ErrorCode::EmptyAccount,
        ErrorCode::InsufficientFunds,
        ErrorCode::Overflow,
    ];

    pub fn code(self) -> u8 {
        match self {
            ErrorCode::Unauthorized => 1,
            ErrorCode::NotRecipient => 2,
            ErrorCode::EmptyAccount => 3,
            ErrorCode::InsufficientFunds => 4,
            ErrorCode::Overflow => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<ErrorCode> {
        ErrorCode::ALL.into_iter().find(|e| e.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorCode::Unauthorized => "Unauthorized",
            ErrorCode::NotRecipient => "NotRecipient",
            ErrorCode::EmptyAccount => "EmptyAccount",
            ErrorCode::InsufficientFunds => "InsufficientFunds",
            ErrorCode::Overflow => "Overflow",
        }
    }
}

/// One state-mutating contract call.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TxPayload {
    AddRecipient { recipient: Address },
    RemoveRecipient { recipient: Address },
    RegisterBankAccount { recipient: Address, account: Vec<u8> },
    AddFunds { amount: Amount },
    SendAllowance { recipient: Address, amount: Amount },
}

impl TxPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            TxPayload::AddRecipient { .. } => "AddRecipient",
            TxPayload::RemoveRecipient { .. } => "RemoveRecipient",
            TxPayload::RegisterBankAccount { .. } => "RegisterBankAccount",
            TxPayload::AddFunds { .. } => "AddFunds",
            TxPayload::SendAllowance { .. } => "SendAllowance",
        }
    }
}

impl Canonical for TxPayload {
    fn encode_to(&self, w: &mut Writer) {
        match self {
            TxPayload::AddRecipient { recipient } => {
                w.u8(1).fixed(&recipient.0);
            }
            TxPayload::RemoveRecipient { recipient } => {
                w.u8(2).fixed(&recipient.0);
            }
            TxPayload::RegisterBankAccount { recipient, account } => {
                w.u8(3).fixed(&recipient.0).bytes(account);
            }
            TxPayload::AddFunds { amount } => {
                w.u8(4).u128(amount.0);
            }
            TxPayload::SendAllowance { recipient, amount } => {
                w.u8(5).fixed(&recipient.0).u128(amount.0);
            }
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match r.u8()? {
            1 => TxPayload::AddRecipient {
                recipient: Address::decode_from(r)?,
            },
            2 => TxPayload::RemoveRecipient {
                recipient: Address::decode_from(r)?,
            },
            3 => TxPayload::RegisterBankAccount {
                recipient: Address::decode_from(r)?,
                account: r.bytes()?.to_vec(),
            },
            4 => TxPayload::AddFunds {
                amount: Amount::decode_from(r)?,
            },
            5 => TxPayload::SendAllowance {
                recipient: Address::decode_from(r)?,
                amount: Amount::decode_from(r)?,
            },
            tag => return Err(DecodeError::UnknownTag { what: "payload", tag }),
        })
    }
}

/// Audit record emitted by a successful call.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Event {
    RecipientAdded {
        recipient: Address,
    },
    RecipientRemoved {
        recipient: Address,
    },
    BankAccountRegistered {
        recipient: Address,
        account_hash: AccountHash,
    },
    FundsAdded {
        amount: Amount,
    },
    AllowanceSent {
        recipient: Address,
        amount: Amount,
    },
}

impl Event {
    pub const KINDS: [&'static str; 5] = [
        "RecipientAdded",
        "RecipientRemoved",
        "BankAccountRegistered",
        "FundsAdded",
        "AllowanceSent",
    ];

    pub fn kind(&self) -> &'static str {
        match self {
            Event::RecipientAdded { .. } => "RecipientAdded",
            Event::RecipientRemoved { .. } => "RecipientRemoved",
            Event::BankAccountRegistered { .. } => "BankAccountRegistered",
            Event::FundsAdded { .. } => "FundsAdded",
            Event::AllowanceSent { .. } => "AllowanceSent",
        }
    }

    pub fn recipient(&self) -> Option<Address> {
        match self {
            Event::RecipientAdded { recipient }
            | Event::RecipientRemoved { recipient }
            | Event::BankAccountRegistered { recipient, .. }
            | Event::AllowanceSent { recipient, .. } => Some(*recipient),
            Event::FundsAdded { .. } => None,
        }
    }
}

impl Canonical for Event {
    fn encode_to(&self, w: &mut Writer) {
        match self {
            Event::RecipientAdded { recipient } => {
                w.u8(1).fixed(&recipient.0);
            }
            Event::RecipientRemoved { recipient } => {
                w.u8(2).fixed(&recipient.0);
            }
            Event::BankAccountRegistered {
                recipient,
                account_hash,
            } => {
                w.u8(3).fixed(&recipient.0).fixed(&account_hash.0);
            }
            Event::FundsAdded { amount } => {
                w.u8(4).u128(amount.0);
            }
            Event::AllowanceSent { recipient, amount } => {
                w.u8(5).fixed(&recipient.0).u128(amount.0);
            }
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match r.u8()? {
            1 => Event::RecipientAdded {
                recipient: Address::decode_from(r)?,
            },
            2 => Event::RecipientRemoved {
                recipient: Address::decode_from(r)?,
            },
            3 => Event::BankAccountRegistered {
                recipient: Address::decode_from(r)?,
                account_hash: AccountHash::decode_from(r)?,
            },
            4 => Event::FundsAdded {
                amount: Amount::decode_from(r)?,
            },
            5 => Event::AllowanceSent {
                recipient: Address::decode_from(r)?,
                amount: Amount::decode_from(r)?,
            },
            tag => return Err(DecodeError::UnknownTag { what: "event", tag }),
        })
    }
}

/// Outcome of applying one payload. A failure carries no events and leaves
/// the state untouched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub error: Option<ErrorCode>,
    pub events: Vec<Event>,
}

impl Receipt {
    pub fn success(events: Vec<Event>) -> Self {
        Receipt {
            error: None,
            events,
        }
    }

    pub fn failure(error: ErrorCode) -> Self {
        Receipt {
            error: Some(error),
            events: Vec::new(),
        }
    }

    pub fn is_success(&self) -> bool {
        self.error.is_none()
    }
}

impl Canonical for Receipt {
    fn encode_to(&self, w: &mut Writer) {
        match self.error {
            None => w.u8(0),
            Some(e) => w.u8(e.code()),
        };
        w.count(self.events.len());
        for e in &self.events {
            e.encode_to(w);
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let error = match r.u8()? {
            0 => None,
            c => Some(ErrorCode::from_code(c).ok_or(DecodeError::UnknownTag {
                what: "error code",
                tag: c,
            })?),
        };
        let n = r.count()?;
        let events = (0..n)
            .map(|_| Event::decode_from(r))
            .collect::<Result<_, _>>()?;
        Ok(Receipt { error, events })
    }
}

/// Replicated contract state.
///
/// Mappings use zero-value semantics: a recipient flag of `false` is
/// represented by absence, so removing a never-added address and removing an
/// enrolled one leave identical canonical states. The organization's balance
/// entry is always present.
#[derive(Clone, PartialEq, Eq)]
pub struct AidState {
    organization: Address,
    recipients: BTreeMap<Address, bool>,
    balances: BTreeMap<Address, Amount>,
    bank_accounts: BTreeMap<Address, AccountHash>,
}

impl fmt::Debug for AidState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AidState")
            .field("organization", &self.organization)
            .field("recipients", &self.recipients.len())
            .field("org_balance", &self.balance_of(&self.organization))
            .field("bank_accounts", &self.bank_accounts.len())
            .finish()
    }
}

impl AidState {
    /// Contract constructor: the deploying address becomes the organization.
    pub fn init(organization: Address) -> Self {
        AidState {
            organization,
            recipients: BTreeMap::new(),
            balances: BTreeMap::from([(organization, Amount::ZERO)]),
            bank_accounts: BTreeMap::new(),
        }
    }

    pub fn organization(&self) -> Address {
        self.organization
    }

    pub fn is_recipient(&self, who: &Address) -> bool {
        self.recipients.get(who).copied().unwrap_or(false)
    }

    /// `balances[caller]`, zero for unknown addresses.
    pub fn balance_of(&self, caller: &Address) -> Amount {
        self.balances.get(caller).copied().unwrap_or_default()
    }

    pub fn bank_account(&self, recipient: &Address) -> Option<AccountHash> {
        self.bank_accounts.get(recipient).copied()
    }

    pub fn recipients(&self) -> impl Iterator<Item = Address> + '_ {
        self.recipients
            .iter()
            .filter(|(_, enrolled)| **enrolled)
            .map(|(a, _)| *a)
    }

    /// Keccak-256 of the canonical serialization.
    pub fn state_root(&self) -> Hash {
        Hash::of(&self.to_canonical_bytes())
    }

    /// Pure transition: the input state is never modified.
    pub fn apply(&self, sender: &Address, payload: &TxPayload) -> (AidState, Receipt) {
        let mut next = self.clone();
        let receipt = next.apply_mut(sender, payload);
        (next, receipt)
    }

    /// In-place transition. All guards are evaluated before any write, so a
    /// failure leaves `self` unchanged.
    pub fn apply_mut(&mut self, sender: &Address, payload: &TxPayload) -> Receipt {
        let result = match payload {
            TxPayload::AddRecipient { recipient } => self.add_recipient(sender, recipient),
            TxPayload::RemoveRecipient { recipient } => self.remove_recipient(sender, recipient),
            TxPayload::RegisterBankAccount { recipient, account } => {
                self.register_bank_account(sender, recipient, account)
            }
            TxPayload::AddFunds { amount } => self.add_funds(sender, *amount),
            TxPayload::SendAllowance { recipient, amount } => {
                self.send_allowance(sender, recipient, *amount)
            }
        };
        match result {
            Ok(event) => Receipt::success(vec![event]),
            Err(code) => Receipt::failure(code),
        }
    }

    fn only_organization(&self, sender: &Address) -> Result<(), ErrorCode> {
        if *sender == self.organization {
            Ok(())
        } else {
            Err(ErrorCode::Unauthorized)
        }
    }

    pub fn add_recipient(&mut self, sender: &Address, recipient: &Address) -> Result<Event, ErrorCode> {
        self.only_organization(sender)?;
        self.recipients.insert(*recipient, true);
        Ok(Event::RecipientAdded {
            recipient: *recipient,
        })
    }

    /// Clears the flag only; a registered bank-account hash is kept so that
    /// re-enrollment restores eligibility.
    pub fn remove_recipient(&mut self, sender: &Address, recipient: &Address) -> Result<Event, ErrorCode> {
        self.only_organization(sender)?;
        self.recipients.remove(recipient);
        Ok(Event::RecipientRemoved {
            recipient: *recipient,
        })
    }

    pub fn register_bank_account(
        &mut self,
        sender: &Address,
        recipient: &Address,
        account: &[u8],
    ) -> Result<Event, ErrorCode> {
        self.only_organization(sender)?;
        if !self.is_recipient(recipient) {
            return Err(ErrorCode::NotRecipient);
        }
        if account.is_empty() {
            return Err(ErrorCode::EmptyAccount);
        }
        let account_hash = AccountHash::of_account(account);
        self.bank_accounts.insert(*recipient, account_hash);
        Ok(Event::BankAccountRegistered {
            recipient: *recipient,
            account_hash,
        })
    }

    pub fn add_funds(&mut self, sender: &Address, amount: Amount) -> Result<Event, ErrorCode> {
        self.only_organization(sender)?;
        let org = self.organization;
        let updated = self
            .balance_of(&org)
            .checked_add(amount)
            .ok_or(ErrorCode::Overflow)?;
        self.balances.insert(org, updated);
        Ok(Event::FundsAdded { amount })
    }

    pub fn send_allowance(
        &mut self,
        sender: &Address,
        recipient: &Address,
        amount: Amount,
    ) -> Result<Event, ErrorCode> {
        self.only_organization(sender)?;
        if !self.is_recipient(recipient) {
            return Err(ErrorCode::NotRecipient);
        }
        let org = self.organization;
        let updated = self
            .balance_of(&org)
            .checked_sub(amount)
            .ok_or(ErrorCode::InsufficientFunds)?;
        self.balances.insert(org, updated);
        Ok(Event::AllowanceSent {
            recipient: *recipient,
            amount,
        })
    }
}

impl Canonical for AidState {
    fn encode_to(&self, w: &mut Writer) {
        w.fixed(&self.organization.0);
        w.count(self.recipients.len());
        for (addr, flag) in &self.recipients {
            w.fixed(&addr.0).bool(*flag);
        }
        w.count(self.balances.len());
        for (addr, amount) in &self.balances {
            w.fixed(&addr.0).u128(amount.0);
        }
        w.count(self.bank_accounts.len());
        for (addr, hash) in &self.bank_accounts {
            w.fixed(&addr.0).fixed(&hash.0);
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        fn sorted_map<V>(
            r: &mut Reader<'_>,
            mut value: impl FnMut(&mut Reader<'_>) -> Result<V, DecodeError>,
        ) -> Result<BTreeMap<Address, V>, DecodeError> {
            let n = r.count()?;
            let mut map = BTreeMap::new();
            let mut prev: Option<Address> = None;
            for _ in 0..n {
                let addr = Address::decode_from(r)?;
                if prev.is_some_and(|p| p >= addr) {
                    return Err(DecodeError::Invalid("mapping keys not strictly ascending"));
                }
                prev = Some(addr);
                map.insert(addr, value(r)?);
            }
            Ok(map)
        }

        let organization = Address::decode_from(r)?;
        let recipients = sorted_map(r, |r| r.bool())?;
        if recipients.values().any(|v| !v) {
            return Err(DecodeError::Invalid("stored false recipient flag"));
        }
        let balances = sorted_map(r, Amount::decode_from)?;
        if !balances.contains_key(&organization) {
            return Err(DecodeError::Invalid("organization balance missing"));
        }
        let bank_accounts = sorted_map(r, AccountHash::decode_from)?;
        Ok(AidState {
            organization,
            recipients,
            balances,
            bank_accounts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ORG: Address = Address([0x01; 20]);
    const R: Address = Address([0x02; 20]);
    const X: Address = Address([0x03; 20]);

    fn funded(amount: u128) -> AidState {
        let mut s = AidState::init(ORG);
        s.apply_mut(&ORG, &TxPayload::AddFunds { amount: Amount(amount) });
        s
    }

    #[test]
    fn init_sets_organization_with_zero_balance() {
        let s = AidState::init(ORG);
        assert_eq!(s.organization(), ORG);
        assert_eq!(s.balance_of(&ORG), Amount(0));
        assert!(!s.is_recipient(&X));
        assert_eq!(
            s.to_canonical_bytes(),
            AidState::init(ORG).to_canonical_bytes()
        );
    }

    #[test]
    fn init_serialization_layout() {
        let bytes = AidState::init(ORG).to_canonical_bytes();
        let mut expected = vec![0x01; 20];
        expected.extend([0, 0, 0, 0]); // recipients
        expected.extend([0, 0, 0, 1]); // balances
        expected.extend([0x01; 20]);
        expected.extend([0u8; 16]);
        expected.extend([0, 0, 0, 0]); // bank accounts
        assert_eq!(bytes, expected);
    }

    #[test]
    fn add_funds_from_organization() {
        let (s, r) = AidState::init(ORG).apply(&ORG, &TxPayload::AddFunds { amount: Amount(1000) });
        assert_eq!(s.balance_of(&ORG), Amount(1000));
        assert_eq!(r, Receipt::success(vec![Event::FundsAdded { amount: Amount(1000) }]));
    }

    #[test]
    fn add_funds_from_stranger_is_unauthorized() {
        let s0 = AidState::init(ORG);
        let (s, r) = s0.apply(&X, &TxPayload::AddFunds { amount: Amount(1000) });
        assert_eq!(r, Receipt::failure(ErrorCode::Unauthorized));
        assert_eq!(s, s0);
    }

    #[test]
    fn add_zero_funds_emits_event() {
        let (s, r) = AidState::init(ORG).apply(&ORG, &TxPayload::AddFunds { amount: Amount(0) });
        assert_eq!(s.balance_of(&ORG), Amount(0));
        assert_eq!(r.events, vec![Event::FundsAdded { amount: Amount(0) }]);
    }

    #[test]
    fn add_funds_overflow_at_u128_max() {
        let s = funded(u128::MAX);
        assert_eq!(s.balance_of(&ORG), Amount::MAX);
        let (after, r) = s.apply(&ORG, &TxPayload::AddFunds { amount: Amount(1) });
        assert_eq!(r, Receipt::failure(ErrorCode::Overflow));
        assert_eq!(after.to_canonical_bytes(), s.to_canonical_bytes());
    }

    #[test]
    fn add_recipient_is_idempotent() {
        let mut s = AidState::init(ORG);
        let first = s.apply_mut(&ORG, &TxPayload::AddRecipient { recipient: R });
        let snapshot = s.clone();
        let second = s.apply_mut(&ORG, &TxPayload::AddRecipient { recipient: R });
        assert!(s.is_recipient(&R));
        assert_eq!(s, snapshot);
        assert_eq!(first, second);
        assert_eq!(second.events, vec![Event::RecipientAdded { recipient: R }]);
    }

    #[test]
    fn self_enrollment_is_unauthorized() {
        let (_, r) = AidState::init(ORG).apply(&R, &TxPayload::AddRecipient { recipient: R });
        assert_eq!(r.error, Some(ErrorCode::Unauthorized));
    }

    #[test]
    fn remove_recipient_cases() {
        let mut s = AidState::init(ORG);
        s.apply_mut(&ORG, &TxPayload::AddRecipient { recipient: R });
        let r = s.apply_mut(&ORG, &TxPayload::RemoveRecipient { recipient: R });
        assert!(r.is_success());
        assert!(!s.is_recipient(&R));

        let r = s.apply_mut(&ORG, &TxPayload::RemoveRecipient { recipient: X });
        assert_eq!(r.events, vec![Event::RecipientRemoved { recipient: X }]);
        assert!(!s.is_recipient(&X));
        assert_eq!(s.to_canonical_bytes(), AidState::init(ORG).to_canonical_bytes());

        let r = s.apply_mut(&X, &TxPayload::RemoveRecipient { recipient: R });
        assert_eq!(r.error, Some(ErrorCode::Unauthorized));
    }

    #[test]
    fn register_bank_account_guards() {
        let mut s = AidState::init(ORG);
        s.apply_mut(&ORG, &TxPayload::AddRecipient { recipient: R });
        let r = s.apply_mut(
            &ORG,
            &TxPayload::RegisterBankAccount { recipient: R, account: vec![] },
        );
        assert_eq!(r.error, Some(ErrorCode::EmptyAccount));

        let before = s.clone();
        let r = s.apply_mut(
            &ORG,
            &TxPayload::RegisterBankAccount { recipient: X, account: b"acct".to_vec() },
        );
        assert_eq!(r.error, Some(ErrorCode::NotRecipient));
        assert_eq!(s, before);

        let r = s.apply_mut(
            &ORG,
            &TxPayload::RegisterBankAccount { recipient: R, account: b"abc".to_vec() },
        );
        let expected: AccountHash =
            "0x4e03657aea45a94fc7d47ba826c8d667c0d1e6e33a64a036ec44f58fa12d6c45"
                .parse()
                .unwrap();
        assert_eq!(s.bank_account(&R), Some(expected));
        assert_eq!(
            r.events,
            vec![Event::BankAccountRegistered { recipient: R, account_hash: expected }]
        );
    }

    #[test]
    fn reregistration_overwrites_and_removal_retains_hash() {
        let mut s = AidState::init(ORG);
        s.apply_mut(&ORG, &TxPayload::AddRecipient { recipient: R });
        s.apply_mut(&ORG, &TxPayload::RegisterBankAccount { recipient: R, account: b"a".to_vec() });
        s.apply_mut(&ORG, &TxPayload::RegisterBankAccount { recipient: R, account: b"b".to_vec() });
        assert_eq!(s.bank_account(&R), Some(AccountHash::of_account(b"b")));
        s.apply_mut(&ORG, &TxPayload::RemoveRecipient { recipient: R });
        assert_eq!(s.bank_account(&R), Some(AccountHash::of_account(b"b")));
    }

    #[test]
    fn send_allowance_scenario() {
        let mut s = funded(1000);
        s.apply_mut(&ORG, &TxPayload::AddRecipient { recipient: R });
        let r = s.apply_mut(&ORG, &TxPayload::SendAllowance { recipient: R, amount: Amount(300) });
        assert_eq!(s.balance_of(&ORG), Amount(700));
        assert_eq!(r.events, vec![Event::AllowanceSent { recipient: R, amount: Amount(300) }]);
        // Off-chain model: the recipient is not credited.
        assert_eq!(s.balance_of(&R), Amount(0));
    }

    #[test]
    fn send_allowance_guards() {
        let mut s = funded(100);
        s.apply_mut(&ORG, &TxPayload::AddRecipient { recipient: R });
        let r = s.apply_mut(&ORG, &TxPayload::SendAllowance { recipient: R, amount: Amount(300) });
        assert_eq!(r.error, Some(ErrorCode::InsufficientFunds));
        let r = s.apply_mut(&ORG, &TxPayload::SendAllowance { recipient: X, amount: Amount(10) });
        assert_eq!(r.error, Some(ErrorCode::NotRecipient));
        let r = s.apply_mut(&R, &TxPayload::SendAllowance { recipient: R, amount: Amount(10) });
        assert_eq!(r.error, Some(ErrorCode::Unauthorized));
        assert_eq!(s.balance_of(&ORG), Amount(100));
    }

    #[test]
    fn error_codes_round_trip() {
        for e in ErrorCode::ALL {
            assert_eq!(ErrorCode::from_code(e.code()), Some(e));
        }
        assert_eq!(ErrorCode::from_code(0), None);
    }

    fn arb_address() -> impl Strategy<Value = Address> {
        (0u8..5).prop_map(|i| Address([i; 20]))
    }

    fn arb_payload() -> impl Strategy<Value = TxPayload> {
        prop_oneof![
            arb_address().prop_map(|recipient| TxPayload::AddRecipient { recipient }),
            arb_address().prop_map(|recipient| TxPayload::RemoveRecipient { recipient }),
            (arb_address(), proptest::collection::vec(any::<u8>(), 0..4))
                .prop_map(|(recipient, account)| TxPayload::RegisterBankAccount { recipient, account }),
            (0u128..2000).prop_map(|a| TxPayload::AddFunds { amount: Amount(a) }),
            (arb_address(), 0u128..2000)
                .prop_map(|(recipient, a)| TxPayload::SendAllowance { recipient, amount: Amount(a) }),
        ]
    }

    proptest! {
        #[test]
        fn failure_leaves_state_byte_identical(
            ops in proptest::collection::vec((arb_address(), arb_payload()), 0..60)
        ) {
            let org = Address([0; 20]);
            let mut state = AidState::init(org);
            let mut added = 0u128;
            let mut sent = 0u128;
            for (sender, payload) in &ops {
                let before = state.to_canonical_bytes();
                let (next, receipt) = state.apply(sender, payload);
                if receipt.is_success() {
                    prop_assert_eq!(receipt.events.len(), 1);
                } else {
                    prop_assert!(receipt.events.is_empty());
                    prop_assert_eq!(next.to_canonical_bytes(), before);
                }
                if *sender != org {
                    prop_assert_eq!(receipt.error, Some(ErrorCode::Unauthorized));
                }
                for e in &receipt.events {
                    match e {
                        Event::FundsAdded { amount } => added += amount.0,
                        Event::AllowanceSent { recipient, amount } => {
                            prop_assert!(state.is_recipient(recipient));
                            prop_assert!(state.balance_of(&org) >= *amount);
                            sent += amount.0;
                        }
                        _ => {}
                    }
                }
                state = next;
                prop_assert_eq!(state.balance_of(&org).0, added - sent);
            }
            let decoded = AidState::from_canonical_bytes(&state.to_canonical_bytes()).unwrap();
            prop_assert_eq!(decoded, state);
        }

        #[test]
        fn payload_codec_round_trips(p in arb_payload()) {
            prop_assert_eq!(TxPayload::from_canonical_bytes(&p.to_canonical_bytes()).unwrap(), p);
        }
    }
}
