use aidledger_core::audit::AuditTotals;
use aidledger_core::codec::Canonical;
use aidledger_core::ledger::{AidState, ErrorCode, Event, TxPayload};
use aidledger_core::types::{AccountHash, Address, Amount};
use proptest::prelude::*;
use sha3::{Digest, Keccak256};

const ORG: Address = Address([0xAA; 20]);

fn addr(b: u8) -> Address {
    Address([b; 20])
}

#[test]
fn walkthrough_balances_and_events() {
    let mut s = AidState::init(ORG);
    let alice = addr(1);
    assert!(s.apply_mut(&ORG, &TxPayload::AddFunds { amount: Amount(1000) }).is_success());
    assert!(s.apply_mut(&ORG, &TxPayload::AddRecipient { recipient: alice }).is_success());
    let r = s.apply_mut(
        &ORG,
        &TxPayload::RegisterBankAccount { recipient: alice, account: b"NL91ABNA0417164300".to_vec() },
    );
    let digest: [u8; 32] = Keccak256::digest(b"NL91ABNA0417164300").into();
    assert_eq!(
        r.events,
        vec![Event::BankAccountRegistered { recipient: alice, account_hash: AccountHash(digest) }]
    );
    assert_eq!(s.bank_account(&alice), Some(AccountHash(digest)));

    let r = s.apply_mut(&ORG, &TxPayload::SendAllowance { recipient: alice, amount: Amount(300) });
    assert_eq!(r.events, vec![Event::AllowanceSent { recipient: alice, amount: Amount(300) }]);
    assert_eq!(s.balance_of(&ORG), Amount(700));

    let r = s.apply_mut(&ORG, &TxPayload::SendAllowance { recipient: alice, amount: Amount(701) });
    assert_eq!(r.error, Some(ErrorCode::InsufficientFunds));
    assert_eq!(s.balance_of(&ORG), Amount(700));

    assert!(s.apply_mut(&ORG, &TxPayload::RemoveRecipient { recipient: alice }).is_success());
    let r = s.apply_mut(&ORG, &TxPayload::SendAllowance { recipient: alice, amount: Amount(1) });
    assert_eq!(r.error, Some(ErrorCode::NotRecipient));
}

#[test]
fn outsiders_change_nothing() {
    let s = AidState::init(ORG);
    let before = s.state_root();
    for payload in [
        TxPayload::AddFunds { amount: Amount(5) },
        TxPayload::AddRecipient { recipient: addr(2) },
        TxPayload::RemoveRecipient { recipient: addr(2) },
    ] {
        let (next, receipt) = s.apply(&addr(9), &payload);
        assert_eq!(receipt.error, Some(ErrorCode::Unauthorized));
        assert_eq!(next.state_root(), before);
    }
}

#[test]
fn balance_overflow_is_rejected() {
    let mut s = AidState::init(ORG);
    s.apply_mut(&ORG, &TxPayload::AddFunds { amount: Amount(u128::MAX) });
    let r = s.apply_mut(&ORG, &TxPayload::AddFunds { amount: Amount(1) });
    assert_eq!(r.error, Some(ErrorCode::Overflow));
    assert_eq!(s.balance_of(&ORG), Amount(u128::MAX));
}

#[test]
fn state_encoding_round_trips() {
    let mut s = AidState::init(ORG);
    s.apply_mut(&ORG, &TxPayload::AddRecipient { recipient: addr(3) });
    s.apply_mut(&ORG, &TxPayload::AddFunds { amount: Amount(42) });
    let bytes = s.to_canonical_bytes();
    let back = AidState::from_canonical_bytes(&bytes).unwrap();
    assert_eq!(back.state_root(), s.state_root());
    let root: [u8; 32] = Keccak256::digest(&bytes).into();
    assert_eq!(s.state_root().0, root);
}

fn payload() -> impl Strategy<Value = TxPayload> {
    let who = (1u8..5).prop_map(addr);
    prop_oneof![
        who.clone().prop_map(|recipient| TxPayload::AddRecipient { recipient }),
        who.clone().prop_map(|recipient| TxPayload::RemoveRecipient { recipient }),
        (who.clone(), proptest::collection::vec(any::<u8>(), 0..4))
            .prop_map(|(recipient, account)| TxPayload::RegisterBankAccount { recipient, account }),
        (0u128..500).prop_map(|a| TxPayload::AddFunds { amount: Amount(a) }),
        (who, 0u128..500).prop_map(|(recipient, a)| TxPayload::SendAllowance { recipient, amount: Amount(a) }),
    ]
}

proptest! {
    #[test]
    fn funds_are_conserved(ops in proptest::collection::vec((any::<bool>(), payload()), 0..60)) {
        let mut s = AidState::init(ORG);
        let mut totals = AuditTotals::default();
        for (from_org, p) in &ops {
            let sender = if *from_org { ORG } else { addr(7) };
            let r = s.apply_mut(&sender, p);
            for e in &r.events {
                totals.record(e).unwrap();
            }
        }
        prop_assert!(totals.check_conservation(s.balance_of(&ORG)).is_ok());
    }

    #[test]
    fn replay_is_deterministic(ops in proptest::collection::vec(payload(), 0..40)) {
        let run = || {
            let mut s = AidState::init(ORG);
            let receipts: Vec<_> = ops.iter().map(|p| s.apply_mut(&ORG, p)).collect();
            (s.state_root(), receipts)
        };
        prop_assert_eq!(run(), run());
    }
}
