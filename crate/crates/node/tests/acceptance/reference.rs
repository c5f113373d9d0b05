//! Naive reference model of the aid contract, written without the library's
//! types or encoder. Maps are plain vectors scanned linearly; the state is
//! serialized by hand and hashed with the `sha3` crate.

use sha3::{Digest, Keccak256};

pub type Addr = [u8; 20];

pub const UNAUTHORIZED: u8 = 1;
pub const NOT_RECIPIENT: u8 = 2;
pub const EMPTY_ACCOUNT: u8 = 3;
pub const INSUFFICIENT_FUNDS: u8 = 4;
pub const OVERFLOW: u8 = 5;

#[derive(Debug, Clone)]
pub enum Op {
    AddRecipient(Addr),
    RemoveRecipient(Addr),
    RegisterAccount(Addr, Vec<u8>),
    AddFunds(u128),
    SendAllowance(Addr, u128),
}

pub fn keccak(data: &[u8]) -> [u8; 32] {
    Keccak256::digest(data).into()
}

#[derive(Debug, Clone)]
pub struct Model {
    pub org: Addr,
    pub org_balance: u128,
    /// Enrolled addresses, unordered.
    pub enrolled: Vec<Addr>,
    /// (recipient, account digest), unordered.
    pub accounts: Vec<(Addr, [u8; 32])>,
}

impl Model {
    pub fn new(org: Addr) -> Self {
        Model {
            org,
            org_balance: 0,
            enrolled: Vec::new(),
            accounts: Vec::new(),
        }
    }

    fn is_enrolled(&self, a: &Addr) -> bool {
        self.enrolled.iter().any(|x| x == a)
    }

    /// Returns the encoded event, or the error code.
    pub fn apply(&mut self, sender: &Addr, op: &Op) -> Result<Vec<u8>, u8> {
        if *sender != self.org {
            return Err(UNAUTHORIZED);
        }
        let mut ev = Vec::new();
        match op {
            Op::AddRecipient(r) => {
                if !self.is_enrolled(r) {
                    self.enrolled.push(*r);
                }
                ev.push(1);
                ev.extend_from_slice(r);
            }
            Op::RemoveRecipient(r) => {
                self.enrolled.retain(|x| x != r);
                ev.push(2);
                ev.extend_from_slice(r);
            }
            Op::RegisterAccount(r, account) => {
                if !self.is_enrolled(r) {
                    return Err(NOT_RECIPIENT);
                }
                if account.is_empty() {
                    return Err(EMPTY_ACCOUNT);
                }
                let digest = keccak(account);
                self.accounts.retain(|(x, _)| x != r);
                self.accounts.push((*r, digest));
                ev.push(3);
                ev.extend_from_slice(r);
                ev.extend_from_slice(&digest);
            }
            Op::AddFunds(amount) => {
                self.org_balance = self.org_balance.checked_add(*amount).ok_or(OVERFLOW)?;
                ev.push(4);
                ev.extend_from_slice(&amount.to_be_bytes());
            }
            Op::SendAllowance(r, amount) => {
                if !self.is_enrolled(r) {
                    return Err(NOT_RECIPIENT);
                }
                if self.org_balance < *amount {
                    return Err(INSUFFICIENT_FUNDS);
                }
                self.org_balance -= amount;
                ev.push(5);
                ev.extend_from_slice(r);
                ev.extend_from_slice(&amount.to_be_bytes());
            }
        }
        Ok(ev)
    }

    /// organization | recipients | balances | bank accounts, each mapping
    /// as a u32 BE count followed by entries in ascending key order.
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.org);

        let mut enrolled = self.enrolled.clone();
        enrolled.sort();
        out.extend_from_slice(&(enrolled.len() as u32).to_be_bytes());
        for a in &enrolled {
            out.extend_from_slice(a);
            out.push(1);
        }

        // Only the organization ever holds a balance.
        out.extend_from_slice(&1u32.to_be_bytes());
        out.extend_from_slice(&self.org);
        out.extend_from_slice(&self.org_balance.to_be_bytes());

        let mut accounts = self.accounts.clone();
        accounts.sort();
        out.extend_from_slice(&(accounts.len() as u32).to_be_bytes());
        for (a, h) in &accounts {
            out.extend_from_slice(a);
            out.extend_from_slice(h);
        }
        out
    }

    pub fn root(&self) -> [u8; 32] {
        keccak(&self.serialize())
    }
}
