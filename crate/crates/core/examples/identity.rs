//! Keccak-256, address derivation and transaction signing.
//!
//! Usage: `cargo run --example identity [SECRET_HEX]`

use aidledger_core::crypto::{keccak256, KeyPair};
use aidledger_core::ledger::TxPayload;
use aidledger_core::tx::Transaction;
use aidledger_core::types::{Address, Amount};

fn main() {
    println!("keccak256(\"\")    = 0x{}", hex::encode(keccak256(b"")));
    println!("keccak256(\"abc\") = 0x{}", hex::encode(keccak256(b"abc")));

    let secret = std::env::args().nth(1).unwrap_or_else(|| format!("{:064x}", 1));
    let bytes: [u8; 32] = hex::decode(secret.trim_start_matches("0x"))
        .ok()
        .and_then(|b| b.try_into().ok())
        .unwrap_or_else(|| {
            eprintln!("secret must be 32 bytes of hex");
            std::process::exit(1);
        });
    let key = KeyPair::from_secret(&bytes).unwrap_or_else(|e| {
        eprintln!("{e}");
        std::process::exit(1);
    });
    println!("\npublic key 0x{}", hex::encode(key.public().0));
    println!("address    {}", key.address());

    let tx = Transaction::sign(
        &key,
        0,
        TxPayload::SendAllowance { recipient: Address([7; 20]), amount: Amount(25) },
    );
    println!("\nsigned tx  {}", tx.hash());
    println!("  r 0x{}", hex::encode(tx.signature.r));
    println!("  s 0x{}", hex::encode(tx.signature.s));
    println!("  verifies: {}", tx.verify());

    let mut tampered = tx.clone();
    tampered.payload = TxPayload::SendAllowance { recipient: Address([7; 20]), amount: Amount(2_500) };
    println!("  tampered amount verifies: {}", tampered.verify());
    println!("  wire bytes: {}", tx.to_hex().len() / 2);
}
