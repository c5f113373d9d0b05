//! Off-chain bank transfer instructions.
//!
//! Every finalized `AllowanceSent` event becomes one [`BankInstruction`].
//! A background worker hands instructions to the configured sink, retrying
//! with backoff, and records each delivered key in a ledger file so a
//! restarted node never sends the same instruction twice. Consensus only
//! ever enqueues; it never waits for the sink.

use std::collections::{HashSet, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use aidledger_core::types::{AccountHash, Address, Amount, Hash};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankInstruction {
    pub recipient: Address,
    pub account_hash: Option<AccountHash>,
    pub amount: Amount,
    pub block_height: u64,
    pub tx_hash: Hash,
    pub event_index: u32,
    /// No account was registered, so a person has to route the payment.
    pub manual_review: bool,
}

/// Identifies an instruction across restarts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstructionKey {
    pub block_height: u64,
    pub tx_hash: Hash,
    pub event_index: u32,
}

impl std::fmt::Display for InstructionKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {} {}", self.block_height, self.tx_hash, self.event_index)
    }
}

impl std::str::FromStr for InstructionKey {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let mut parts = s.split_whitespace();
        let key = InstructionKey {
            block_height: parts.next().ok_or(())?.parse().map_err(|_| ())?,
            tx_hash: parts.next().ok_or(())?.parse().map_err(|_| ())?,
            event_index: parts.next().ok_or(())?.parse().map_err(|_| ())?,
        };
        match parts.next() {
            None => Ok(key),
            Some(_) => Err(()),
        }
    }
}

impl BankInstruction {
    pub fn new(
        recipient: Address,
        account_hash: Option<AccountHash>,
        amount: Amount,
        block_height: u64,
        tx_hash: Hash,
        event_index: u32,
    ) -> Self {
        BankInstruction {
            recipient,
            manual_review: account_hash.is_none(),
            account_hash,
            amount,
            block_height,
            tx_hash,
            event_index,
        }
    }

    pub fn key(&self) -> InstructionKey {
        InstructionKey {
            block_height: self.block_height,
            tx_hash: self.tx_hash,
            event_index: self.event_index,
        }
    }
}

#[derive(Debug, Error)]
pub enum SinkError {
    #[error("sink unavailable: {0}")]
    Unavailable(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub trait InstructionSink: Send + 'static {
    fn deliver(&mut self, instruction: &BankInstruction) -> Result<(), SinkError>;
}

/// Appends one JSON object per line. Keys already in the file are skipped,
/// which covers a crash between writing and recording delivery.
pub struct FileSink {
    path: PathBuf,
    seen: HashSet<InstructionKey>,
}

impl FileSink {
    pub fn new(path: impl Into<PathBuf>) -> Result<Self, SinkError> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let seen = read_instructions(&path)?.iter().map(BankInstruction::key).collect();
        Ok(FileSink { path, seen })
    }
}

impl InstructionSink for FileSink {
    fn deliver(&mut self, instruction: &BankInstruction) -> Result<(), SinkError> {
        if self.seen.contains(&instruction.key()) {
            return Ok(());
        }
        let mut line = serde_json::to_string(instruction).expect("instruction serializes");
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        self.seen.insert(instruction.key());
        Ok(())
    }
}

/// Reads a [`FileSink`] output file. A missing file reads as empty.
pub fn read_instructions(path: &Path) -> Result<Vec<BankInstruction>, SinkError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // A torn last line from a crash is ignored; it will be rewritten.
        if let Ok(i) = serde_json::from_str(&line) {
            out.push(i);
        }
    }
    Ok(out)
}

/// POSTs each instruction as JSON. The key travels in the
/// `Idempotency-Key` header for receivers that deduplicate.
pub struct WebhookSink {
    url: String,
    client: Option<reqwest::blocking::Client>,
}

impl WebhookSink {
    pub fn new(url: impl Into<String>) -> Self {
        WebhookSink {
            url: url.into(),
            client: None,
        }
    }
}

impl InstructionSink for WebhookSink {
    fn deliver(&mut self, instruction: &BankInstruction) -> Result<(), SinkError> {
        let client = self.client.get_or_insert_with(|| {
            reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(10))
                .build()
                .expect("http client")
        });
        let response = client
            .post(&self.url)
            .header("Idempotency-Key", instruction.key().to_string())
            .json(instruction)
            .send()
            .map_err(|e| SinkError::Unavailable(e.to_string()))?;
        if response.status().is_success() {
            Ok(())
        } else {
            Err(SinkError::Unavailable(format!("webhook answered {}", response.status())))
        }
    }
}

#[derive(Debug, Default)]
struct Progress {
    queued: usize,
    delivered: usize,
    failures: u64,
    last_error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SinkStatus {
    pub pending: usize,
    pub delivered: usize,
    pub failures: u64,
    pub last_error: Option<String>,
}

enum Job {
    Deliver(Vec<BankInstruction>),
    Stop,
}

pub struct SinkDispatcher {
    jobs: Sender<Job>,
    progress: Arc<(Mutex<Progress>, Condvar)>,
    worker: Option<JoinHandle<()>>,
}

const BACKOFF_START: Duration = Duration::from_millis(100);
const BACKOFF_MAX: Duration = Duration::from_secs(5);

impl SinkDispatcher {
    /// `ledger` records delivered keys; it is created if missing.
    pub fn spawn(sink: Box<dyn InstructionSink>, ledger: impl Into<PathBuf>) -> Result<Self, SinkError> {
        let ledger = ledger.into();
        let delivered = read_ledger(&ledger)?;
        let (jobs, rx) = mpsc::channel();
        let progress = Arc::new((Mutex::new(Progress::default()), Condvar::new()));
        let worker_progress = Arc::clone(&progress);
        let worker = std::thread::Builder::new()
            .name("bank-sink".into())
            .spawn(move || run_worker(sink, ledger, delivered, rx, worker_progress))?;
        Ok(SinkDispatcher {
            jobs,
            progress,
            worker: Some(worker),
        })
    }

    /// Queues instructions; already delivered ones are dropped by the worker.
    pub fn enqueue(&self, instructions: Vec<BankInstruction>) {
        if instructions.is_empty() {
            return;
        }
        self.progress.0.lock().expect("sink lock").queued += instructions.len();
        let _ = self.jobs.send(Job::Deliver(instructions));
    }

    pub fn status(&self) -> SinkStatus {
        let p = self.progress.0.lock().expect("sink lock");
        SinkStatus {
            pending: p.queued,
            delivered: p.delivered,
            failures: p.failures,
            last_error: p.last_error.clone(),
        }
    }

    /// Waits until the queue is empty. Returns false on timeout.
    pub fn flush(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let (lock, cvar) = &*self.progress;
        let mut p = lock.lock().expect("sink lock");
        while p.queued > 0 {
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            p = cvar.wait_timeout(p, deadline - now).expect("sink lock").0;
        }
        true
    }
}

impl Drop for SinkDispatcher {
    fn drop(&mut self) {
        let _ = self.jobs.send(Job::Stop);
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

fn read_ledger(path: &Path) -> Result<HashSet<InstructionKey>, SinkError> {
    match fs::read_to_string(path) {
        Ok(text) => Ok(text.lines().filter_map(|l| l.parse().ok()).collect()),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(HashSet::new()),
        Err(e) => Err(e.into()),
    }
}

fn run_worker(
    mut sink: Box<dyn InstructionSink>,
    ledger: PathBuf,
    mut delivered: HashSet<InstructionKey>,
    jobs: Receiver<Job>,
    progress: Arc<(Mutex<Progress>, Condvar)>,
) {
    let finish = |ok: bool| {
        let (lock, cvar) = &*progress;
        let mut p = lock.lock().expect("sink lock");
        p.queued -= 1;
        if ok {
            p.delivered += 1;
        }
        cvar.notify_all();
    };
    let mut backlog: VecDeque<BankInstruction> = VecDeque::new();
    loop {
        let Some(instruction) = backlog.pop_front() else {
            match jobs.recv() {
                Ok(Job::Deliver(batch)) => {
                    backlog.extend(batch);
                    continue;
                }
                Ok(Job::Stop) | Err(_) => return,
            }
        };
        let key = instruction.key();
        if delivered.contains(&key) {
            finish(false);
            continue;
        }
        let mut backoff = BACKOFF_START;
        while let Err(e) = sink.deliver(&instruction).and_then(|_| append_key(&ledger, &key)) {
            {
                let mut p = progress.0.lock().expect("sink lock");
                p.failures += 1;
                p.last_error = Some(e.to_string());
            }
            // Sleep out the backoff while still accepting work and shutdown.
            match jobs.recv_timeout(backoff) {
                Ok(Job::Deliver(batch)) => backlog.extend(batch),
                Ok(Job::Stop) | Err(RecvTimeoutError::Disconnected) => return,
                Err(RecvTimeoutError::Timeout) => {}
            }
            backoff = (backoff * 2).min(BACKOFF_MAX);
        }
        delivered.insert(key);
        finish(true);
    }
}

fn append_key(ledger: &Path, key: &InstructionKey) -> Result<(), SinkError> {
    let mut f = OpenOptions::new().create(true).append(true).open(ledger)?;
    writeln!(f, "{key}")?;
    f.sync_data()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instruction(height: u64, amount: u128, account: bool) -> BankInstruction {
        BankInstruction::new(
            Address([7; 20]),
            account.then(|| AccountHash::of_account(b"IBAN-TEST-001")),
            Amount(amount),
            height,
            Hash::of(&height.to_be_bytes()),
            0,
        )
    }

    #[test]
    fn missing_account_needs_manual_review() {
        assert!(instruction(1, 5, false).manual_review);
        assert!(!instruction(1, 5, true).manual_review);
    }

    #[test]
    fn key_text_round_trips() {
        let k = instruction(42, 1, true).key();
        assert_eq!(k.to_string().parse::<InstructionKey>(), Ok(k));
        assert!("1 2".parse::<InstructionKey>().is_err());
    }

    #[test]
    fn delivers_once_across_restarts() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out.jsonl");
        let ledger = dir.path().join("delivered");
        let all = vec![instruction(1, 10, true), instruction(2, 20, false)];
        {
            let d = SinkDispatcher::spawn(Box::new(FileSink::new(&out).unwrap()), &ledger).unwrap();
            d.enqueue(all[..1].to_vec());
            assert!(d.flush(Duration::from_secs(5)));
            assert_eq!(d.status().delivered, 1);
        }
        let d = SinkDispatcher::spawn(Box::new(FileSink::new(&out).unwrap()), &ledger).unwrap();
        d.enqueue(all.clone());
        d.enqueue(all.clone());
        assert!(d.flush(Duration::from_secs(5)));
        assert_eq!(d.status().delivered, 1);
        assert_eq!(read_instructions(&out).unwrap(), all);
    }

    #[test]
    fn file_sink_skips_keys_already_written() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out.jsonl");
        let i = instruction(3, 30, true);
        FileSink::new(&out).unwrap().deliver(&i).unwrap();
        // Delivered but never recorded in the ledger: a fresh sink still
        // refuses to write it again.
        FileSink::new(&out).unwrap().deliver(&i).unwrap();
        assert_eq!(read_instructions(&out).unwrap(), vec![i]);
    }

    struct Flaky {
        fail_first: u32,
        got: Arc<Mutex<Vec<BankInstruction>>>,
    }

    impl InstructionSink for Flaky {
        fn deliver(&mut self, i: &BankInstruction) -> Result<(), SinkError> {
            if self.fail_first > 0 {
                self.fail_first -= 1;
                return Err(SinkError::Unavailable("down".into()));
            }
            self.got.lock().unwrap().push(i.clone());
            Ok(())
        }
    }

    #[test]
    fn retries_until_the_sink_recovers() {
        let dir = tempfile::tempdir().unwrap();
        let got = Arc::new(Mutex::new(Vec::new()));
        let sink = Flaky {
            fail_first: 2,
            got: Arc::clone(&got),
        };
        let d = SinkDispatcher::spawn(Box::new(sink), dir.path().join("delivered")).unwrap();
        let batch = vec![instruction(1, 1, true), instruction(2, 2, true)];
        d.enqueue(batch[..1].to_vec());
        d.enqueue(batch[1..].to_vec());
        assert!(d.flush(Duration::from_secs(10)));
        let status = d.status();
        assert_eq!(status.failures, 2);
        assert_eq!(status.delivered, 2);
        assert_eq!(*got.lock().unwrap(), batch);
    }
}
