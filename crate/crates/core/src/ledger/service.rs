use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::mpsc::{self, Receiver, Sender, SyncSender};
use std::sync::Arc;
use std::thread::JoinHandle;

use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use super::state::{ContractState, LedgerState};
use super::types::*;
use crate::crypto::{self, Digest, KeyPair, PublicKey};

/// Most requests the applier folds into one block before publishing a
/// snapshot and answering submitters.
const MAX_BLOCK: usize = 256;

type Reply = SyncSender<Result<LedgerReceipt, SubmitError>>;

struct Request {
    tx: LedgerTransaction,
    reply: Reply,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed log line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("replay diverged at height {height}")]
    Diverged { height: u64 },
}

struct Shared {
    snapshot: RwLock<Arc<LedgerState>>,
    log: RwLock<Vec<LogEntry>>,
}

/// Joins the applier once the last handle (and with it the last queue
/// sender) is gone.
struct ApplierGuard(Mutex<Option<JoinHandle<()>>>);

impl Drop for ApplierGuard {
    fn drop(&mut self) {
        if let Some(handle) = self.0.lock().take() {
            let _ = handle.join();
        }
    }
}

/// Totally ordered ledger: any number of submitters, one applier thread
/// that owns the state and assigns heights.
#[derive(Clone)]
pub struct Ledger {
    // field order matters: the sender must drop before the guard joins
    queue: Sender<Request>,
    shared: Arc<Shared>,
    _applier: Arc<ApplierGuard>,
}

impl Default for Ledger {
    fn default() -> Self {
        Self::new()
    }
}

impl Ledger {
    pub fn new() -> Self {
        Self::start(LedgerState::default(), Vec::new(), None)
    }

    /// Ledger that appends every ordered entry to `path` as canonical JSON
    /// lines. Existing entries are replayed first.
    pub fn with_log_file(path: &Path) -> Result<Self, LogError> {
        let entries = read_log(path)?;
        let state = replay(&entries)?;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self::start(state, entries, Some(BufWriter::new(file))))
    }

    fn start(state: LedgerState, entries: Vec<LogEntry>, sink: Option<BufWriter<File>>) -> Self {
        let (sender, receiver) = mpsc::channel();
        let shared = Arc::new(Shared { snapshot: RwLock::new(Arc::new(state.clone())), log: RwLock::new(entries) });
        let for_applier = shared.clone();
        let handle = std::thread::Builder::new()
            .name("ledger-applier".into())
            .spawn(move || run_applier(state, receiver, sink, for_applier))
            .expect("spawn ledger applier");
        Ledger { queue: sender, shared, _applier: Arc::new(ApplierGuard(Mutex::new(Some(handle)))) }
    }

    /// Order and apply `tx`, blocking until its receipt is available.
    pub fn submit(&self, tx: LedgerTransaction) -> Result<LedgerReceipt, SubmitError> {
        // Cheap early rejection against the latest snapshot; the applier
        // re-checks authoritatively.
        self.snapshot().check_nonce(&tx)?;
        if !tx.signature_valid() {
            return Err(SubmitError::BadSignature);
        }
        let (reply, wait) = mpsc::sync_channel(1);
        self.queue.send(Request { tx, reply }).map_err(|_| SubmitError::Closed)?;
        wait.recv().map_err(|_| SubmitError::Closed)?
    }

    /// Sign `command` with the sender's next nonce and submit, re-signing
    /// with a fresh nonce whenever a concurrent submitter with the same key
    /// wins the nonce.
    pub fn submit_command(&self, key: &KeyPair, command: Command) -> Result<LedgerReceipt, SubmitError> {
        const MAX_ATTEMPTS: usize = 10_000;
        for attempt in 0..MAX_ATTEMPTS {
            let nonce = self.next_nonce(&key.public_key());
            match self.submit(LedgerTransaction::signed(key, nonce, command.clone())) {
                Err(SubmitError::StaleNonce { .. }) => {
                    if attempt > 2 {
                        std::thread::yield_now();
                    }
                }
                other => return other,
            }
        }
        Err(SubmitError::Contention(MAX_ATTEMPTS))
    }

    pub fn snapshot(&self) -> Arc<LedgerState> {
        self.shared.snapshot.read().clone()
    }

    pub fn query_token(&self, contract: &Digest, patient_pk: &PublicKey) -> Option<PrescriptionToken> {
        self.snapshot().query_token(contract, patient_pk)
    }

    pub fn contract(&self, address: &Digest) -> Option<ContractState> {
        self.snapshot().contract(address).cloned()
    }

    pub fn next_nonce(&self, sender: &PublicKey) -> u64 {
        self.snapshot().next_nonce(sender)
    }

    pub fn height(&self) -> u64 {
        self.snapshot().height()
    }

    pub fn state_digest(&self) -> Digest {
        self.snapshot().digest()
    }

    pub fn log(&self) -> Vec<LogEntry> {
        self.shared.log.read().clone()
    }

    pub fn log_len(&self) -> usize {
        self.shared.log.read().len()
    }
}

fn run_applier(
    mut state: LedgerState,
    receiver: Receiver<Request>,
    mut sink: Option<BufWriter<File>>,
    shared: Arc<Shared>,
) {
    let mut block: Vec<Request> = Vec::with_capacity(MAX_BLOCK);
    while let Ok(first) = receiver.recv() {
        block.push(first);
        while block.len() < MAX_BLOCK {
            match receiver.try_recv() {
                Ok(req) => block.push(req),
                Err(_) => break,
            }
        }
        let mut replies = Vec::with_capacity(block.len());
        {
            let mut log = shared.log.write();
            for Request { tx, reply } in block.drain(..) {
                let result = state.check_nonce(&tx).map(|()| state.apply_admitted(&tx));
                if let Ok(receipt) = &result {
                    let entry = LogEntry { height: receipt.height, tx, receipt: receipt.clone() };
                    if let Some(w) = sink.as_mut() {
                        let mut line = entry.to_line();
                        line.push(b'\n');
                        w.write_all(&line).expect("ledger log write");
                    }
                    log.push(entry);
                }
                replies.push((reply, result));
            }
        }
        if let Some(w) = sink.as_mut() {
            w.flush().expect("ledger log flush");
        }
        *shared.snapshot.write() = Arc::new(state.clone());
        for (reply, result) in replies {
            let _ = reply.send(result);
        }
    }
}

/// Rebuild state from a log, checking every stored receipt.
pub fn replay(entries: &[LogEntry]) -> Result<LedgerState, LogError> {
    let mut state = LedgerState::default();
    for entry in entries {
        match state.submit(&entry.tx) {
            Ok(receipt) if receipt == entry.receipt && receipt.height == entry.height => {}
            _ => return Err(LogError::Diverged { height: entry.height }),
        }
    }
    Ok(state)
}

pub fn read_log(path: &Path) -> Result<Vec<LogEntry>, LogError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let entry: LogEntry = crypto::from_canonical(line.as_bytes())
            .map_err(|e| LogError::Malformed { line: i + 1, reason: e.to_string() })?;
        entries.push(entry);
    }
    Ok(entries)
}

pub fn write_log(path: &Path, entries: &[LogEntry]) -> Result<(), LogError> {
    let mut w = BufWriter::new(File::create(path)?);
    for entry in entries {
        w.write_all(&entry.to_line())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
