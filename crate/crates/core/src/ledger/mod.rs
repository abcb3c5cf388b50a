//! Totally ordered transaction log and the prescription-token contract.
//!
//! Each doctor deploys one contract. The contract's admin (and any key the
//! admin adds) creates tokens addressed by a one-time public key with a
//! bounded number of redemptions; whoever holds the matching secret key
//! spends them. Spends against an exhausted or unknown token fail with
//! "Already spent". Because every transaction passes through a single
//! applier, concurrent spends of the same token are serialized and at most
//! `count` of them succeed.

mod service;
mod state;
mod types;

pub use service::{read_log, replay, write_log, Ledger, LogError};
pub use state::{ContractState, LedgerState};
pub use types::*;
