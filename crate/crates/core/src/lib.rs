//! Decentralized e-prescriptions.
//!
//! Doctors issue prescriptions as selectively disclosable credentials and
//! back each one with a ledger token keyed by a one-time public key. The
//! matching secret key travels inside the credential, so the pharmacy that
//! receives it can spend the token. A single ordering point guarantees
//! that a prescription is redeemed at most as often as it was issued for.
//!
//! - [`crypto`]: signatures, hashing, commitments, channel encryption,
//!   canonical encoding
//! - [`registry`]: DIDs, schemas, credential definitions, revocation
//! - [`ledger`]: ordered log and the prescription-token contract
//! - [`credentials`]: issuance, presentation, verification
//! - [`agents`]: doctor, patient wallet and pharmacy protocol roles
//! - [`harness`]: scenarios, transcripts, race tests and benchmarks

pub mod agents;
pub mod credentials;
pub mod crypto;
pub mod harness;
pub mod ledger;
pub mod registry;
