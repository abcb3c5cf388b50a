//! Doctor, patient wallet and pharmacy.
//!
//! Each agent is a single-threaded state machine over its own state. It
//! consumes frames and returns the frames it wants sent; the caller owns
//! the transport and the delivery order. Consent points (accepting an
//! offer, answering a proof request) are explicit calls on the patient.

mod doctor;
mod patient;
mod pharmacy;
pub mod protocol;
pub mod transport;


pub use doctor::{Doctor, Onboarding};
pub use patient::{ActivityEntry, ActivityKind, Patient, StoredCredential, WalletStore};
pub use pharmacy::{CreddefLookup, DispenseStatus, Pharmacy, PharmacyConfig, RedemptionRecord, RedemptionResult};
pub use protocol::{Channels, Connection, Envelope, Inbound, Invitation, MessageType, Outgoing, ProtocolError};
pub use transport::{MemoryTransport, TcpTransport, Transport, TransportError};

use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::credentials::{Credential, CredentialError, Presentation, ProofRequest, VerificationReport};
use crate::crypto::{self, Digest, PublicKey};
use crate::ledger::{LedgerReceipt, SubmitError};
use crate::registry::{Did, RegistryError};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("registry: {0}")]
    Registry(#[from] RegistryError),
    #[error("credential: {0}")]
    Credential(#[from] CredentialError),
    #[error("ledger submission: {0}")]
    Submit(#[from] SubmitError),
    #[error("ledger rejected {command}: {}", .receipt.error_message.as_deref().unwrap_or("?"))]
    LedgerRejected { command: &'static str, receipt: LedgerReceipt },
    #[error("onboarding failed: {0}")]
    Onboarding(RegistryError),
    #[error("agent has not onboarded")]
    NotOnboarded,
    #[error("count must be at least 1")]
    BadCount,
    #[error("patient declined the offer")]
    PatientDeclined,
    #[error("user declined")]
    UserDeclined,
    #[error("no matching credential")]
    NoMatchingCredential,
    #[error("unknown credential {0}")]
    UnknownCredential(String),
}

/// Observable agent activity, collected by the harness for transcripts
/// and expectations.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum AgentEvent {
    Onboarded { onboarding: Onboarding },
    LedgerReceipt { command: &'static str, receipt: LedgerReceipt },
    Connected { session_id: String, their_did: Did },
    OfferPending { thread: String, preview: BTreeMap<String, String>, count: u64 },
    OfferDeclined { thread: String },
    CredentialIssued { thread: String, credential_index: u64 },
    CredentialStored { thread: String, credential_index: u64 },
    ProofRequestPending { thread: String, requested: Vec<String> },
    PresentationDeclined { thread: String },
    Verification { thread: String, report: VerificationReport },
    Redemption { thread: String, result: RedemptionResult },
    Revoked { thread: String, credential_index: u64, epoch: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Decline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CredentialOffer {
    pub thread: String,
    pub creddef_id: Digest,
    pub schema_id: Digest,
    pub preview: BTreeMap<String, String>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CredentialRequest {
    pub thread: String,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holder_binding_pk: Option<PublicKey>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CredentialIssue {
    pub thread: String,
    pub credential: Credential,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProofRequestMessage {
    pub thread: String,
    pub request: ProofRequest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresentationMessage {
    pub thread: String,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub presentation: Option<Presentation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedemptionResultMessage {
    pub thread: String,
    pub result: RedemptionResult,
}

fn new_thread<R: RngCore + ?Sized>(rng: &mut R) -> String {
    crypto::b64(&crypto::random_bytes::<16, _>(rng))
}

fn to_body<T: Serialize>(message: &T) -> serde_json::Value {
    serde_json::to_value(message).expect("message bodies serialize")
}

fn from_body<T: serde::de::DeserializeOwned>(body: serde_json::Value) -> Result<T, ProtocolError> {
    serde_json::from_value(body).map_err(|e| ProtocolError::Malformed(e.to_string()))
}
