use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::crypto::{self, Digest, KeyPair, PublicKey, Signature};

pub const NOT_ADMIN_MESSAGE: &str = "Sender is not the admin of the contract";
pub const ALREADY_SPENT_MESSAGE: &str = "Already spent";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    Deploy,
    Create { contract_address: Digest, patient_pk: PublicKey, count: u64 },
    Spend { contract_address: Digest },
    AddIssuer { contract_address: Digest, new_issuer_pk: PublicKey },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Deploy => "deploy",
            Command::Create { .. } => "create",
            Command::Spend { .. } => "spend",
            Command::AddIssuer { .. } => "add_issuer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerTransaction {
    pub sender: PublicKey,
    pub nonce: u64,
    pub command: Command,
    pub signature: Signature,
}

impl LedgerTransaction {
    pub fn signed(key: &KeyPair, nonce: u64, command: Command) -> Self {
        let signature = key.sign(&signing_bytes(&key.public_key(), nonce, &command));
        LedgerTransaction { sender: key.public_key(), nonce, command, signature }
    }

    pub fn signature_valid(&self) -> bool {
        crypto::verify(&self.sender, &signing_bytes(&self.sender, self.nonce, &self.command), &self.signature)
            .unwrap_or(false)
    }
}

fn signing_bytes(sender: &PublicKey, nonce: u64, command: &Command) -> Vec<u8> {
    crypto::to_canonical(&json!({"sender": sender, "nonce": nonce, "command": command}))
        .expect("transactions are canonicalizable")
}

/// Address of a contract deployed by `deployer` in the transaction with `nonce`.
pub fn contract_address(deployer: &PublicKey, nonce: u64) -> Digest {
    crypto::hash_canonical(&json!({"deployer": deployer, "nonce": nonce})).expect("address body is canonicalizable")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCode {
    NotAuthorized,
    AlreadySpent,
    DuplicateToken,
    BadCount,
    UnknownContract,
    MalformedKey,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::NotAuthorized => "not-authorized",
            ErrorCode::AlreadySpent => "already-spent",
            ErrorCode::DuplicateToken => "duplicate-token",
            ErrorCode::BadCount => "bad-count",
            ErrorCode::UnknownContract => "unknown-contract",
            ErrorCode::MalformedKey => "malformed-key",
        }
    }

    pub fn message(self) -> &'static str {
        match self {
            ErrorCode::NotAuthorized => NOT_ADMIN_MESSAGE,
            ErrorCode::AlreadySpent => ALREADY_SPENT_MESSAGE,
            ErrorCode::DuplicateToken => "Prescription already exists",
            ErrorCode::BadCount => "Count must be at least 1",
            ErrorCode::UnknownContract => "Unknown contract",
            ErrorCode::MalformedKey => "Malformed public key",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReceiptStatus {
    Ok,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerReceipt {
    pub height: u64,
    pub status: ReceiptStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_code: Option<ErrorCode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remaining_redemptions: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contract_address: Option<Digest>,
}

impl LedgerReceipt {
    pub fn ok(height: u64) -> Self {
        LedgerReceipt {
            height,
            status: ReceiptStatus::Ok,
            error_code: None,
            error_message: None,
            remaining_redemptions: None,
            contract_address: None,
        }
    }

    pub fn rejected(height: u64, code: ErrorCode) -> Self {
        LedgerReceipt {
            height,
            status: ReceiptStatus::Rejected,
            error_code: Some(code),
            error_message: Some(code.message().to_string()),
            remaining_redemptions: None,
            contract_address: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ReceiptStatus::Ok
    }
}

/// Rejections that happen before a transaction is assigned a height.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SubmitError {
    #[error("transaction signature does not verify")]
    BadSignature,
    #[error("stale nonce {got}: last accepted is {last}")]
    StaleNonce { got: u64, last: u64 },
    #[error("ledger is shut down")]
    Closed,
    #[error("gave up after {0} stale-nonce retries")]
    Contention(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrescriptionToken {
    pub issuer: PublicKey,
    pub remaining_redemptions: u64,
}

/// One line of the ledger log: `{height, tx, receipt}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub height: u64,
    pub tx: LedgerTransaction,
    pub receipt: LedgerReceipt,
}

impl LogEntry {
    pub fn to_line(&self) -> Vec<u8> {
        crypto::to_canonical(self).expect("log entries are canonicalizable")
    }
}
