use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::protocol::{Channels, Inbound, Invitation, MessageType, Outgoing, ProtocolError};
use super::*;
use crate::credentials::{
    verify_presentation, FailureReason, Presentation, VerificationPolicy, CONTRACT_ADDRESS, PATIENT_NAME,
    PHARMACEUTICAL, QUANTITY, SPENDING_KEY,
};
use crate::crypto::KeyPair;
use crate::ledger::{Command, ErrorCode, Ledger};
use crate::registry::{CachedView, DidDocument, Registry, RegistryLookup, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CreddefLookup {
    /// Every verification reads the registry.
    Live,
    /// DIDs, schemas and credential definitions are cached after first
    /// use; revocation state is always read live.
    Cached,
}

#[derive(Debug, Clone)]
pub struct PharmacyConfig {
    pub trusted_issuer_dids: BTreeSet<Did>,
    pub request_patient_name: bool,
    pub lookup: CreddefLookup,
    pub max_epoch_lag: u64,
    /// Redemption records are appended here as JSON lines when set.
    pub records_path: Option<PathBuf>,
}

impl Default for PharmacyConfig {
    fn default() -> Self {
        PharmacyConfig {
            trusted_issuer_dids: BTreeSet::new(),
            request_patient_name: false,
            lookup: CreddefLookup::Live,
            max_epoch_lag: 0,
            records_path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DispenseStatus {
    DispenseApproved,
    DispenseRejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedemptionResult {
    pub status: DispenseStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remaining_redemptions: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pharmaceutical: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantity: Option<String>,
}

impl RedemptionResult {
    pub fn rejected(reason: &str, message: Option<&str>) -> Self {
        RedemptionResult {
            status: DispenseStatus::DispenseRejected,
            reason: Some(reason.to_string()),
            message: message.map(str::to_string),
            remaining_redemptions: None,
            pharmaceutical: None,
            quantity: None,
        }
    }

    pub fn approved(&self) -> bool {
        self.status == DispenseStatus::DispenseApproved
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedemptionRecord {
    pub seq: u64,
    pub thread: String,
    pub creddef_id: Option<Digest>,
    pub credential_index: Option<u64>,
    pub contract_address: Option<String>,
    pub ledger_height: Option<u64>,
    pub result: RedemptionResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ProofState {
    Requested,
    Done,
}

struct ProofThread {
    session_id: String,
    state: ProofState,
    request: ProofRequest,
}

/// Verifier and token spender.
pub struct Pharmacy {
    pub name: String,
    endpoint: String,
    rng: ChaCha20Rng,
    key: KeyPair,
    did: Option<Did>,
    registry: Arc<Registry>,
    cache: CachedView,
    ledger: Ledger,
    config: PharmacyConfig,
    channels: Channels,
    threads: BTreeMap<String, ProofThread>,
    records: Vec<RedemptionRecord>,
    events: Vec<AgentEvent>,
}

impl Pharmacy {
    pub fn new(
        name: &str,
        endpoint: &str,
        mut rng: ChaCha20Rng,
        registry: Arc<Registry>,
        ledger: Ledger,
        config: PharmacyConfig,
    ) -> Self {
        let key = KeyPair::generate(&mut rng);
        Pharmacy {
            name: name.to_string(),
            endpoint: endpoint.to_string(),
            rng,
            key,
            did: None,
            cache: CachedView::new(registry.clone()),
            registry,
            ledger,
            config,
            channels: Channels::new(),
            threads: BTreeMap::new(),
            records: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn did(&self) -> Option<&Did> {
        self.did.as_ref()
    }

    pub fn trust(&mut self, issuer: Did) {
        self.config.trusted_issuer_dids.insert(issuer);
    }

    pub fn records(&self) -> &[RedemptionRecord] {
        &self.records
    }

    pub fn drain_events(&mut self) -> Vec<AgentEvent> {
        std::mem::take(&mut self.events)
    }

    /// Register the pharmacy's public DID.
    pub fn onboard(&mut self) -> Result<Did, AgentError> {
        let doc = DidDocument {
            did: Did::generate(&mut self.rng),
            verification_key: self.key.public_key(),
            service_endpoint: self.endpoint.clone(),
            role: Role::Pharmacy,
        };
        let did = self.registry.register_did(doc.clone(), doc.prove(&self.key))?;
        self.did = Some(did.clone());
        Ok(did)
    }

    pub fn invite(&mut self) -> Result<Invitation, AgentError> {
        let did = self.did.clone().ok_or(AgentError::NotOnboarded)?;
        Ok(self.channels.invite(&self.key, &did, &self.endpoint, &mut self.rng))
    }

    /// Ask the patient on `session_id` for an e-prescription.
    pub fn request_redemption(&mut self, session_id: &str) -> Result<(String, Outgoing), AgentError> {
        let mut names = vec![PHARMACEUTICAL, QUANTITY, CONTRACT_ADDRESS, SPENDING_KEY];
        if self.config.request_patient_name {
            names.push(PATIENT_NAME);
        }
        let request = ProofRequest::new(&names, BTreeSet::new(), true, &mut self.rng);
        let thread = new_thread(&mut self.rng);
        let message = ProofRequestMessage { thread: thread.clone(), request: request.clone() };
        let out = self.channels.seal(session_id, MessageType::ProofRequest, to_body(&message))?;
        self.threads.insert(
            thread.clone(),
            ProofThread { session_id: session_id.to_string(), state: ProofState::Requested, request },
        );
        Ok((thread, out))
    }

    pub fn handle(&mut self, frame: &[u8]) -> Result<Vec<Outgoing>, AgentError> {
        let (inbound, reply) = self.channels.receive(frame)?;
        match inbound {
            Inbound::Connected { session_id, their_did } => {
                self.events.push(AgentEvent::Connected { session_id, their_did });
                Ok(reply.into_iter().collect())
            }
            Inbound::Message { session_id, kind: MessageType::Presentation, body } => {
                self.on_presentation(&session_id, from_body(body)?)
            }
            Inbound::Message { kind, .. } => Err(ProtocolError::Unexpected { got: kind, state: "pharmacy" }.into()),
            Inbound::Established { .. } => {
                Err(ProtocolError::Unexpected { got: MessageType::ConnectAck, state: "pharmacy" }.into())
            }
        }
    }

    fn on_presentation(&mut self, session_id: &str, message: PresentationMessage) -> Result<Vec<Outgoing>, AgentError> {
        let thread = self
            .threads
            .get_mut(&message.thread)
            .filter(|t| t.session_id == session_id)
            .ok_or_else(|| ProtocolError::UnknownThread(message.thread.clone()))?;
        if thread.state != ProofState::Requested {
            return Err(ProtocolError::Unexpected { got: MessageType::Presentation, state: "answered" }.into());
        }
        thread.state = ProofState::Done;
        let result = match (message.decision, message.presentation) {
            (Decision::Accept, Some(p)) => self.redeem(&message.thread, &p),
            (Decision::Accept, None) => {
                self.finish(&message.thread, None, None, RedemptionResult::rejected(FailureReason::Malformed.as_str(), None))
            }
            (Decision::Decline, _) => self.finish(&message.thread, None, None, RedemptionResult::rejected("user-declined", None)),
        };
        let body = to_body(&RedemptionResultMessage { thread: message.thread, result });
        Ok(vec![self.channels.seal(session_id, MessageType::RedemptionResult, body)?])
    }

    fn policy(&self) -> VerificationPolicy {
        VerificationPolicy {
            trusted_issuer_dids: self.config.trusted_issuer_dids.clone(),
            require_non_revocation: true,
            min_epoch: None,
            max_epoch_lag: self.config.max_epoch_lag,
        }
    }

    /// Verify, then spend the token with the disclosed one-time key.
    /// Verification failures never reach the ledger.
    pub fn redeem(&mut self, thread: &str, presentation: &Presentation) -> RedemptionResult {
        let Some(request) = self.threads.get(thread).map(|t| t.request.clone()) else {
            return RedemptionResult::rejected("unknown-request", None);
        };
        let policy = self.policy();
        let lookup: &dyn RegistryLookup = match self.config.lookup {
            CreddefLookup::Live => &*self.registry,
            CreddefLookup::Cached => &self.cache,
        };
        let report = verify_presentation(presentation, lookup, &request, &policy);
        self.events.push(AgentEvent::Verification { thread: thread.to_string(), report: report.clone() });
        let meta = Some((presentation.creddef_id, presentation.credential_index));
        if !report.valid {
            let reason = report.failure_reason.unwrap_or(FailureReason::Malformed);
            return self.finish(thread, meta, None, RedemptionResult::rejected(reason.as_str(), None));
        }

        let (Some(contract), Some(secret)) = (report.disclosed.get(CONTRACT_ADDRESS), report.disclosed.get(SPENDING_KEY))
        else {
            return self.finish(thread, meta, None, RedemptionResult::rejected("missing-spending-key", None));
        };
        let (Ok(contract_address), Ok(seed)) = (Digest::from_b64(contract), crypto::unb64(secret)) else {
            return self.finish(thread, meta, None, RedemptionResult::rejected("malformed-spending-key", None));
        };
        let Ok(seed) = <[u8; 32]>::try_from(seed.as_slice()) else {
            return self.finish(thread, meta, None, RedemptionResult::rejected("malformed-spending-key", None));
        };
        let prescription_key = KeyPair::from_seed(seed);

        let receipt = match self.ledger.submit_command(&prescription_key, Command::Spend { contract_address }) {
            Ok(receipt) => receipt,
            Err(e) => return self.finish(thread, meta, None, RedemptionResult::rejected("ledger-unavailable", Some(&e.to_string()))),
        };
        self.events.push(AgentEvent::LedgerReceipt { command: "spend", receipt: receipt.clone() });
        let result = if receipt.is_ok() {
            RedemptionResult {
                status: DispenseStatus::DispenseApproved,
                reason: None,
                message: None,
                remaining_redemptions: receipt.remaining_redemptions,
                pharmaceutical: report.disclosed.get(PHARMACEUTICAL).cloned(),
                quantity: report.disclosed.get(QUANTITY).cloned(),
            }
        } else if receipt.error_code == Some(ErrorCode::AlreadySpent) {
            RedemptionResult::rejected("double-spend", receipt.error_message.as_deref())
        } else {
            let code = receipt.error_code.map_or("ledger-rejected", |c| c.as_str());
            RedemptionResult::rejected(code, receipt.error_message.as_deref())
        };
        let contract = contract.clone();
        self.finish_with_contract(thread, meta, Some(receipt.height), Some(contract), result)
    }

    fn finish(&mut self, thread: &str, meta: Option<(Digest, u64)>, height: Option<u64>, result: RedemptionResult) -> RedemptionResult {
        self.finish_with_contract(thread, meta, height, None, result)
    }

    fn finish_with_contract(
        &mut self,
        thread: &str,
        meta: Option<(Digest, u64)>,
        ledger_height: Option<u64>,
        contract_address: Option<String>,
        result: RedemptionResult,
    ) -> RedemptionResult {
        let record = RedemptionRecord {
            seq: self.records.len() as u64,
            thread: thread.to_string(),
            creddef_id: meta.map(|m| m.0),
            credential_index: meta.map(|m| m.1),
            contract_address,
            ledger_height,
            result: result.clone(),
        };
        if let Some(path) = &self.config.records_path {
            let line = crypto::to_canonical(&record).expect("records are canonicalizable");
            let written = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| f.write_all(&[line.as_slice(), b"\n"].concat()));
            if let Err(e) = written {
                eprintln!("redemption record not persisted: {e}");
            }
        }
        self.records.push(record);
        self.events.push(AgentEvent::Redemption { thread: thread.to_string(), result: result.clone() });
        result
    }
}
