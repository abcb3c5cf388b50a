use std::collections::BTreeMap;
use std::sync::Arc;

use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::protocol::{Channels, Inbound, Invitation, MessageType, Outgoing, ProtocolError};
use super::*;
use crate::credentials::{
    e_prescription_schema, Issuer, CONTRACT_ADDRESS, PATIENT_NAME, PHARMACEUTICAL, QUANTITY, SPENDING_KEY,
};
use crate::crypto::{self, KeyPair};
use crate::ledger::{Command, Ledger};
use crate::registry::{CredentialDefinition, DidDocument, Registry, Role};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Onboarding {
    pub did: Did,
    pub creddef_id: Digest,
    pub contract_address: Digest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum IssuanceState {
    OfferSent,
    Issued,
    Declined,
    Revoked,
}

impl IssuanceState {
    fn name(self) -> &'static str {
        match self {
            IssuanceState::OfferSent => "offer-sent",
            IssuanceState::Issued => "issued",
            IssuanceState::Declined => "declined",
            IssuanceState::Revoked => "revoked",
        }
    }
}

struct Issuance {
    session_id: String,
    state: IssuanceState,
    prescription_key: KeyPair,
    values: BTreeMap<String, String>,
    holder_pk: Option<PublicKey>,
    credential_index: Option<u64>,
}

/// Issuer of e-prescriptions and creator of their ledger tokens.
pub struct Doctor {
    pub name: String,
    endpoint: String,
    rng: ChaCha20Rng,
    key: KeyPair,
    registry: Arc<Registry>,
    ledger: Ledger,
    onboarding: Option<Onboarding>,
    issuer: Option<Issuer>,
    channels: Channels,
    threads: BTreeMap<String, Issuance>,
    events: Vec<AgentEvent>,
}

impl Doctor {
    pub fn new(name: &str, endpoint: &str, mut rng: ChaCha20Rng, registry: Arc<Registry>, ledger: Ledger) -> Self {
        let key = KeyPair::generate(&mut rng);
        Doctor {
            name: name.to_string(),
            endpoint: endpoint.to_string(),
            rng,
            key,
            registry,
            ledger,
            onboarding: None,
            issuer: None,
            channels: Channels::new(),
            threads: BTreeMap::new(),
            events: Vec::new(),
        }
    }

    pub fn public_key(&self) -> PublicKey {
        self.key.public_key()
    }

    pub fn onboarding(&self) -> Option<&Onboarding> {
        self.onboarding.as_ref()
    }

    pub fn drain_events(&mut self) -> Vec<AgentEvent> {
        std::mem::take(&mut self.events)
    }

    /// Register a fresh public DID and credential definition, then deploy
    /// a prescription contract. Each call starts an independent identity.
    pub fn onboard(&mut self) -> Result<Onboarding, AgentError> {
        // Refuse up front so an unreachable registry leaves nothing behind.
        if !self.registry.is_available() {
            return Err(AgentError::Onboarding(RegistryError::Unavailable));
        }
        let schema = e_prescription_schema();
        self.registry.register_schema(schema.clone()).map_err(AgentError::Onboarding)?;
        let doc = DidDocument {
            did: Did::generate(&mut self.rng),
            verification_key: self.key.public_key(),
            service_endpoint: self.endpoint.clone(),
            role: Role::Doctor,
        };
        let did = self.registry.register_did(doc.clone(), doc.prove(&self.key)).map_err(AgentError::Onboarding)?;
        let creddef = CredentialDefinition::new(schema.schema_id, did.clone(), self.key.public_key());
        let creddef_id =
            self.registry.register_creddef(creddef.clone(), creddef.prove(&self.key)).map_err(AgentError::Onboarding)?;
        let receipt = self.ledger.submit_command(&self.key, Command::Deploy)?;
        self.events.push(AgentEvent::LedgerReceipt { command: "deploy", receipt: receipt.clone() });
        let contract_address = match receipt.contract_address {
            Some(address) if receipt.is_ok() => address,
            _ => return Err(AgentError::LedgerRejected { command: "deploy", receipt }),
        };
        let onboarding = Onboarding { did, creddef_id, contract_address };
        self.issuer = Some(Issuer::new(self.key.clone(), creddef, schema));
        self.onboarding = Some(onboarding.clone());
        self.events.push(AgentEvent::Onboarded { onboarding: onboarding.clone() });
        Ok(onboarding)
    }

    pub fn invite(&mut self) -> Result<Invitation, AgentError> {
        let did = self.onboarding.as_ref().ok_or(AgentError::NotOnboarded)?.did.clone();
        Ok(self.channels.invite(&self.key, &did, &self.endpoint, &mut self.rng))
    }

    /// Create the token for a fresh one-time key, then offer the matching
    /// credential. Nothing is sent if the ledger refuses the token.
    pub fn prescribe(
        &mut self,
        session_id: &str,
        values: &BTreeMap<String, String>,
        count: u64,
    ) -> Result<(String, Outgoing), AgentError> {
        let onboarding = self.onboarding.clone().ok_or(AgentError::NotOnboarded)?;
        if count == 0 {
            return Err(AgentError::BadCount);
        }
        for name in values.keys() {
            if ![PATIENT_NAME, PHARMACEUTICAL, QUANTITY].contains(&name.as_str()) {
                return Err(CredentialError::UnknownAttribute(name.clone()).into());
            }
        }
        if !self.channels.connection(session_id).is_some_and(|c| c.is_established()) {
            return Err(ProtocolError::UnknownSession(session_id.to_string()).into());
        }

        let prescription_key = KeyPair::generate(&mut self.rng);
        let create = Command::Create {
            contract_address: onboarding.contract_address,
            patient_pk: prescription_key.public_key(),
            count,
        };
        let receipt = self.ledger.submit_command(&self.key, create)?;
        self.events.push(AgentEvent::LedgerReceipt { command: "create", receipt: receipt.clone() });
        if !receipt.is_ok() {
            return Err(AgentError::LedgerRejected { command: "create", receipt });
        }

        let thread = new_thread(&mut self.rng);
        let issuer = self.issuer.as_ref().expect("onboarded doctors have an issuer");
        let offer = CredentialOffer {
            thread: thread.clone(),
            creddef_id: onboarding.creddef_id,
            schema_id: issuer.schema().schema_id,
            preview: values.clone(),
            count,
        };
        let out = self.channels.seal(session_id, MessageType::CredentialOffer, to_body(&offer))?;
        let mut values = values.clone();
        values.insert(CONTRACT_ADDRESS.into(), onboarding.contract_address.to_b64());
        values.insert(SPENDING_KEY.into(), crypto::b64(prescription_key.secret_bytes()));
        self.threads.insert(
            thread.clone(),
            Issuance {
                session_id: session_id.to_string(),
                state: IssuanceState::OfferSent,
                prescription_key,
                values,
                holder_pk: None,
                credential_index: None,
            },
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
            Inbound::Message { session_id, kind: MessageType::CredentialRequest, body } => {
                self.on_request(&session_id, from_body(body)?)
            }
            Inbound::Message { kind, .. } => Err(ProtocolError::Unexpected { got: kind, state: "doctor" }.into()),
            Inbound::Established { .. } => {
                Err(ProtocolError::Unexpected { got: MessageType::ConnectAck, state: "doctor" }.into())
            }
        }
    }

    fn on_request(&mut self, session_id: &str, request: CredentialRequest) -> Result<Vec<Outgoing>, AgentError> {
        let thread = self
            .threads
            .get_mut(&request.thread)
            .filter(|t| t.session_id == session_id)
            .ok_or_else(|| ProtocolError::UnknownThread(request.thread.clone()))?;
        if thread.state != IssuanceState::OfferSent {
            return Err(ProtocolError::Unexpected { got: MessageType::CredentialRequest, state: thread.state.name() }.into());
        }
        let holder_pk = match (request.decision, request.holder_binding_pk) {
            (Decision::Decline, _) => {
                // The token stays live; revoking it is the doctor's call.
                thread.state = IssuanceState::Declined;
                self.events.push(AgentEvent::OfferDeclined { thread: request.thread });
                return Ok(Vec::new());
            }
            (Decision::Accept, Some(pk)) => pk,
            (Decision::Accept, None) => return Err(ProtocolError::Malformed("accept without holder key".into()).into()),
        };
        thread.holder_pk = Some(holder_pk);
        self.issue_on(&request.thread)
    }

    fn issue_on(&mut self, thread_id: &str) -> Result<Vec<Outgoing>, AgentError> {
        let issuer = self.issuer.as_mut().ok_or(AgentError::NotOnboarded)?;
        let thread = self.threads.get_mut(thread_id).ok_or_else(|| ProtocolError::UnknownThread(thread_id.into()))?;
        let holder_pk = thread.holder_pk.expect("holder key recorded before issuing");
        let index = issuer.next_index();
        let credential = issuer.issue(&thread.values, holder_pk, index, &mut self.rng)?;
        thread.state = IssuanceState::Issued;
        thread.credential_index = Some(index);
        let session_id = thread.session_id.clone();
        self.events.push(AgentEvent::CredentialIssued { thread: thread_id.to_string(), credential_index: index });
        let body = to_body(&CredentialIssue { thread: thread_id.to_string(), credential });
        Ok(vec![self.channels.seal(&session_id, MessageType::CredentialIssue, body)?])
    }

    /// Revoke the credential issued on `thread`; returns the new epoch.
    pub fn revoke(&mut self, thread_id: &str) -> Result<u64, AgentError> {
        let issuer = self.issuer.as_ref().ok_or(AgentError::NotOnboarded)?;
        let thread = self.threads.get_mut(thread_id).ok_or_else(|| ProtocolError::UnknownThread(thread_id.into()))?;
        let index = thread
            .credential_index
            .filter(|_| thread.state == IssuanceState::Issued)
            .ok_or(ProtocolError::Unexpected { got: MessageType::CredentialIssue, state: thread.state.name() })?;
        let epoch = issuer.revoke(&self.registry, &[index])?;
        thread.state = IssuanceState::Revoked;
        self.events.push(AgentEvent::Revoked { thread: thread_id.to_string(), credential_index: index, epoch });
        Ok(epoch)
    }

    /// Delivery of the credential on `thread` failed: revoke it and issue
    /// a replacement under a new index, backed by the same token.
    pub fn reissue(&mut self, thread_id: &str) -> Result<Vec<Outgoing>, AgentError> {
        self.revoke(thread_id)?;
        self.issue_on(thread_id)
    }

    /// Submit a create on an arbitrary contract with the doctor's ledger
    /// key. Only meaningful for contracts this doctor may issue on.
    pub fn create_on(&mut self, contract_address: Digest, patient_pk: PublicKey, count: u64) -> Result<LedgerReceipt, AgentError> {
        let receipt = self.ledger.submit_command(&self.key, Command::Create { contract_address, patient_pk, count })?;
        self.events.push(AgentEvent::LedgerReceipt { command: "create", receipt: receipt.clone() });
        Ok(receipt)
    }

    pub fn credential_index(&self, thread_id: &str) -> Option<u64> {
        self.threads.get(thread_id)?.credential_index
    }

    pub fn prescription_key(&self, thread_id: &str) -> Option<PublicKey> {
        Some(self.threads.get(thread_id)?.prescription_key.public_key())
    }
}
