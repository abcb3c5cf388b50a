use std::collections::BTreeMap;
use std::sync::Arc;

use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use serde_json::{json, Value};

use super::protocol::{Channels, Inbound, Invitation, MessageType, Outgoing, ProtocolError};
use super::*;
use crate::credentials::{present, Credential, Presentation, ProofRequest};
use crate::crypto::KeyPair;
use crate::registry::{Registry, RegistryLookup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivityKind {
    ConnectionEstablished,
    OfferAccepted,
    OfferDeclined,
    CredentialStored,
    AttributesShared,
    PresentationDeclined,
    RedemptionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActivityEntry {
    pub seq: u64,
    pub kind: ActivityKind,
    pub counterparty: Did,
    pub detail: Value,
}

#[derive(Debug, Clone)]
pub struct StoredCredential {
    pub credential: Credential,
    /// Per-credential holder binding key.
    holder_key: KeyPair,
    pub issuer_did: Did,
}

/// Credentials held, plus an append-only record of what was shared with
/// whom.
#[derive(Debug, Default)]
pub struct WalletStore {
    credentials: BTreeMap<String, StoredCredential>,
    activity: Vec<ActivityEntry>,
}

impl WalletStore {
    pub fn credentials(&self) -> &BTreeMap<String, StoredCredential> {
        &self.credentials
    }

    pub fn activity(&self) -> &[ActivityEntry] {
        &self.activity
    }

    fn record(&mut self, kind: ActivityKind, counterparty: &Did, detail: Value) {
        let seq = self.activity.len() as u64;
        self.activity.push(ActivityEntry { seq, kind, counterparty: counterparty.clone(), detail });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OfferState {
    Received,
    Requested,
    Stored,
    Declined,
}

struct OfferThread {
    session_id: String,
    state: OfferState,
    offer: CredentialOffer,
    holder_key: Option<KeyPair>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ProofState {
    Received,
    Sent,
    Declined,
    Done,
}

struct ProofThread {
    session_id: String,
    state: ProofState,
    request: ProofRequest,
}

fn unexpected(got: MessageType, state: &'static str) -> AgentError {
    ProtocolError::Unexpected { got, state }.into()
}

/// Holder wallet.
pub struct Patient {
    pub name: String,
    endpoint: String,
    rng: ChaCha20Rng,
    registry: Arc<Registry>,
    channels: Channels,
    wallet: WalletStore,
    offers: BTreeMap<String, OfferThread>,
    proofs: BTreeMap<String, ProofThread>,
    events: Vec<AgentEvent>,
}

impl Patient {
    pub fn new(name: &str, endpoint: &str, rng: ChaCha20Rng, registry: Arc<Registry>) -> Self {
        Patient {
            name: name.to_string(),
            endpoint: endpoint.to_string(),
            rng,
            registry,
            channels: Channels::new(),
            wallet: WalletStore::default(),
            offers: BTreeMap::new(),
            proofs: BTreeMap::new(),
            events: Vec::new(),
        }
    }

    pub fn wallet(&self) -> &WalletStore {
        &self.wallet
    }

    pub fn channels(&self) -> &Channels {
        &self.channels
    }

    pub fn drain_events(&mut self) -> Vec<AgentEvent> {
        std::mem::take(&mut self.events)
    }

    /// Connect under a fresh pairwise DID. Returns the connect frame; the
    /// session is usable once the ack arrives.
    pub fn accept_invitation(&mut self, invitation: &Invitation) -> Result<Outgoing, AgentError> {
        Ok(self.channels.accept(invitation, &self.endpoint, &mut self.rng)?)
    }

    fn counterparty(&self, session_id: &str) -> Did {
        self.channels.connection(session_id).expect("threads belong to known sessions").their_did.clone()
    }

    pub fn handle(&mut self, frame: &[u8]) -> Result<Vec<Outgoing>, AgentError> {
        let (inbound, _) = self.channels.receive(frame)?;
        match inbound {
            Inbound::Established { session_id } => {
                let their_did = self.counterparty(&session_id);
                self.wallet.record(ActivityKind::ConnectionEstablished, &their_did, json!({"session_id": session_id}));
                self.events.push(AgentEvent::Connected { session_id, their_did });
                Ok(Vec::new())
            }
            Inbound::Connected { .. } => Err(unexpected(MessageType::Connect, "wallet")),
            Inbound::Message { session_id, kind, body } => match kind {
                MessageType::CredentialOffer => self.on_offer(&session_id, from_body(body)?),
                MessageType::CredentialIssue => self.on_issue(&session_id, from_body(body)?),
                MessageType::ProofRequest => self.on_proof_request(&session_id, from_body(body)?),
                MessageType::RedemptionResult => self.on_result(&session_id, from_body(body)?),
                other => Err(unexpected(other, "wallet")),
            },
        }
    }

    fn on_offer(&mut self, session_id: &str, offer: CredentialOffer) -> Result<Vec<Outgoing>, AgentError> {
        if self.offers.contains_key(&offer.thread) {
            return Err(unexpected(MessageType::CredentialOffer, "offer-known"));
        }
        self.events.push(AgentEvent::OfferPending {
            thread: offer.thread.clone(),
            preview: offer.preview.clone(),
            count: offer.count,
        });
        self.offers.insert(
            offer.thread.clone(),
            OfferThread { session_id: session_id.to_string(), state: OfferState::Received, offer, holder_key: None },
        );
        Ok(Vec::new())
    }

    fn pending_offer(&mut self, thread: &str) -> Result<&mut OfferThread, AgentError> {
        let offer = self.offers.get_mut(thread).ok_or_else(|| ProtocolError::UnknownThread(thread.to_string()))?;
        if offer.state != OfferState::Received {
            return Err(unexpected(MessageType::CredentialRequest, "offer-answered"));
        }
        Ok(offer)
    }

    /// Consent to an offer: bind it to a fresh holder key and request it.
    pub fn accept_offer(&mut self, thread: &str) -> Result<Outgoing, AgentError> {
        let holder_key = KeyPair::generate(&mut self.rng);
        let offer = self.pending_offer(thread)?;
        let request = CredentialRequest {
            thread: thread.to_string(),
            decision: Decision::Accept,
            holder_binding_pk: Some(holder_key.public_key()),
        };
        offer.state = OfferState::Requested;
        offer.holder_key = Some(holder_key);
        let (session_id, preview) = (offer.session_id.clone(), offer.offer.preview.clone());
        let their_did = self.counterparty(&session_id);
        self.wallet.record(ActivityKind::OfferAccepted, &their_did, json!({"thread": thread, "preview": preview}));
        Ok(self.channels.seal(&session_id, MessageType::CredentialRequest, to_body(&request))?)
    }

    pub fn decline_offer(&mut self, thread: &str) -> Result<Outgoing, AgentError> {
        let offer = self.pending_offer(thread)?;
        offer.state = OfferState::Declined;
        let session_id = offer.session_id.clone();
        let their_did = self.counterparty(&session_id);
        self.wallet.record(ActivityKind::OfferDeclined, &their_did, json!({"thread": thread}));
        let request = CredentialRequest { thread: thread.to_string(), decision: Decision::Decline, holder_binding_pk: None };
        Ok(self.channels.seal(&session_id, MessageType::CredentialRequest, to_body(&request))?)
    }

    fn on_issue(&mut self, session_id: &str, issue: CredentialIssue) -> Result<Vec<Outgoing>, AgentError> {
        let thread = self
            .offers
            .get_mut(&issue.thread)
            .filter(|t| t.session_id == session_id)
            .ok_or_else(|| ProtocolError::UnknownThread(issue.thread.clone()))?;
        // A re-issue after failed delivery replaces a stored credential.
        if !matches!(thread.state, OfferState::Requested | OfferState::Stored) {
            return Err(unexpected(MessageType::CredentialIssue, "no-request"));
        }
        let credential = issue.credential;
        if credential.creddef_id != thread.offer.creddef_id {
            return Err(CredentialError::Invalid("credential does not match the offer").into());
        }
        let holder_key = thread.holder_key.clone().expect("requested offers carry a holder key");
        if credential.holder_binding_pk != holder_key.public_key() {
            return Err(CredentialError::WrongHolderKey.into());
        }
        let creddef = self.registry.creddef(&credential.creddef_id)?;
        let schema = self.registry.schema(&creddef.schema_id)?;
        credential.verify(&creddef, &schema)?;
        thread.state = OfferState::Stored;
        let index = credential.credential_index;
        self.wallet.record(
            ActivityKind::CredentialStored,
            &creddef.issuer_did,
            json!({"thread": issue.thread, "credential_index": index}),
        );
        self.wallet.credentials.insert(
            issue.thread.clone(),
            StoredCredential { credential, holder_key, issuer_did: creddef.issuer_did.clone() },
        );
        self.events.push(AgentEvent::CredentialStored { thread: issue.thread, credential_index: index });
        Ok(Vec::new())
    }

    fn on_proof_request(&mut self, session_id: &str, message: ProofRequestMessage) -> Result<Vec<Outgoing>, AgentError> {
        if self.proofs.contains_key(&message.thread) {
            return Err(unexpected(MessageType::ProofRequest, "request-known"));
        }
        self.events.push(AgentEvent::ProofRequestPending {
            thread: message.thread.clone(),
            requested: message.request.names_to_disclose().into_iter().collect(),
        });
        self.proofs.insert(
            message.thread,
            ProofThread { session_id: session_id.to_string(), state: ProofState::Received, request: message.request },
        );
        Ok(Vec::new())
    }

    fn on_result(&mut self, session_id: &str, message: RedemptionResultMessage) -> Result<Vec<Outgoing>, AgentError> {
        let thread = self
            .proofs
            .get_mut(&message.thread)
            .filter(|t| t.session_id == session_id)
            .ok_or_else(|| ProtocolError::UnknownThread(message.thread.clone()))?;
        if !matches!(thread.state, ProofState::Sent | ProofState::Declined) {
            return Err(unexpected(MessageType::RedemptionResult, "no-presentation"));
        }
        thread.state = ProofState::Done;
        let their_did = self.counterparty(session_id);
        self.wallet.record(ActivityKind::RedemptionResult, &their_did, to_body(&message.result));
        self.events.push(AgentEvent::Redemption { thread: message.thread, result: message.result });
        Ok(Vec::new())
    }

    pub fn proof_request(&self, thread: &str) -> Option<&ProofRequest> {
        self.proofs.get(thread).map(|t| &t.request)
    }

    /// Stored credentials that can answer the request on `thread`.
    pub fn matching_credentials(&self, thread: &str) -> Vec<String> {
        let Some(proof) = self.proofs.get(thread) else { return Vec::new() };
        let names = proof.request.names_to_disclose();
        self.wallet
            .credentials
            .iter()
            .filter(|(_, c)| {
                (proof.request.accepted_creddef_ids.is_empty()
                    || proof.request.accepted_creddef_ids.contains(&c.credential.creddef_id))
                    && names.iter().all(|n| c.credential.value(n).is_some())
            })
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Build (but do not send) the presentation answering `thread` from
    /// the chosen credential.
    pub fn respond(&self, thread: &str, credential_id: &str) -> Result<Presentation, AgentError> {
        let proof = self.proofs.get(thread).ok_or_else(|| ProtocolError::UnknownThread(thread.to_string()))?;
        if proof.state != ProofState::Received {
            return Err(unexpected(MessageType::Presentation, "request-answered"));
        }
        if !self.matching_credentials(thread).iter().any(|c| c == credential_id) {
            return Err(AgentError::NoMatchingCredential);
        }
        let stored = &self.wallet.credentials[credential_id];
        Ok(present(&stored.credential, &stored.holder_key, &proof.request)?)
    }

    /// Like [`Patient::respond`], but keep `withheld` attributes closed even
    /// where the request asks for them.
    pub fn respond_withholding(&self, thread: &str, credential_id: &str, withheld: &[String]) -> Result<Presentation, AgentError> {
        let proof = self.proofs.get(thread).ok_or_else(|| ProtocolError::UnknownThread(thread.to_string()))?;
        let stored = self.wallet.credentials.get(credential_id).ok_or(AgentError::NoMatchingCredential)?;
        let mut request = proof.request.clone();
        request.requested_attribute_names.retain(|n| !withheld.contains(n));
        if withheld.iter().any(|n| n == crate::credentials::CREDENTIAL_INDEX) {
            request.require_non_revocation = false;
        }
        Ok(present(&stored.credential, &stored.holder_key, &request)?)
    }

    /// Send `presentation` on `thread`. The presentation is taken as given,
    /// which is also how tests inject tampered or replayed ones.
    pub fn send_presentation(&mut self, thread: &str, presentation: Presentation) -> Result<Outgoing, AgentError> {
        let proof = self.proofs.get_mut(thread).ok_or_else(|| ProtocolError::UnknownThread(thread.to_string()))?;
        if proof.state != ProofState::Received {
            return Err(unexpected(MessageType::Presentation, "request-answered"));
        }
        proof.state = ProofState::Sent;
        let session_id = proof.session_id.clone();
        let shared: Vec<&str> = presentation.disclosed.iter().map(|a| a.name.as_str()).collect();
        let their_did = self.counterparty(&session_id);
        self.wallet.record(ActivityKind::AttributesShared, &their_did, json!({"thread": thread, "attributes": shared}));
        let message = PresentationMessage { thread: thread.to_string(), decision: Decision::Accept, presentation: Some(presentation) };
        Ok(self.channels.seal(&session_id, MessageType::Presentation, to_body(&message))?)
    }

    /// Consent step: select `credential_id` and send the presentation.
    pub fn present(&mut self, thread: &str, credential_id: &str) -> Result<Outgoing, AgentError> {
        let presentation = self.respond(thread, credential_id)?;
        self.send_presentation(thread, presentation)
    }

    pub fn decline_proof(&mut self, thread: &str) -> Result<Outgoing, AgentError> {
        let proof = self.proofs.get_mut(thread).ok_or_else(|| ProtocolError::UnknownThread(thread.to_string()))?;
        if proof.state != ProofState::Received {
            return Err(unexpected(MessageType::Presentation, "request-answered"));
        }
        proof.state = ProofState::Declined;
        let session_id = proof.session_id.clone();
        let their_did = self.counterparty(&session_id);
        self.wallet.record(ActivityKind::PresentationDeclined, &their_did, json!({"thread": thread}));
        self.events.push(AgentEvent::PresentationDeclined { thread: thread.to_string() });
        let message = PresentationMessage { thread: thread.to_string(), decision: Decision::Decline, presentation: None };
        Ok(self.channels.seal(&session_id, MessageType::Presentation, to_body(&message))?)
    }
}
