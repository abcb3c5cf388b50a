//! Bilateral encrypted messaging: invitations, the signed ephemeral key
//! handshake, and sealed envelopes.

use std::collections::BTreeMap;
use std::fmt;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::crypto::{self, AgreementKey, EphemeralSecret, KeyPair, Nonce32, PublicKey, Signature};
use crate::registry::Did;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageType {
    Invite,
    Connect,
    ConnectAck,
    CredentialOffer,
    CredentialRequest,
    CredentialIssue,
    ProofRequest,
    Presentation,
    RedemptionResult,
}

impl MessageType {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageType::Invite => "invite",
            MessageType::Connect => "connect",
            MessageType::ConnectAck => "connect-ack",
            MessageType::CredentialOffer => "credential-offer",
            MessageType::CredentialRequest => "credential-request",
            MessageType::CredentialIssue => "credential-issue",
            MessageType::ProofRequest => "proof-request",
            MessageType::Presentation => "presentation",
            MessageType::RedemptionResult => "redemption-result",
        }
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("invitation signature invalid")]
    BadInvitation,
    #[error("handshake signature invalid")]
    BadHandshake,
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown thread {0}")]
    UnknownThread(String),
    #[error("sequence {got} already seen, expected at least {expected}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("ciphertext failed authentication")]
    Tamper,
    #[error("unexpected {got} in state {state}")]
    Unexpected { got: MessageType, state: &'static str },
}

/// Plaintext connection invitation, the payload a QR code would carry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Invitation {
    #[serde(rename = "type")]
    pub kind: MessageType,
    pub inviter_did: Did,
    pub inviter_pk: PublicKey,
    pub endpoint: String,
    pub invite_nonce: Nonce32,
    pub ephemeral_pk: AgreementKey,
    pub signature: Signature,
}

impl Invitation {
    fn signed_body(&self) -> Value {
        json!({
            "type": self.kind,
            "inviter_did": self.inviter_did,
            "inviter_pk": self.inviter_pk,
            "endpoint": self.endpoint,
            "invite_nonce": self.invite_nonce,
            "ephemeral_pk": self.ephemeral_pk,
        })
    }

    pub fn verify(&self) -> bool {
        self.kind == MessageType::Invite
            && crypto::verify_canonical(&self.inviter_pk, &self.signed_body(), &self.signature).unwrap_or(false)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        crypto::to_canonical(self).expect("invitation is canonicalizable")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProtocolError> {
        crypto::from_canonical(bytes).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }
}

/// Cleartext key-agreement half carried on the connect envelope only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Handshake {
    pub did: Did,
    pub pk: PublicKey,
    pub ephemeral_pk: AgreementKey,
    pub invite_nonce: Nonce32,
    pub connect_nonce: Nonce32,
    pub signature: Signature,
}

impl Handshake {
    fn signed_body(&self) -> Value {
        json!({
            "did": self.did,
            "pk": self.pk,
            "ephemeral_pk": self.ephemeral_pk,
            "invite_nonce": self.invite_nonce,
            "connect_nonce": self.connect_nonce,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    #[serde(rename = "type")]
    pub kind: MessageType,
    pub session_id: String,
    pub seq: u64,
    pub ciphertext: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handshake: Option<Handshake>,
}

impl Envelope {
    pub fn to_bytes(&self) -> Vec<u8> {
        crypto::to_canonical(self).expect("envelope is canonicalizable")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProtocolError> {
        crypto::from_canonical(bytes).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }

    fn aad(&self) -> Vec<u8> {
        crypto::canonical(&json!({"type": self.kind, "session_id": self.session_id, "seq": self.seq}))
            .expect("aad is canonicalizable")
    }
}

/// Symmetric channel secret. Not serializable, and redacted in debug output.
#[derive(Clone)]
pub struct ChannelKey([u8; 32]);

impl fmt::Debug for ChannelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ChannelKey(..)")
    }
}

fn channel_key(
    secret: &EphemeralSecret,
    their_ephemeral: &AgreementKey,
    invite_nonce: &Nonce32,
    connect_nonce: &Nonce32,
    inviter: &Did,
    invitee: &Did,
) -> ChannelKey {
    let mut salt = Vec::with_capacity(64);
    salt.extend_from_slice(&invite_nonce.0);
    salt.extend_from_slice(&connect_nonce.0);
    let info = format!("rxledger channel v1|{inviter}|{invitee}");
    ChannelKey(secret.derive_channel_key(their_ephemeral, &salt, info.as_bytes()))
}

fn session_id(invite_nonce: &Nonce32, connect_nonce: &Nonce32) -> String {
    let digest = crypto::hash_canonical(&json!([invite_nonce, connect_nonce])).expect("canonicalizable");
    crypto::b64(&digest.0[..16])
}

/// One end of an established (or, for the invitee, pending) channel.
#[derive(Debug)]
pub struct Connection {
    pub session_id: String,
    pub my_did: Did,
    pub their_did: Did,
    pub their_pk: PublicKey,
    pub their_endpoint: String,
    channel_key: ChannelKey,
    inviter: bool,
    established: bool,
    send_seq: u64,
    recv_seq: u64,
}

impl Connection {
    pub fn is_established(&self) -> bool {
        self.established
    }

    pub fn send_seq(&self) -> u64 {
        self.send_seq
    }

    pub fn recv_seq(&self) -> u64 {
        self.recv_seq
    }

    fn aead_nonce(from_inviter: bool, seq: u64) -> [u8; 12] {
        let mut nonce = [0u8; 12];
        nonce[0] = if from_inviter { 1 } else { 2 };
        nonce[4..].copy_from_slice(&seq.to_be_bytes());
        nonce
    }

    pub fn seal(&mut self, kind: MessageType, body: &Value) -> Envelope {
        let mut envelope =
            Envelope { kind, session_id: self.session_id.clone(), seq: self.send_seq, ciphertext: String::new(), handshake: None };
        let plaintext = crypto::canonical(body).expect("message bodies are canonicalizable");
        let sealed = crypto::seal_with_aad(
            &self.channel_key.0,
            &plaintext,
            &Self::aead_nonce(self.inviter, self.send_seq),
            &envelope.aad(),
        );
        envelope.ciphertext = crypto::b64(&sealed);
        self.send_seq += 1;
        envelope
    }

    /// Decrypt the next envelope. Sequence numbers must strictly increase:
    /// gaps from lost frames are tolerated, replays are refused before
    /// decryption.
    pub fn open(&mut self, envelope: &Envelope) -> Result<Value, ProtocolError> {
        if envelope.session_id != self.session_id {
            return Err(ProtocolError::UnknownSession(envelope.session_id.clone()));
        }
        if envelope.seq < self.recv_seq {
            return Err(ProtocolError::OutOfOrder { expected: self.recv_seq, got: envelope.seq });
        }
        let sealed = crypto::unb64(&envelope.ciphertext).map_err(|_| ProtocolError::Tamper)?;
        let plaintext = crypto::open_with_aad(
            &self.channel_key.0,
            &sealed,
            &Self::aead_nonce(!self.inviter, envelope.seq),
            &envelope.aad(),
        )
        .map_err(|_| ProtocolError::Tamper)?;
        let body = crypto::canonical_parse(&plaintext).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        self.recv_seq = envelope.seq + 1;
        Ok(body)
    }
}

/// A frame ready for the transport, with its plaintext kept for the
/// harness transcript.
#[derive(Debug, Clone)]
pub struct Outgoing {
    pub to: String,
    pub session_id: String,
    pub kind: MessageType,
    pub seq: u64,
    pub body: Value,
    pub frame: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Inbound {
    /// Inviter side: a connect arrived and was acknowledged.
    Connected { session_id: String, their_did: Did },
    /// Invitee side: the inviter acknowledged our connect.
    Established { session_id: String },
    Message { session_id: String, kind: MessageType, body: Value },
}

struct PendingInvite {
    secret: EphemeralSecret,
    invitation: Invitation,
}

/// Per-agent channel table: outstanding invitations and live connections.
#[derive(Default)]
pub struct Channels {
    invites: BTreeMap<Nonce32, PendingInvite>,
    connections: BTreeMap<String, Connection>,
}

impl Channels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn invite<R: RngCore + CryptoRng>(&mut self, key: &KeyPair, did: &Did, endpoint: &str, rng: &mut R) -> Invitation {
        let secret = EphemeralSecret::generate(rng);
        let mut invitation = Invitation {
            kind: MessageType::Invite,
            inviter_did: did.clone(),
            inviter_pk: key.public_key(),
            endpoint: endpoint.to_string(),
            invite_nonce: Nonce32(crypto::random_bytes(rng)),
            ephemeral_pk: secret.public(),
            signature: Signature([0; 64]),
        };
        invitation.signature = key.sign_canonical(&invitation.signed_body()).expect("canonicalizable");
        self.invites.insert(invitation.invite_nonce, PendingInvite { secret, invitation: invitation.clone() });
        invitation
    }

    /// Invitee side: derive the channel under a fresh pairwise DID and
    /// produce the connect envelope.
    pub fn accept<R: RngCore + CryptoRng>(
        &mut self,
        invitation: &Invitation,
        my_endpoint: &str,
        rng: &mut R,
    ) -> Result<Outgoing, ProtocolError> {
        if !invitation.verify() {
            return Err(ProtocolError::BadInvitation);
        }
        let pairwise = KeyPair::generate(rng);
        let my_did = Did::generate(rng);
        let secret = EphemeralSecret::generate(rng);
        let connect_nonce = Nonce32(crypto::random_bytes(rng));
        let mut handshake = Handshake {
            did: my_did.clone(),
            pk: pairwise.public_key(),
            ephemeral_pk: secret.public(),
            invite_nonce: invitation.invite_nonce,
            connect_nonce,
            signature: Signature([0; 64]),
        };
        handshake.signature = pairwise.sign_canonical(&handshake.signed_body()).expect("canonicalizable");
        let key = channel_key(
            &secret,
            &invitation.ephemeral_pk,
            &invitation.invite_nonce,
            &connect_nonce,
            &invitation.inviter_did,
            &my_did,
        );
        let mut connection = Connection {
            session_id: session_id(&invitation.invite_nonce, &connect_nonce),
            my_did,
            their_did: invitation.inviter_did.clone(),
            their_pk: invitation.inviter_pk,
            their_endpoint: invitation.endpoint.clone(),
            channel_key: key,
            inviter: false,
            established: false,
            send_seq: 0,
            recv_seq: 0,
        };
        let body = json!({"endpoint": my_endpoint});
        let mut envelope = connection.seal(MessageType::Connect, &body);
        envelope.handshake = Some(handshake);
        let out = Outgoing {
            to: connection.their_endpoint.clone(),
            session_id: connection.session_id.clone(),
            kind: MessageType::Connect,
            seq: envelope.seq,
            body,
            frame: envelope.to_bytes(),
        };
        self.connections.insert(connection.session_id.clone(), connection);
        Ok(out)
    }

    pub fn connection(&self, session_id: &str) -> Option<&Connection> {
        self.connections.get(session_id)
    }

    pub fn connections(&self) -> impl Iterator<Item = &Connection> {
        self.connections.values()
    }

    pub fn seal(&mut self, session_id: &str, kind: MessageType, body: Value) -> Result<Outgoing, ProtocolError> {
        let connection =
            self.connections.get_mut(session_id).ok_or_else(|| ProtocolError::UnknownSession(session_id.to_string()))?;
        if !connection.established {
            return Err(ProtocolError::Unexpected { got: kind, state: "awaiting-ack" });
        }
        let envelope = connection.seal(kind, &body);
        Ok(Outgoing {
            to: connection.their_endpoint.clone(),
            session_id: session_id.to_string(),
            kind,
            seq: envelope.seq,
            body,
            frame: envelope.to_bytes(),
        })
    }

    /// Decode one frame. Connects are completed here (and the returned
    /// outgoing ack must be sent); everything else is handed back decrypted.
    pub fn receive(&mut self, frame: &[u8]) -> Result<(Inbound, Option<Outgoing>), ProtocolError> {
        let envelope = Envelope::from_bytes(frame)?;
        if envelope.kind == MessageType::Invite {
            return Err(ProtocolError::Unexpected { got: MessageType::Invite, state: "channel" });
        }
        if envelope.kind == MessageType::Connect {
            return self.complete_connect(&envelope);
        }
        if envelope.handshake.is_some() {
            return Err(ProtocolError::Malformed("handshake outside connect".into()));
        }
        let connection = self
            .connections
            .get_mut(&envelope.session_id)
            .ok_or_else(|| ProtocolError::UnknownSession(envelope.session_id.clone()))?;
        let expecting_ack = !connection.inviter && !connection.established;
        if expecting_ack != (envelope.kind == MessageType::ConnectAck) {
            let state = if expecting_ack { "awaiting-ack" } else { "established" };
            return Err(ProtocolError::Unexpected { got: envelope.kind, state });
        }
        let body = connection.open(&envelope)?;
        if envelope.kind == MessageType::ConnectAck {
            connection.established = true;
            return Ok((Inbound::Established { session_id: envelope.session_id }, None));
        }
        Ok((Inbound::Message { session_id: envelope.session_id, kind: envelope.kind, body }, None))
    }

    fn complete_connect(&mut self, envelope: &Envelope) -> Result<(Inbound, Option<Outgoing>), ProtocolError> {
        let handshake = envelope.handshake.as_ref().ok_or_else(|| ProtocolError::Malformed("connect without handshake".into()))?;
        if !crypto::verify_canonical(&handshake.pk, &handshake.signed_body(), &handshake.signature).unwrap_or(false) {
            return Err(ProtocolError::BadHandshake);
        }
        let sid = session_id(&handshake.invite_nonce, &handshake.connect_nonce);
        if sid != envelope.session_id {
            return Err(ProtocolError::Malformed("session id does not match handshake".into()));
        }
        if self.connections.contains_key(&sid) {
            return Err(ProtocolError::Unexpected { got: MessageType::Connect, state: "established" });
        }
        let pending = self
            .invites
            .get(&handshake.invite_nonce)
            .ok_or_else(|| ProtocolError::UnknownSession(envelope.session_id.clone()))?;
        let key = channel_key(
            &pending.secret,
            &handshake.ephemeral_pk,
            &handshake.invite_nonce,
            &handshake.connect_nonce,
            &pending.invitation.inviter_did,
            &handshake.did,
        );
        let mut connection = Connection {
            session_id: sid.clone(),
            my_did: pending.invitation.inviter_did.clone(),
            their_did: handshake.did.clone(),
            their_pk: handshake.pk,
            their_endpoint: String::new(),
            channel_key: key,
            inviter: true,
            established: true,
            send_seq: 0,
            recv_seq: 0,
        };
        let body = connection.open(envelope)?;
        let endpoint = body
            .get("endpoint")
            .and_then(Value::as_str)
            .ok_or_else(|| ProtocolError::Malformed("connect body lacks endpoint".into()))?;
        connection.their_endpoint = endpoint.to_string();
        // an invitation is single-use
        self.invites.remove(&handshake.invite_nonce);
        let their_did = connection.their_did.clone();
        self.connections.insert(sid.clone(), connection);
        let ack = self.seal(&sid, MessageType::ConnectAck, json!({"status": "ok"}))?;
        Ok((Inbound::Connected { session_id: sid, their_did }, Some(ack)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn pair() -> (Channels, Channels, String, ChaCha20Rng) {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let key = KeyPair::generate(&mut rng);
        let did = Did::generate(&mut rng);
        let mut inviter = Channels::new();
        let mut invitee = Channels::new();
        let invitation = inviter.invite(&key, &did, "mem:doctor", &mut rng);
        let connect = invitee.accept(&invitation, "mem:patient", &mut rng).unwrap();
        let (inbound, ack) = inviter.receive(&connect.frame).unwrap();
        assert!(matches!(inbound, Inbound::Connected { .. }));
        let ack = ack.unwrap();
        assert_eq!(ack.to, "mem:patient");
        let (inbound, _) = invitee.receive(&ack.frame).unwrap();
        assert_eq!(inbound, Inbound::Established { session_id: connect.session_id.clone() });
        (inviter, invitee, connect.session_id, rng)
    }

    #[test]
    fn handshake_then_both_directions() {
        let (mut a, mut b, sid, _) = pair();
        let out = a.seal(&sid, MessageType::CredentialOffer, json!({"thread": "t", "x": 1})).unwrap();
        match b.receive(&out.frame).unwrap().0 {
            Inbound::Message { kind, body, .. } => {
                assert_eq!(kind, MessageType::CredentialOffer);
                assert_eq!(body["x"], 1);
            }
            other => panic!("{other:?}"),
        }
        let back = b.seal(&sid, MessageType::CredentialRequest, json!({"thread": "t"})).unwrap();
        assert!(a.receive(&back.frame).is_ok());
        assert_eq!(a.connection(&sid).unwrap().recv_seq(), 2);
    }

    #[test]
    fn replayed_envelope_is_refused() {
        let (mut a, mut b, sid, _) = pair();
        let out = a.seal(&sid, MessageType::ProofRequest, json!({"thread": "t"})).unwrap();
        b.receive(&out.frame).unwrap();
        assert_eq!(b.receive(&out.frame).unwrap_err(), ProtocolError::OutOfOrder { expected: 2, got: 1 });
    }

    #[test]
    fn tampered_ciphertext_is_refused() {
        let (mut a, mut b, sid, _) = pair();
        let out = a.seal(&sid, MessageType::ProofRequest, json!({"thread": "t"})).unwrap();
        let mut env = Envelope::from_bytes(&out.frame).unwrap();
        let mut raw = crypto::unb64(&env.ciphertext).unwrap();
        raw[0] ^= 1;
        env.ciphertext = crypto::b64(&raw);
        assert_eq!(b.receive(&env.to_bytes()).unwrap_err(), ProtocolError::Tamper);
        // the type is authenticated too
        let mut env = Envelope::from_bytes(&out.frame).unwrap();
        env.kind = MessageType::Presentation;
        assert_eq!(b.receive(&env.to_bytes()).unwrap_err(), ProtocolError::Tamper);
    }

    #[test]
    fn forged_invitation_is_refused() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let key = KeyPair::generate(&mut rng);
        let mut inviter = Channels::new();
        let mut invitation = inviter.invite(&key, &Did::generate(&mut rng), "mem:d", &mut rng);
        invitation.endpoint = "mem:attacker".into();
        assert_eq!(Channels::new().accept(&invitation, "mem:p", &mut rng).unwrap_err(), ProtocolError::BadInvitation);
    }

    #[test]
    fn invitation_is_single_use() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let key = KeyPair::generate(&mut rng);
        let mut inviter = Channels::new();
        let invitation = inviter.invite(&key, &Did::generate(&mut rng), "mem:d", &mut rng);
        let first = Channels::new().accept(&invitation, "mem:p", &mut rng).unwrap();
        let second = Channels::new().accept(&invitation, "mem:q", &mut rng).unwrap();
        inviter.receive(&first.frame).unwrap();
        assert!(matches!(inviter.receive(&second.frame), Err(ProtocolError::UnknownSession(_))));
    }

    #[test]
    fn messages_before_ack_are_refused() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let key = KeyPair::generate(&mut rng);
        let mut inviter = Channels::new();
        let mut invitee = Channels::new();
        let invitation = inviter.invite(&key, &Did::generate(&mut rng), "mem:d", &mut rng);
        let connect = invitee.accept(&invitation, "mem:p", &mut rng).unwrap();
        assert!(invitee.seal(&connect.session_id, MessageType::Presentation, json!({})).is_err());
        inviter.receive(&connect.frame).unwrap();
        let offer = inviter.seal(&connect.session_id, MessageType::CredentialOffer, json!({})).unwrap();
        assert_eq!(
            invitee.receive(&offer.frame).unwrap_err(),
            ProtocolError::Unexpected { got: MessageType::CredentialOffer, state: "awaiting-ack" }
        );
    }

    #[test]
    fn channel_key_is_redacted() {
        let (a, _, sid, _) = pair();
        let text = format!("{:?}", a.connection(&sid).unwrap());
        assert!(text.contains("ChannelKey(..)"));
    }

    #[test]
    fn invitation_round_trips_canonically() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let key = KeyPair::generate(&mut rng);
        let invitation = Channels::new().invite(&key, &Did::generate(&mut rng), "mem:d", &mut rng);
        let bytes = invitation.to_bytes();
        assert!(bytes.starts_with(b"{\"endpoint\""));
        assert_eq!(Invitation::from_bytes(&bytes).unwrap(), invitation);
    }
}
