//! Issuer-signed credentials with selective disclosure.
//!
//! A credential commits to each attribute with a salted hash. The issuer
//! signs a root over the per-attribute digests (in schema order), the
//! credential definition id, the credential index and the holder's binding
//! key. A presentation opens a chosen subset of attributes, passes the
//! remaining digests through unchanged and adds the holder's signature over
//! the verifier's channel nonce.

use std::collections::{BTreeMap, BTreeSet};

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::crypto::{self, commitment_digest, Digest, KeyPair, Nonce32, PublicKey, Salt, Signature};
use crate::registry::{
    revocation_message, CredentialDefinition, CredentialSchema, Did, Registry, RegistryError, RegistryLookup,
    RevocationRegistry,
};

pub const PATIENT_NAME: &str = "patient_name";
pub const PHARMACEUTICAL: &str = "pharmaceutical";
pub const QUANTITY: &str = "quantity";
pub const CONTRACT_ADDRESS: &str = "contract_address";
pub const SPENDING_KEY: &str = "spending_key";
pub const CREDENTIAL_INDEX: &str = "credential_index";

pub const E_PRESCRIPTION_ATTRIBUTES: [&str; 6] =
    [CONTRACT_ADDRESS, CREDENTIAL_INDEX, PATIENT_NAME, PHARMACEUTICAL, QUANTITY, SPENDING_KEY];

pub fn e_prescription_schema() -> CredentialSchema {
    CredentialSchema::new("e-prescription", "1.0", &E_PRESCRIPTION_ATTRIBUTES).expect("static schema is valid")
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CredentialError {
    #[error("attributes do not match schema: {0}")]
    SchemaMismatch(String),
    #[error("credential index {0} already issued")]
    DuplicateIndex(u64),
    #[error("unknown attribute {0}")]
    UnknownAttribute(String),
    #[error("holder key does not match the credential's binding key")]
    WrongHolderKey,
    #[error("credential does not verify: {0}")]
    Invalid(&'static str),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeOpening {
    pub name: String,
    pub value: String,
    pub salt: Salt,
}

impl AttributeOpening {
    pub fn digest(&self) -> Digest {
        commitment_digest(&self.name, &self.value, &self.salt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UndisclosedAttribute {
    pub name: String,
    pub digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Credential {
    pub creddef_id: Digest,
    pub credential_index: u64,
    pub holder_binding_pk: PublicKey,
    /// All attributes in schema order, with their salts.
    pub attributes: Vec<AttributeOpening>,
    pub root: Digest,
    pub issuer_signature: Signature,
}

pub fn compute_root(digests: &[Digest], creddef_id: &Digest, credential_index: u64, holder_pk: &PublicKey) -> Digest {
    crypto::hash_canonical(&json!([digests, creddef_id, credential_index, holder_pk])).expect("root body is canonicalizable")
}

impl Credential {
    pub fn value(&self, name: &str) -> Option<&str> {
        self.attributes.iter().find(|a| a.name == name).map(|a| a.value.as_str())
    }

    pub fn recompute_root(&self) -> Digest {
        let digests: Vec<Digest> = self.attributes.iter().map(AttributeOpening::digest).collect();
        compute_root(&digests, &self.creddef_id, self.credential_index, &self.holder_binding_pk)
    }

    /// Checks structure, root and issuer signature against the definition.
    pub fn verify(&self, creddef: &CredentialDefinition, schema: &CredentialSchema) -> Result<(), CredentialError> {
        if self.creddef_id != creddef.creddef_id {
            return Err(CredentialError::Invalid("creddef mismatch"));
        }
        let names: Vec<&str> = self.attributes.iter().map(|a| a.name.as_str()).collect();
        if names != schema.attribute_names.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(CredentialError::Invalid("attribute names"));
        }
        if self.recompute_root() != self.root {
            return Err(CredentialError::Invalid("root"));
        }
        if !crypto::verify(&creddef.issuer_signing_key, &self.root.0, &self.issuer_signature).unwrap_or(false) {
            return Err(CredentialError::Invalid("issuer signature"));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        crypto::to_canonical(self).expect("credentials are canonicalizable")
    }
}

/// Issue a credential over `values`. The `credential_index` attribute is
/// filled from `credential_index`; if `values` carries it, it must agree.
pub fn issue<R: RngCore + CryptoRng>(
    issuer: &KeyPair,
    creddef: &CredentialDefinition,
    schema: &CredentialSchema,
    values: &BTreeMap<String, String>,
    holder_binding_pk: PublicKey,
    credential_index: u64,
    rng: &mut R,
) -> Result<Credential, CredentialError> {
    if creddef.schema_id != schema.schema_id {
        return Err(CredentialError::SchemaMismatch("creddef is for a different schema".into()));
    }
    if let Some(extra) = values.keys().find(|k| schema.position(k).is_none()) {
        return Err(CredentialError::SchemaMismatch(format!("unexpected attribute {extra}")));
    }
    let index_text = credential_index.to_string();
    let mut attributes = Vec::with_capacity(schema.attribute_names.len());
    for name in &schema.attribute_names {
        let value = match (name.as_str(), values.get(name)) {
            (CREDENTIAL_INDEX, Some(v)) if *v != index_text => {
                return Err(CredentialError::SchemaMismatch("credential_index disagrees with index".into()))
            }
            (CREDENTIAL_INDEX, _) => index_text.clone(),
            (_, Some(v)) => v.clone(),
            (_, None) => return Err(CredentialError::SchemaMismatch(format!("missing attribute {name}"))),
        };
        attributes.push(AttributeOpening { name: name.clone(), value, salt: Salt(crypto::random_bytes(rng)) });
    }
    let digests: Vec<Digest> = attributes.iter().map(AttributeOpening::digest).collect();
    let root = compute_root(&digests, &creddef.creddef_id, credential_index, &holder_binding_pk);
    Ok(Credential {
        creddef_id: creddef.creddef_id,
        credential_index,
        holder_binding_pk,
        attributes,
        root,
        issuer_signature: issuer.sign(&root.0),
    })
}

/// Issuer-side bookkeeping for one credential definition: index
/// allocation, duplicate detection and revocation publishing.
pub struct Issuer {
    key: KeyPair,
    creddef: CredentialDefinition,
    schema: CredentialSchema,
    issued: BTreeSet<u64>,
}

impl Issuer {
    pub fn new(key: KeyPair, creddef: CredentialDefinition, schema: CredentialSchema) -> Self {
        Issuer { key, creddef, schema, issued: BTreeSet::new() }
    }

    pub fn creddef(&self) -> &CredentialDefinition {
        &self.creddef
    }

    pub fn schema(&self) -> &CredentialSchema {
        &self.schema
    }

    pub fn next_index(&self) -> u64 {
        self.issued.last().map_or(0, |i| i + 1)
    }

    pub fn issue<R: RngCore + CryptoRng>(
        &mut self,
        values: &BTreeMap<String, String>,
        holder_binding_pk: PublicKey,
        credential_index: u64,
        rng: &mut R,
    ) -> Result<Credential, CredentialError> {
        if self.issued.contains(&credential_index) {
            return Err(CredentialError::DuplicateIndex(credential_index));
        }
        let credential = issue(&self.key, &self.creddef, &self.schema, values, holder_binding_pk, credential_index, rng)?;
        self.issued.insert(credential_index);
        Ok(credential)
    }

    /// Revoke `indices` in the next epoch; returns the new epoch.
    pub fn revoke(&self, registry: &Registry, indices: &[u64]) -> Result<u64, RegistryError> {
        let head = registry.revocation_head(&self.creddef.creddef_id)?;
        let mut revoked = head.revoked.clone();
        indices.iter().for_each(|&i| revoked.set(i));
        let epoch = head.epoch + 1;
        let signature = self.key.sign(&revocation_message(&self.creddef.revocation_registry_id, epoch, &revoked));
        let published: std::sync::Arc<RevocationRegistry> =
            registry.publish_revocation(&self.creddef.creddef_id, epoch, &indices.iter().copied().collect(), signature)?;
        Ok(published.epoch)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProofRequest {
    pub requested_attribute_names: BTreeSet<String>,
    pub accepted_creddef_ids: BTreeSet<Digest>,
    pub channel_nonce: Nonce32,
    pub require_non_revocation: bool,
}

impl ProofRequest {
    pub fn new<R: RngCore + CryptoRng>(
        names: &[&str],
        accepted_creddef_ids: BTreeSet<Digest>,
        require_non_revocation: bool,
        rng: &mut R,
    ) -> Self {
        ProofRequest {
            requested_attribute_names: names.iter().map(|s| s.to_string()).collect(),
            accepted_creddef_ids,
            channel_nonce: Nonce32(crypto::random_bytes(rng)),
            require_non_revocation,
        }
    }

    /// Names a holder must open: the requested ones, plus the index when
    /// non-revocation is required.
    pub fn names_to_disclose(&self) -> BTreeSet<String> {
        let mut names = self.requested_attribute_names.clone();
        if self.require_non_revocation {
            names.insert(CREDENTIAL_INDEX.to_string());
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Presentation {
    pub creddef_id: Digest,
    pub credential_index: u64,
    pub holder_binding_pk: PublicKey,
    pub root: Digest,
    pub issuer_signature: Signature,
    pub disclosed: Vec<AttributeOpening>,
    pub undisclosed: Vec<UndisclosedAttribute>,
    pub channel_nonce: Nonce32,
    pub holder_signature: Signature,
}

fn holder_message(root: &Digest, channel_nonce: &Nonce32, disclosed_names: &[&str]) -> Vec<u8> {
    crypto::to_canonical(&json!({"root": root, "channel_nonce": channel_nonce, "disclosed": disclosed_names}))
        .expect("holder message is canonicalizable")
}

impl Presentation {
    pub fn to_bytes(&self) -> Vec<u8> {
        crypto::to_canonical(self).expect("presentations are canonicalizable")
    }

    /// Strict parse: the input must already be in canonical form.
    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let p: Presentation = crypto::from_canonical(bytes).ok()?;
        (p.to_bytes() == bytes).then_some(p)
    }

    pub fn disclosed_value(&self, name: &str) -> Option<&str> {
        self.disclosed.iter().find(|a| a.name == name).map(|a| a.value.as_str())
    }
}

/// Build a presentation that opens exactly the attributes the request
/// needs.
pub fn present(credential: &Credential, holder: &KeyPair, request: &ProofRequest) -> Result<Presentation, CredentialError> {
    let wanted = request.names_to_disclose();
    if let Some(unknown) = wanted.iter().find(|n| credential.value(n).is_none()) {
        return Err(CredentialError::UnknownAttribute(unknown.clone()));
    }
    if holder.public_key() != credential.holder_binding_pk {
        return Err(CredentialError::WrongHolderKey);
    }
    let (mut disclosed, mut undisclosed) = (Vec::new(), Vec::new());
    for attr in &credential.attributes {
        if wanted.contains(&attr.name) {
            disclosed.push(attr.clone());
        } else {
            undisclosed.push(UndisclosedAttribute { name: attr.name.clone(), digest: attr.digest() });
        }
    }
    let names: Vec<&str> = disclosed.iter().map(|a| a.name.as_str()).collect();
    let holder_signature = holder.sign(&holder_message(&credential.root, &request.channel_nonce, &names));
    Ok(Presentation {
        creddef_id: credential.creddef_id,
        credential_index: credential.credential_index,
        holder_binding_pk: credential.holder_binding_pk,
        root: credential.root,
        issuer_signature: credential.issuer_signature,
        disclosed,
        undisclosed,
        channel_nonce: request.channel_nonce,
        holder_signature,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    BadRoot,
    BadIssuerSig,
    UntrustedIssuer,
    BadHolderSig,
    StaleNonce,
    Revoked,
    RegistryUnavailable,
    MissingAttribute,
    Malformed,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::BadRoot => "bad-root",
            FailureReason::BadIssuerSig => "bad-issuer-sig",
            FailureReason::UntrustedIssuer => "untrusted-issuer",
            FailureReason::BadHolderSig => "bad-holder-sig",
            FailureReason::StaleNonce => "stale-nonce",
            FailureReason::Revoked => "revoked",
            FailureReason::RegistryUnavailable => "registry-unavailable",
            FailureReason::MissingAttribute => "missing-attribute",
            FailureReason::Malformed => "malformed",
        }
    }
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationPolicy {
    pub trusted_issuer_dids: BTreeSet<Did>,
    pub require_non_revocation: bool,
    /// Explicit freshness floor. When unset the verifier uses the latest
    /// known epoch minus `max_epoch_lag`.
    pub min_epoch: Option<u64>,
    pub max_epoch_lag: u64,
}

impl VerificationPolicy {
    pub fn trusting<I: IntoIterator<Item = Did>>(issuers: I) -> Self {
        VerificationPolicy {
            trusted_issuer_dids: issuers.into_iter().collect(),
            require_non_revocation: true,
            min_epoch: None,
            max_epoch_lag: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub valid: bool,
    pub disclosed: BTreeMap<String, String>,
    pub failure_reason: Option<FailureReason>,
    pub revocation_epoch: Option<u64>,
}

impl VerificationReport {
    fn fail(reason: FailureReason) -> Self {
        VerificationReport { valid: false, disclosed: BTreeMap::new(), failure_reason: Some(reason), revocation_epoch: None }
    }
}

fn registry_failure(e: RegistryError) -> FailureReason {
    match e {
        RegistryError::NotFound(_) | RegistryError::UnknownIssuer(_) => FailureReason::UntrustedIssuer,
        _ => FailureReason::RegistryUnavailable,
    }
}

/// Verify serialized presentation bytes; unparsable input is `malformed`.
pub fn verify_presentation_bytes<L: RegistryLookup + ?Sized>(
    bytes: &[u8],
    registry: &L,
    request: &ProofRequest,
    policy: &VerificationPolicy,
) -> VerificationReport {
    match Presentation::from_bytes(bytes) {
        Some(p) => verify_presentation(&p, registry, request, policy),
        None => VerificationReport::fail(FailureReason::Malformed),
    }
}

/// Never fails outright: every problem is reported as a failure reason.
pub fn verify_presentation<L: RegistryLookup + ?Sized>(
    p: &Presentation,
    registry: &L,
    request: &ProofRequest,
    policy: &VerificationPolicy,
) -> VerificationReport {
    match check(p, registry, request, policy) {
        Ok(epoch) => VerificationReport {
            valid: true,
            disclosed: p.disclosed.iter().map(|a| (a.name.clone(), a.value.clone())).collect(),
            failure_reason: None,
            revocation_epoch: epoch,
        },
        Err(reason) => VerificationReport::fail(reason),
    }
}

fn check<L: RegistryLookup + ?Sized>(
    p: &Presentation,
    registry: &L,
    request: &ProofRequest,
    policy: &VerificationPolicy,
) -> Result<Option<u64>, FailureReason> {
    use FailureReason::*;

    if p.channel_nonce != request.channel_nonce {
        return Err(StaleNonce);
    }
    if !request.accepted_creddef_ids.is_empty() && !request.accepted_creddef_ids.contains(&p.creddef_id) {
        return Err(UntrustedIssuer);
    }
    let creddef = registry.creddef(&p.creddef_id).map_err(registry_failure)?;
    if !policy.trusted_issuer_dids.contains(&creddef.issuer_did) {
        return Err(UntrustedIssuer);
    }
    let schema = registry.schema(&creddef.schema_id).map_err(|e| match e {
        RegistryError::NotFound(_) => BadRoot,
        _ => RegistryUnavailable,
    })?;

    // Every schema attribute exactly once, either opened or as a digest.
    let mut digests: Vec<Option<Digest>> = vec![None; schema.attribute_names.len()];
    let opened = p.disclosed.iter().map(|a| (a.name.as_str(), a.digest()));
    let hidden = p.undisclosed.iter().map(|u| (u.name.as_str(), u.digest));
    for (name, digest) in opened.chain(hidden) {
        let slot = schema.position(name).ok_or(BadRoot)?;
        if digests[slot].replace(digest).is_some() {
            return Err(BadRoot);
        }
    }
    let digests: Vec<Digest> = digests.into_iter().collect::<Option<_>>().ok_or(BadRoot)?;
    if compute_root(&digests, &p.creddef_id, p.credential_index, &p.holder_binding_pk) != p.root {
        return Err(BadRoot);
    }
    if let Some(index) = p.disclosed_value(CREDENTIAL_INDEX) {
        if index != p.credential_index.to_string() {
            return Err(BadRoot);
        }
    }
    if !crypto::verify(&creddef.issuer_signing_key, &p.root.0, &p.issuer_signature).unwrap_or(false) {
        return Err(BadIssuerSig);
    }
    let names: Vec<&str> = p.disclosed.iter().map(|a| a.name.as_str()).collect();
    let holder_ok = crypto::verify(&p.holder_binding_pk, &holder_message(&p.root, &p.channel_nonce, &names), &p.holder_signature)
        .unwrap_or(false);
    if !holder_ok {
        return Err(BadHolderSig);
    }
    let required = request.names_to_disclose();
    if required.iter().any(|n| p.disclosed_value(n).is_none()) {
        return Err(MissingAttribute);
    }

    if !(policy.require_non_revocation || request.require_non_revocation) {
        return Ok(None);
    }
    if p.disclosed_value(CREDENTIAL_INDEX).is_none() {
        return Err(MissingAttribute);
    }
    let min_epoch = match policy.min_epoch {
        Some(e) => e,
        None => registry
            .revocation_head(&p.creddef_id)
            .map_err(|_| RegistryUnavailable)?
            .epoch
            .saturating_sub(policy.max_epoch_lag),
    };
    let status = registry
        .check_non_revoked(&p.creddef_id, p.credential_index, min_epoch)
        .map_err(|_| RegistryUnavailable)?;
    if !status.non_revoked {
        return Err(Revoked);
    }
    Ok(Some(status.epoch))
}
