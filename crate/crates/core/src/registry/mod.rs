//! Verifiable data registry: public DIDs, credential schemas, credential
//! definitions and versioned revocation registries.
//!
//! Everything is append-only. Each accepted write becomes one
//! [`LogRecord`]; an optional log file receives the same records as
//! newline-delimited canonical JSON and can be replayed with
//! [`Registry::open`].

mod bitmap;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::crypto::{self, b64, CryptoError, Digest, KeyPair, PublicKey, Signature};

pub use bitmap::RevocationBitmap;
pub use store::{LogRecord, RecordKind};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("did already registered: {0}")]
    DuplicateDid(Did),
    #[error("proof does not verify")]
    BadProof,
    #[error("not found: {0}")]
    NotFound(String),
    #[error("unknown issuer: {0}")]
    UnknownIssuer(Did),
    #[error("issuer {0} does not hold the doctor role")]
    NotAnIssuer(Did),
    #[error("role {0:?} cannot be registered publicly")]
    PrivateRole(Role),
    #[error("duplicate credential definition for issuer and schema")]
    DuplicateCreddef,
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("content id does not match body")]
    BadContentId,
    #[error("unknown revocation registry: {0}")]
    UnknownRegistry(Digest),
    #[error("stale epoch: expected {expected}, got {got}")]
    StaleEpoch { expected: u64, got: u64 },
    #[error("revocation cannot be undone")]
    BitClear,
    #[error("revocation signature does not verify")]
    BadSignature,
    #[error("epoch {requested} unavailable, head is {head}")]
    EpochUnavailable { requested: u64, head: u64 },
    #[error("registry unavailable")]
    Unavailable,
    #[error("malformed did: {0}")]
    MalformedDid(String),
    #[error("persistence: {0}")]
    Persistence(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

pub type Result<T, E = RegistryError> = std::result::Result<T, E>;

const DID_PREFIX: &str = "did:rx:";

/// `did:rx:<base64url of 16 random bytes>`
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Did(String);

impl Did {
    pub fn generate<R: RngCore + ?Sized>(rng: &mut R) -> Did {
        Did(format!("{DID_PREFIX}{}", b64(&crypto::random_bytes::<16, _>(rng))))
    }

    pub fn parse(text: &str) -> Result<Did> {
        let id = text
            .strip_prefix(DID_PREFIX)
            .ok_or_else(|| RegistryError::MalformedDid(text.to_string()))?;
        match crypto::unb64(id) {
            Ok(bytes) if bytes.len() == 16 => Ok(Did(text.to_string())),
            _ => Err(RegistryError::MalformedDid(text.to_string())),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Did {
    type Error = RegistryError;
    fn try_from(value: String) -> Result<Self> {
        Did::parse(&value)
    }
}

impl From<Did> for String {
    fn from(d: Did) -> String {
        d.0
    }
}

impl fmt::Debug for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Doctor,
    Pharmacy,
    Patient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DidDocument {
    pub did: Did,
    pub verification_key: PublicKey,
    pub service_endpoint: String,
    pub role: Role,
}

impl DidDocument {
    /// Proof of key possession expected by [`Registry::register_did`].
    pub fn prove(&self, key: &KeyPair) -> Signature {
        key.sign_canonical(self).expect("did document is canonicalizable")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialSchema {
    pub schema_id: Digest,
    pub name: String,
    pub version: String,
    pub attribute_names: Vec<String>,
}

impl CredentialSchema {
    /// Builds a schema with sorted attribute names and its content id.
    pub fn new(name: &str, version: &str, attribute_names: &[&str]) -> Result<Self> {
        let mut names: Vec<String> = attribute_names.iter().map(|s| s.to_string()).collect();
        names.sort();
        let schema = CredentialSchema {
            schema_id: schema_content_id(name, version, &names),
            name: name.to_string(),
            version: version.to_string(),
            attribute_names: names,
        };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        if self.attribute_names.is_empty() {
            return Err(RegistryError::InvalidSchema("no attributes".into()));
        }
        if !self.attribute_names.windows(2).all(|w| w[0] < w[1]) {
            return Err(RegistryError::InvalidSchema("attribute names must be unique and sorted".into()));
        }
        if schema_content_id(&self.name, &self.version, &self.attribute_names) != self.schema_id {
            return Err(RegistryError::BadContentId);
        }
        Ok(())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.attribute_names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }
}

fn schema_content_id(name: &str, version: &str, names: &[String]) -> Digest {
    crypto::hash_canonical(&json!({"name": name, "version": version, "attribute_names": names}))
        .expect("schema body is canonicalizable")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialDefinition {
    pub creddef_id: Digest,
    pub schema_id: Digest,
    pub issuer_did: Did,
    pub issuer_signing_key: PublicKey,
    pub revocation_registry_id: Digest,
}

impl CredentialDefinition {
    pub fn new(schema_id: Digest, issuer_did: Did, issuer_signing_key: PublicKey) -> Self {
        let creddef_id = creddef_content_id(&schema_id, &issuer_did, &issuer_signing_key);
        CredentialDefinition {
            creddef_id,
            schema_id,
            issuer_did,
            issuer_signing_key,
            revocation_registry_id: revocation_registry_id(&creddef_id),
        }
    }

    fn ids_recompute(&self) -> bool {
        let id = creddef_content_id(&self.schema_id, &self.issuer_did, &self.issuer_signing_key);
        id == self.creddef_id && revocation_registry_id(&id) == self.revocation_registry_id
    }

    /// Registration proof: the issuer's signature over the empty epoch-0
    /// revocation state. The registry id commits to the creddef id, which
    /// commits to the whole definition, so the one signature proves key
    /// possession and doubles as the genesis revocation signature.
    pub fn prove(&self, issuer: &KeyPair) -> Signature {
        issuer.sign(&revocation_message(&self.revocation_registry_id, 0, &RevocationBitmap::default()))
    }
}

fn creddef_content_id(schema_id: &Digest, issuer_did: &Did, key: &PublicKey) -> Digest {
    crypto::hash_canonical(&json!({
        "schema_id": schema_id,
        "issuer_did": issuer_did,
        "issuer_signing_key": key,
    }))
    .expect("creddef body is canonicalizable")
}

pub fn revocation_registry_id(creddef_id: &Digest) -> Digest {
    crypto::hash_canonical(&json!({"kind": "revocation", "creddef_id": creddef_id}))
        .expect("registry id body is canonicalizable")
}

/// Bytes the issuer signs for one revocation snapshot.
pub fn revocation_message(registry_id: &Digest, epoch: u64, revoked: &RevocationBitmap) -> Vec<u8> {
    crypto::to_canonical(&json!({"registry_id": registry_id, "epoch": epoch, "revoked": revoked}))
        .expect("revocation state is canonicalizable")
}

/// One signed epoch of an issuer's revocation registry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationRegistry {
    pub registry_id: Digest,
    pub creddef_id: Digest,
    pub epoch: u64,
    pub revoked: RevocationBitmap,
    pub issuer_signature: Signature,
}

impl RevocationRegistry {
    pub fn signed(creddef: &CredentialDefinition, epoch: u64, revoked: RevocationBitmap, issuer: &KeyPair) -> Self {
        let issuer_signature = issuer.sign(&revocation_message(&creddef.revocation_registry_id, epoch, &revoked));
        RevocationRegistry {
            registry_id: creddef.revocation_registry_id,
            creddef_id: creddef.creddef_id,
            epoch,
            revoked,
            issuer_signature,
        }
    }

    pub fn verify(&self, issuer_key: &PublicKey) -> bool {
        crypto::verify(
            issuer_key,
            &revocation_message(&self.registry_id, self.epoch, &self.revoked),
            &self.issuer_signature,
        )
        .unwrap_or(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonRevocation {
    pub epoch: u64,
    pub non_revoked: bool,
}

/// Read access needed by verifiers. Implemented by the live [`Registry`]
/// and by [`CachedView`].
pub trait RegistryLookup {
    fn resolve_did(&self, did: &Did) -> Result<Arc<DidDocument>>;
    fn schema(&self, schema_id: &Digest) -> Result<Arc<CredentialSchema>>;
    fn creddef(&self, creddef_id: &Digest) -> Result<Arc<CredentialDefinition>>;
    fn revocation_head(&self, creddef_id: &Digest) -> Result<Arc<RevocationRegistry>>;
    fn check_non_revoked(&self, creddef_id: &Digest, credential_index: u64, min_epoch: u64) -> Result<NonRevocation>;
}

#[derive(Default)]
struct State {
    records: Vec<LogRecord>,
    dids: BTreeMap<Did, Arc<DidDocument>>,
    schemas: BTreeMap<Digest, Arc<CredentialSchema>>,
    creddefs: BTreeMap<Digest, Arc<CredentialDefinition>>,
    active_creddefs: BTreeSet<(Did, Digest)>,
    revocations: BTreeMap<Digest, Vec<Arc<RevocationRegistry>>>,
}

/// In-process verifiable data registry.
///
/// Writers are serialized by the state lock; readers get `Arc` snapshots of
/// immutable records.
pub struct Registry {
    state: RwLock<State>,
    sink: Mutex<Option<store::LogSink>>,
    available: AtomicBool,
}

impl Default for Registry {
    fn default() -> Self {
        Self::new()
    }
}

impl Registry {
    pub fn new() -> Self {
        Registry { state: RwLock::new(State::default()), sink: Mutex::new(None), available: AtomicBool::new(true) }
    }

    /// Open (or create) a registry backed by an append-only log file,
    /// replaying and re-validating every existing record.
    pub fn open(path: &Path) -> Result<Self> {
        let registry = Registry::new();
        for (expected_seq, record) in store::read_log(path)?.into_iter().enumerate() {
            if record.seq != expected_seq as u64 {
                return Err(RegistryError::Persistence(format!(
                    "non-dense seq: expected {expected_seq}, found {}",
                    record.seq
                )));
            }
            registry.apply_record(record)?;
        }
        *registry.sink.lock() = Some(store::LogSink::append(path)?);
        Ok(registry)
    }

    /// Load a log file without attaching it for writing.
    pub fn load(path: &Path) -> Result<Self> {
        let registry = Registry::new();
        for record in store::read_log(path)? {
            registry.apply_record(record)?;
        }
        Ok(registry)
    }

    /// Fault injection: an unavailable registry fails every call.
    pub fn set_available(&self, available: bool) {
        self.available.store(available, Ordering::SeqCst);
    }

    pub fn is_available(&self) -> bool {
        self.available.load(Ordering::SeqCst)
    }

    fn ensure_available(&self) -> Result<()> {
        if self.available.load(Ordering::SeqCst) {
            Ok(())
        } else {
            Err(RegistryError::Unavailable)
        }
    }

    fn apply_record(&self, record: LogRecord) -> Result<()> {
        let parse_err = |e: serde_json::Error| RegistryError::Persistence(e.to_string());
        match record.kind {
            RecordKind::Did => {
                let doc: DidDocument = serde_json::from_value(record.body).map_err(parse_err)?;
                let proof = record.signature.ok_or(RegistryError::BadProof)?;
                self.register_did(doc, proof).map(|_| ())
            }
            RecordKind::Schema => {
                let schema: CredentialSchema = serde_json::from_value(record.body).map_err(parse_err)?;
                self.register_schema(schema).map(|_| ())
            }
            RecordKind::Creddef => {
                let creddef: CredentialDefinition = serde_json::from_value(record.body).map_err(parse_err)?;
                let proof = record.signature.ok_or(RegistryError::BadProof)?;
                self.register_creddef(creddef, proof).map(|_| ())
            }
            RecordKind::Revocation => {
                let snapshot: RevocationRegistry = serde_json::from_value(record.body).map_err(parse_err)?;
                if snapshot.epoch == 0 {
                    // genesis snapshots are written by register_creddef
                    Ok(())
                } else {
                    self.publish_snapshot(snapshot).map(|_| ())
                }
            }
        }
    }

    fn append(&self, state: &mut State, kind: RecordKind, body: serde_json::Value, signature: Option<Signature>) -> Result<()> {
        let record = LogRecord { seq: state.records.len() as u64, kind, body, signature };
        if let Some(sink) = self.sink.lock().as_mut() {
            sink.write(&record)?;
        }
        state.records.push(record);
        Ok(())
    }

    pub fn register_did(&self, doc: DidDocument, proof: Signature) -> Result<Did> {
        self.ensure_available()?;
        if doc.role == Role::Patient {
            return Err(RegistryError::PrivateRole(doc.role));
        }
        if !crypto::verify_canonical(&doc.verification_key, &doc, &proof)? {
            return Err(RegistryError::BadProof);
        }
        let mut state = self.state.write();
        if state.dids.contains_key(&doc.did) {
            return Err(RegistryError::DuplicateDid(doc.did));
        }
        let did = doc.did.clone();
        self.append(&mut state, RecordKind::Did, to_value(&doc), Some(proof))?;
        state.dids.insert(did.clone(), Arc::new(doc));
        Ok(did)
    }

    /// Idempotent: registering an identical schema returns the same id.
    pub fn register_schema(&self, schema: CredentialSchema) -> Result<Digest> {
        self.ensure_available()?;
        schema.validate()?;
        let mut state = self.state.write();
        let id = schema.schema_id;
        if state.schemas.contains_key(&id) {
            return Ok(id);
        }
        self.append(&mut state, RecordKind::Schema, to_value(&schema), None)?;
        state.schemas.insert(id, Arc::new(schema));
        Ok(id)
    }

    /// `proof` is produced by [`CredentialDefinition::prove`].
    pub fn register_creddef(&self, creddef: CredentialDefinition, proof: Signature) -> Result<Digest> {
        self.ensure_available()?;
        if !creddef.ids_recompute() {
            return Err(RegistryError::BadContentId);
        }
        let mut state = self.state.write();
        let issuer = state
            .dids
            .get(&creddef.issuer_did)
            .cloned()
            .ok_or_else(|| RegistryError::UnknownIssuer(creddef.issuer_did.clone()))?;
        if issuer.role != Role::Doctor {
            return Err(RegistryError::NotAnIssuer(creddef.issuer_did.clone()));
        }
        if !state.schemas.contains_key(&creddef.schema_id) {
            return Err(RegistryError::NotFound(format!("schema {}", creddef.schema_id)));
        }
        if issuer.verification_key != creddef.issuer_signing_key {
            return Err(RegistryError::BadProof);
        }
        let genesis = RevocationRegistry {
            registry_id: creddef.revocation_registry_id,
            creddef_id: creddef.creddef_id,
            epoch: 0,
            revoked: RevocationBitmap::default(),
            issuer_signature: proof,
        };
        if !genesis.verify(&creddef.issuer_signing_key) {
            return Err(RegistryError::BadProof);
        }
        let pair = (creddef.issuer_did.clone(), creddef.schema_id);
        if state.active_creddefs.contains(&pair) || state.creddefs.contains_key(&creddef.creddef_id) {
            return Err(RegistryError::DuplicateCreddef);
        }
        let id = creddef.creddef_id;
        self.append(&mut state, RecordKind::Creddef, to_value(&creddef), Some(proof))?;
        self.append(&mut state, RecordKind::Revocation, to_value(&genesis), None)?;
        state.active_creddefs.insert(pair);
        state.creddefs.insert(id, Arc::new(creddef));
        state.revocations.insert(id, vec![Arc::new(genesis)]);
        Ok(id)
    }

    /// Publish the next epoch as the union of the current head and
    /// `newly_revoked`. `signature` covers the resulting state.
    pub fn publish_revocation(
        &self,
        creddef_id: &Digest,
        new_epoch: u64,
        newly_revoked: &BTreeSet<u64>,
        signature: Signature,
    ) -> Result<Arc<RevocationRegistry>> {
        let head = self.revocation_head(creddef_id)?;
        let mut revoked = head.revoked.clone();
        for &index in newly_revoked {
            revoked.set(index);
        }
        self.publish_snapshot(RevocationRegistry {
            registry_id: head.registry_id,
            creddef_id: *creddef_id,
            epoch: new_epoch,
            revoked,
            issuer_signature: signature,
        })
    }

    /// Publish a complete signed snapshot. Rejects stale epochs and any
    /// attempt to clear a previously set bit.
    pub fn publish_snapshot(&self, snapshot: RevocationRegistry) -> Result<Arc<RevocationRegistry>> {
        self.ensure_available()?;
        let mut state = self.state.write();
        let creddef = state
            .creddefs
            .get(&snapshot.creddef_id)
            .cloned()
            .ok_or(RegistryError::UnknownRegistry(snapshot.creddef_id))?;
        if snapshot.registry_id != creddef.revocation_registry_id {
            return Err(RegistryError::UnknownRegistry(snapshot.registry_id));
        }
        let head = state.revocations[&snapshot.creddef_id].last().cloned().expect("genesis epoch exists");
        if snapshot.epoch != head.epoch + 1 {
            return Err(RegistryError::StaleEpoch { expected: head.epoch + 1, got: snapshot.epoch });
        }
        if !snapshot.revoked.is_superset_of(&head.revoked) {
            return Err(RegistryError::BitClear);
        }
        if !snapshot.verify(&creddef.issuer_signing_key) {
            return Err(RegistryError::BadSignature);
        }
        self.append(&mut state, RecordKind::Revocation, to_value(&snapshot), None)?;
        let snapshot = Arc::new(snapshot);
        state.revocations.get_mut(&creddef.creddef_id).expect("checked above").push(snapshot.clone());
        Ok(snapshot)
    }

    pub fn revocation_at(&self, creddef_id: &Digest, epoch: u64) -> Result<Arc<RevocationRegistry>> {
        self.ensure_available()?;
        let state = self.state.read();
        let epochs = state.revocations.get(creddef_id).ok_or(RegistryError::UnknownRegistry(*creddef_id))?;
        epochs.get(epoch as usize).cloned().ok_or(RegistryError::EpochUnavailable {
            requested: epoch,
            head: epochs.len() as u64 - 1,
        })
    }

    /// All records in append order.
    pub fn records(&self) -> Vec<LogRecord> {
        self.state.read().records.clone()
    }

    pub fn records_of(&self, kind: RecordKind) -> Vec<LogRecord> {
        self.state.read().records.iter().filter(|r| r.kind == kind).cloned().collect()
    }
}

impl RegistryLookup for Registry {
    fn resolve_did(&self, did: &Did) -> Result<Arc<DidDocument>> {
        self.ensure_available()?;
        self.state.read().dids.get(did).cloned().ok_or_else(|| RegistryError::NotFound(did.to_string()))
    }

    fn schema(&self, schema_id: &Digest) -> Result<Arc<CredentialSchema>> {
        self.ensure_available()?;
        self.state
            .read()
            .schemas
            .get(schema_id)
            .cloned()
            .ok_or_else(|| RegistryError::NotFound(format!("schema {schema_id}")))
    }

    fn creddef(&self, creddef_id: &Digest) -> Result<Arc<CredentialDefinition>> {
        self.ensure_available()?;
        self.state
            .read()
            .creddefs
            .get(creddef_id)
            .cloned()
            .ok_or_else(|| RegistryError::NotFound(format!("creddef {creddef_id}")))
    }

    fn revocation_head(&self, creddef_id: &Digest) -> Result<Arc<RevocationRegistry>> {
        self.ensure_available()?;
        let state = self.state.read();
        state
            .revocations
            .get(creddef_id)
            .and_then(|epochs| epochs.last().cloned())
            .ok_or(RegistryError::UnknownRegistry(*creddef_id))
    }

    fn check_non_revoked(&self, creddef_id: &Digest, credential_index: u64, min_epoch: u64) -> Result<NonRevocation> {
        let head = self.revocation_head(creddef_id)?;
        check_snapshot(&head, &*self.creddef(creddef_id)?, credential_index, min_epoch)
    }
}

fn check_snapshot(
    head: &RevocationRegistry,
    creddef: &CredentialDefinition,
    credential_index: u64,
    min_epoch: u64,
) -> Result<NonRevocation> {
    if head.epoch < min_epoch {
        return Err(RegistryError::EpochUnavailable { requested: min_epoch, head: head.epoch });
    }
    if !head.verify(&creddef.issuer_signing_key) {
        return Err(RegistryError::BadSignature);
    }
    Ok(NonRevocation { epoch: head.epoch, non_revoked: !head.revoked.is_set(credential_index) })
}

/// Verifier-side view that caches immutable objects (DIDs, schemas,
/// credential definitions) and always reads revocation state live.
pub struct CachedView {
    live: Arc<Registry>,
    dids: Mutex<BTreeMap<Did, Arc<DidDocument>>>,
    schemas: Mutex<BTreeMap<Digest, Arc<CredentialSchema>>>,
    creddefs: Mutex<BTreeMap<Digest, Arc<CredentialDefinition>>>,
}

impl CachedView {
    pub fn new(live: Arc<Registry>) -> Self {
        CachedView {
            live,
            dids: Mutex::new(BTreeMap::new()),
            schemas: Mutex::new(BTreeMap::new()),
            creddefs: Mutex::new(BTreeMap::new()),
        }
    }
}

fn cached<K: Ord + Clone, V>(
    cache: &Mutex<BTreeMap<K, Arc<V>>>,
    key: &K,
    fetch: impl FnOnce() -> Result<Arc<V>>,
) -> Result<Arc<V>> {
    if let Some(hit) = cache.lock().get(key) {
        return Ok(hit.clone());
    }
    let value = fetch()?;
    cache.lock().insert(key.clone(), value.clone());
    Ok(value)
}

impl RegistryLookup for CachedView {
    fn resolve_did(&self, did: &Did) -> Result<Arc<DidDocument>> {
        cached(&self.dids, did, || self.live.resolve_did(did))
    }

    fn schema(&self, schema_id: &Digest) -> Result<Arc<CredentialSchema>> {
        cached(&self.schemas, schema_id, || self.live.schema(schema_id))
    }

    fn creddef(&self, creddef_id: &Digest) -> Result<Arc<CredentialDefinition>> {
        cached(&self.creddefs, creddef_id, || self.live.creddef(creddef_id))
    }

    fn revocation_head(&self, creddef_id: &Digest) -> Result<Arc<RevocationRegistry>> {
        self.live.revocation_head(creddef_id)
    }

    fn check_non_revoked(&self, creddef_id: &Digest, credential_index: u64, min_epoch: u64) -> Result<NonRevocation> {
        let head = self.live.revocation_head(creddef_id)?;
        check_snapshot(&head, &*self.creddef(creddef_id)?, credential_index, min_epoch)
    }
}

impl<T: RegistryLookup + ?Sized> RegistryLookup for Arc<T> {
    fn resolve_did(&self, did: &Did) -> Result<Arc<DidDocument>> {
        (**self).resolve_did(did)
    }
    fn schema(&self, schema_id: &Digest) -> Result<Arc<CredentialSchema>> {
        (**self).schema(schema_id)
    }
    fn creddef(&self, creddef_id: &Digest) -> Result<Arc<CredentialDefinition>> {
        (**self).creddef(creddef_id)
    }
    fn revocation_head(&self, creddef_id: &Digest) -> Result<Arc<RevocationRegistry>> {
        (**self).revocation_head(creddef_id)
    }
    fn check_non_revoked(&self, creddef_id: &Digest, credential_index: u64, min_epoch: u64) -> Result<NonRevocation> {
        (**self).check_non_revoked(creddef_id, credential_index, min_epoch)
    }
}

fn to_value<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("registry objects serialize to json")
}
