//! Scripted multi-agent scenarios on a deterministic scheduler.
//!
//! A single scheduler thread owns every agent. Frames go through the
//! transport; whenever more than one agent has mail waiting, the scheduler
//! picks the next recipient with its own seeded RNG. The logical clock
//! advances once per delivered frame.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::transcript;
use super::HarnessError;
use crate::agents::{
    AgentError, AgentEvent, CreddefLookup, Doctor, MemoryTransport, Outgoing, Patient, Pharmacy, PharmacyConfig, Transport,
};
use crate::credentials::Presentation;
use crate::crypto::{self, KeyPair};
use crate::ledger::{Command, Ledger, LedgerReceipt};
use crate::registry::Registry;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub description: String,
    pub actors: Actors,
    pub steps: Vec<ScriptStep>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Actors {
    #[serde(default)]
    pub doctors: Vec<String>,
    #[serde(default)]
    pub patients: Vec<String>,
    #[serde(default)]
    pub pharmacies: Vec<PharmacySpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PharmacySpec {
    pub name: String,
    /// Doctors whose DIDs this pharmacy accepts as issuers.
    #[serde(default)]
    pub trusts: Vec<String>,
    #[serde(default)]
    pub request_patient_name: bool,
    #[serde(default = "live")]
    pub lookup: CreddefLookup,
}

fn live() -> CreddefLookup {
    CreddefLookup::Live
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Consent {
    #[default]
    Accept,
    Decline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tamper {
    /// Change a disclosed attribute value.
    Value,
    /// Flip a bit of the issuer signature.
    IssuerSignature,
    /// Flip a bit of the holder signature.
    HolderSignature,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    Onboard {
        doctor: String,
    },
    Connect {
        patient: String,
        with: String,
    },
    Prescribe {
        doctor: String,
        patient: String,
        label: String,
        attributes: BTreeMap<String, String>,
        #[serde(default = "one")]
        count: u64,
        #[serde(default)]
        consent: Consent,
    },
    Redeem {
        pharmacy: String,
        patient: String,
        prescription: String,
        #[serde(default)]
        consent: Consent,
        #[serde(default)]
        tamper: Option<Tamper>,
        /// Answer with the presentation previously sent for this
        /// prescription instead of a fresh one.
        #[serde(default)]
        replay: bool,
        #[serde(default)]
        withhold: Vec<String>,
    },
    Revoke {
        doctor: String,
        prescription: String,
    },
    Race {
        patient: String,
        prescription: String,
        pharmacies: Vec<String>,
    },
    LedgerCreate {
        /// A doctor name, or "outsider" for a key unknown to the contract.
        sender: String,
        doctor: String,
        #[serde(default = "one")]
        count: u64,
    },
    Registry {
        available: bool,
    },
}

fn one() -> u64 {
    1
}

impl Step {
    pub fn op(&self) -> &'static str {
        match self {
            Step::Onboard { .. } => "onboard",
            Step::Connect { .. } => "connect",
            Step::Prescribe { .. } => "prescribe",
            Step::Redeem { .. } => "redeem",
            Step::Revoke { .. } => "revoke",
            Step::Race { .. } => "race",
            Step::LedgerCreate { .. } => "ledger_create",
            Step::Registry { .. } => "registry",
        }
    }
}

/// One script line: the step plus the outcome fields it must produce.
#[derive(Debug, Clone, Deserialize)]
#[serde(try_from = "Value")]
pub struct ScriptStep {
    pub step: Step,
    pub expect: Map<String, Value>,
}

impl TryFrom<Value> for ScriptStep {
    type Error = String;

    fn try_from(mut value: Value) -> Result<Self, String> {
        let expect = match value.as_object_mut().and_then(|m| m.remove("expect")) {
            None => Map::new(),
            Some(Value::Object(m)) => m,
            Some(_) => return Err("expect must be an object".into()),
        };
        let step = serde_json::from_value(value).map_err(|e| e.to_string())?;
        Ok(ScriptStep { step, expect })
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| HarnessError::Scenario(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let mut names: Vec<&str> = self.actors.doctors.iter().map(String::as_str).collect();
        names.extend(self.actors.patients.iter().map(String::as_str));
        names.extend(self.actors.pharmacies.iter().map(|p| p.name.as_str()));
        let mut sorted = names.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(HarnessError::Scenario("actor names must be unique".into()));
        }
        if names.contains(&"outsider") {
            return Err(HarnessError::Scenario("\"outsider\" is reserved".into()));
        }
        for p in &self.actors.pharmacies {
            if let Some(t) = p.trusts.iter().find(|t| !self.actors.doctors.contains(t)) {
                return Err(HarnessError::Scenario(format!("pharmacy {} trusts unknown doctor {t}", p.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub passed: bool,
    pub violations: Vec<String>,
    /// Normalized, pretty-printed transcript.
    pub transcript: String,
}

struct Prescription {
    doctor: String,
    thread: String,
}

enum Role {
    Doctor,
    Patient,
    Pharmacy,
}

/// Per-actor RNG: the scenario seed, on a stream derived from the name.
fn actor_rng(seed: u64, name: &str) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let digest = crypto::hash(name.as_bytes());
    rng.set_stream(u64::from_be_bytes(digest.0[..8].try_into().expect("8 bytes")));
    rng
}

pub struct Runner {
    name: String,
    seed: u64,
    transport: Arc<dyn Transport>,
    registry: Arc<Registry>,
    ledger: Ledger,
    doctors: BTreeMap<String, Doctor>,
    patients: BTreeMap<String, Patient>,
    pharmacies: BTreeMap<String, Pharmacy>,
    trusts: BTreeMap<String, Vec<String>>,
    roles: BTreeMap<String, Role>,
    endpoints: BTreeMap<String, String>,
    scheduler: ChaCha20Rng,
    outsider: ChaCha20Rng,
    clock: u64,
    step: usize,
    in_flight: usize,
    entries: Vec<Value>,
    sessions: BTreeMap<(String, String), String>,
    prescriptions: BTreeMap<String, Prescription>,
    sent: BTreeMap<String, Presentation>,
}

fn error_outcome(e: impl std::fmt::Display) -> Value {
    json!({"status": "error", "error": e.to_string()})
}

impl Runner {
    pub fn new(scenario: &Scenario, seed: u64, transport: Arc<dyn Transport>) -> Result<Self, HarnessError> {
        Self::with_backends(scenario, seed, transport, Arc::new(Registry::new()), Ledger::new())
    }

    /// Like [`Runner::new`], on a caller-supplied registry and ledger
    /// (for instance file-backed ones the CLI can inspect afterwards).
    pub fn with_backends(
        scenario: &Scenario,
        seed: u64,
        transport: Arc<dyn Transport>,
        registry: Arc<Registry>,
        ledger: Ledger,
    ) -> Result<Self, HarnessError> {
        scenario.validate()?;
        let mut runner = Runner {
            name: scenario.name.clone(),
            seed,
            transport: transport.clone(),
            registry: registry.clone(),
            ledger: ledger.clone(),
            doctors: BTreeMap::new(),
            patients: BTreeMap::new(),
            pharmacies: BTreeMap::new(),
            trusts: BTreeMap::new(),
            roles: BTreeMap::new(),
            endpoints: BTreeMap::new(),
            scheduler: actor_rng(seed, "scheduler"),
            outsider: actor_rng(seed, "outsider"),
            clock: 0,
            step: 0,
            in_flight: 0,
            entries: Vec::new(),
            sessions: BTreeMap::new(),
            prescriptions: BTreeMap::new(),
            sent: BTreeMap::new(),
        };
        let mut endpoint_of = |name: &str| -> Result<String, HarnessError> {
            let endpoint = transport.register(name).map_err(|e| HarnessError::Scenario(e.to_string()))?;
            runner.endpoints.insert(endpoint.clone(), name.to_string());
            Ok(endpoint)
        };
        let mut doctors = Vec::new();
        for name in &scenario.actors.doctors {
            let endpoint = endpoint_of(name)?;
            doctors.push(Doctor::new(name, &endpoint, actor_rng(seed, name), registry.clone(), ledger.clone()));
        }
        let mut patients = Vec::new();
        for name in &scenario.actors.patients {
            let endpoint = endpoint_of(name)?;
            patients.push(Patient::new(name, &endpoint, actor_rng(seed, name), registry.clone()));
        }
        let mut pharmacies = Vec::new();
        for spec in &scenario.actors.pharmacies {
            let endpoint = endpoint_of(&spec.name)?;
            let config = PharmacyConfig {
                request_patient_name: spec.request_patient_name,
                lookup: spec.lookup,
                ..PharmacyConfig::default()
            };
            let mut pharmacy =
                Pharmacy::new(&spec.name, &endpoint, actor_rng(seed, &spec.name), registry.clone(), ledger.clone(), config);
            pharmacy.onboard().map_err(|e| HarnessError::Scenario(e.to_string()))?;
            pharmacies.push(pharmacy);
        }
        for d in doctors {
            runner.roles.insert(d.name.clone(), Role::Doctor);
            runner.doctors.insert(d.name.clone(), d);
        }
        for p in patients {
            runner.roles.insert(p.name.clone(), Role::Patient);
            runner.patients.insert(p.name.clone(), p);
        }
        for p in pharmacies {
            runner.roles.insert(p.name.clone(), Role::Pharmacy);
            runner.pharmacies.insert(p.name.clone(), p);
        }
        for spec in &scenario.actors.pharmacies {
            runner.trusts.insert(spec.name.clone(), spec.trusts.clone());
        }
        Ok(runner)
    }

    fn actor_of(&self, endpoint: &str) -> String {
        self.endpoints.get(endpoint).cloned().unwrap_or_else(|| endpoint.to_string())
    }

    /// Endpoints depend on the transport (TCP ports), so transcripts name
    /// the actor instead.
    fn hide_endpoints(&self, value: &mut Value) {
        match value {
            Value::String(s) => {
                if let Some(actor) = self.endpoints.get(s.as_str()) {
                    *s = format!("endpoint:{actor}");
                }
            }
            Value::Array(items) => items.iter_mut().for_each(|v| self.hide_endpoints(v)),
            Value::Object(map) => map.values_mut().for_each(|v| self.hide_endpoints(v)),
            _ => {}
        }
    }

    fn record(&mut self, kind: &str, mut entry: Value) {
        self.hide_endpoints(&mut entry);
        entry["t"] = json!(self.clock);
        entry["step"] = json!(self.step);
        entry["entry"] = json!(kind);
        self.entries.push(entry);
    }

    fn send(&mut self, from: &str, out: Outgoing) {
        let to = self.actor_of(&out.to);
        self.record(
            "message",
            json!({
                "from": from,
                "to": to,
                "type": out.kind,
                "session": out.session_id,
                "seq": out.seq,
                "bytes": out.frame.len(),
                "body": out.body,
            }),
        );
        match self.transport.send(&out.to, &out.frame) {
            Ok(()) => self.in_flight += 1,
            Err(e) => self.record("delivery-failure", json!({"from": from, "to": to, "error": e.to_string()})),
        }
    }

    fn collect_events(&mut self) {
        let mut drained: Vec<(String, Vec<AgentEvent>)> = Vec::new();
        drained.extend(self.doctors.iter_mut().map(|(n, a)| (n.clone(), a.drain_events())));
        drained.extend(self.patients.iter_mut().map(|(n, a)| (n.clone(), a.drain_events())));
        drained.extend(self.pharmacies.iter_mut().map(|(n, a)| (n.clone(), a.drain_events())));
        for (actor, events) in drained {
            for event in events {
                let event = serde_json::to_value(&event).expect("events serialize");
                self.record("event", json!({"actor": actor, "event": event}));
            }
        }
    }

    fn dispatch(&mut self, actor: &str, frame: &[u8]) -> Result<Vec<Outgoing>, AgentError> {
        match self.roles.get(actor) {
            Some(Role::Doctor) => self.doctors.get_mut(actor).expect("known").handle(frame),
            Some(Role::Patient) => self.patients.get_mut(actor).expect("known").handle(frame),
            Some(Role::Pharmacy) => self.pharmacies.get_mut(actor).expect("known").handle(frame),
            None => Ok(Vec::new()),
        }
    }

    /// Deliver frames until none are in flight.
    fn pump(&mut self) {
        let deadline = Instant::now() + Duration::from_secs(10);
        while self.in_flight > 0 {
            let ready: Vec<String> =
                self.endpoints.keys().filter(|e| self.transport.pending(e) > 0).cloned().collect();
            if ready.is_empty() {
                if Instant::now() > deadline {
                    self.record("stall", json!({"in_flight": self.in_flight}));
                    self.in_flight = 0;
                    return;
                }
                std::thread::yield_now();
                continue;
            }
            let endpoint = &ready[self.scheduler.gen_range(0..ready.len())];
            let Some(frame) = self.transport.try_recv(endpoint) else { continue };
            self.in_flight -= 1;
            self.clock += 1;
            let actor = self.actor_of(endpoint);
            match self.dispatch(&actor, &frame) {
                Ok(outs) => outs.into_iter().for_each(|o| self.send(&actor, o)),
                Err(e) => self.record("rejected", json!({"actor": actor, "error": e.to_string()})),
            }
            self.collect_events();
        }
    }

    fn ensure_connected(&mut self, patient: &str, with: &str) -> Result<String, HarnessError> {
        if let Some(sid) = self.sessions.get(&(patient.to_string(), with.to_string())) {
            return Ok(sid.clone());
        }
        let invitation = match self.roles.get(with) {
            Some(Role::Doctor) => self.doctors.get_mut(with).expect("known").invite(),
            Some(Role::Pharmacy) => self.pharmacies.get_mut(with).expect("known").invite(),
            _ => return Err(HarnessError::Scenario(format!("{with} cannot invite"))),
        }
        .map_err(agent_err)?;
        let invite_bytes = invitation.to_bytes();
        self.record(
            "message",
            json!({
                "from": with,
                "to": patient,
                "type": "invite",
                "bytes": invite_bytes.len(),
                "body": serde_json::to_value(&invitation).expect("serializes"),
            }),
        );
        let out = self.patient(patient)?.accept_invitation(&invitation).map_err(agent_err)?;
        let sid = out.session_id.clone();
        self.send(patient, out);
        self.pump();
        let established = self.patient(patient)?.channels().connection(&sid).is_some_and(|c| c.is_established());
        if !established {
            return Err(HarnessError::Scenario(format!("{patient} could not connect to {with}")));
        }
        self.sessions.insert((patient.to_string(), with.to_string()), sid.clone());
        Ok(sid)
    }

    fn patient(&mut self, name: &str) -> Result<&mut Patient, HarnessError> {
        self.patients.get_mut(name).ok_or_else(|| HarnessError::Scenario(format!("unknown patient {name}")))
    }

    fn doctor(&mut self, name: &str) -> Result<&mut Doctor, HarnessError> {
        self.doctors.get_mut(name).ok_or_else(|| HarnessError::Scenario(format!("unknown doctor {name}")))
    }

    fn pharmacy(&mut self, name: &str) -> Result<&mut Pharmacy, HarnessError> {
        self.pharmacies.get_mut(name).ok_or_else(|| HarnessError::Scenario(format!("unknown pharmacy {name}")))
    }

    fn prescription(&self, label: &str) -> Result<&Prescription, HarnessError> {
        self.prescriptions.get(label).ok_or_else(|| HarnessError::Scenario(format!("unknown prescription {label}")))
    }

    /// Execute the whole script and return the normalized transcript.
    pub fn run(mut self, steps: &[ScriptStep]) -> RunReport {
        let mut violations = Vec::new();
        for (i, script) in steps.iter().enumerate() {
            self.step = i;
            let outcome = self.execute(&script.step).unwrap_or_else(error_outcome);
            self.collect_events();
            let mut met = true;
            for (key, want) in &script.expect {
                let got = outcome.get(key).unwrap_or(&Value::Null);
                if got != want {
                    met = false;
                    violations.push(format!("step {i} ({}): expected {key}={want}, got {got}", script.step.op()));
                }
            }
            let expect = Value::Object(script.expect.clone());
            self.record("step", json!({"op": script.step.op(), "outcome": outcome, "expect": expect, "met": met}));
        }
        let transcript = json!({
            "scenario": self.name,
            "seed": self.seed,
            "entries": self.entries,
            "final": {
                "ledger_height": self.ledger.height(),
                "ledger_digest": self.ledger.state_digest(),
                "registry_records": self.registry.records().len(),
            },
            "passed": violations.is_empty(),
            "violations": violations,
        });
        RunReport { passed: violations.is_empty(), violations, transcript: transcript::render(transcript) }
    }

    fn execute(&mut self, step: &Step) -> Result<Value, HarnessError> {
        match step {
            Step::Onboard { doctor } => {
                let onboarding = match self.doctor(doctor)?.onboard() {
                    Ok(o) => o,
                    Err(e) => return Ok(error_outcome(e)),
                };
                for (pharmacy, trusted) in &self.trusts {
                    if trusted.contains(doctor) {
                        self.pharmacies.get_mut(pharmacy).expect("known").trust(onboarding.did.clone());
                    }
                }
                Ok(json!({"status": "ok", "did": onboarding.did, "contract_address": onboarding.contract_address}))
            }
            Step::Connect { patient, with } => match self.ensure_connected(patient, with) {
                Ok(session) => Ok(json!({"status": "ok", "session": session})),
                Err(e) => Ok(error_outcome(e)),
            },
            Step::Prescribe { doctor, patient, label, attributes, count, consent } => {
                self.prescribe(doctor, patient, label, attributes, *count, *consent)
            }
            Step::Redeem { pharmacy, patient, prescription, consent, tamper, replay, withhold } => {
                self.redeem(pharmacy, patient, prescription, *consent, *tamper, *replay, withhold)
            }
            Step::Revoke { doctor, prescription } => {
                let thread = self.prescription(prescription)?.thread.clone();
                match self.doctor(doctor)?.revoke(&thread) {
                    Ok(epoch) => Ok(json!({"status": "ok", "epoch": epoch})),
                    Err(e) => Ok(error_outcome(e)),
                }
            }
            Step::Race { patient, prescription, pharmacies } => self.race(patient, prescription, pharmacies),
            Step::LedgerCreate { sender, doctor, count } => self.ledger_create(sender, doctor, *count),
            Step::Registry { available } => {
                self.registry.set_available(*available);
                Ok(json!({"status": "ok"}))
            }
        }
    }

    fn prescribe(
        &mut self,
        doctor: &str,
        patient: &str,
        label: &str,
        attributes: &BTreeMap<String, String>,
        count: u64,
        consent: Consent,
    ) -> Result<Value, HarnessError> {
        if self.prescriptions.contains_key(label) {
            return Err(HarnessError::Scenario(format!("prescription label {label} reused")));
        }
        let session = self.ensure_connected(patient, doctor)?;
        let (thread, offer) = match self.doctor(doctor)?.prescribe(&session, attributes, count) {
            Ok(r) => r,
            Err(AgentError::LedgerRejected { receipt, .. }) => {
                return Ok(json!({"status": "ledger-rejected", "error": receipt.error_message}))
            }
            Err(e) => return Ok(error_outcome(e)),
        };
        self.collect_events();
        self.send(doctor, offer);
        self.pump();
        let answer = match consent {
            Consent::Accept => self.patient(patient)?.accept_offer(&thread),
            Consent::Decline => self.patient(patient)?.decline_offer(&thread),
        }
        .map_err(agent_err)?;
        self.send(patient, answer);
        self.pump();
        self.prescriptions.insert(
            label.to_string(),
            Prescription { doctor: doctor.to_string(), thread: thread.clone() },
        );
        let remaining = self.remaining(label)?;
        let status = match consent {
            Consent::Decline => "declined",
            Consent::Accept if self.patient(patient)?.wallet().credentials().contains_key(&thread) => "ok",
            Consent::Accept => "not-delivered",
        };
        Ok(json!({"status": status, "remaining": remaining}))
    }

    fn remaining(&mut self, label: &str) -> Result<Option<u64>, HarnessError> {
        let rx = self.prescription(label)?;
        let (doctor, thread) = (rx.doctor.clone(), rx.thread.clone());
        let d = self.doctor(&doctor)?;
        let contract = d.onboarding().map(|o| o.contract_address);
        let pk = d.prescription_key(&thread);
        Ok(contract.zip(pk).and_then(|(c, pk)| self.ledger.query_token(&c, &pk)).map(|t| t.remaining_redemptions))
    }

    fn request(&mut self, pharmacy: &str, patient: &str) -> Result<String, HarnessError> {
        let session = self.ensure_connected(patient, pharmacy)?;
        let (thread, out) = self.pharmacy(pharmacy)?.request_redemption(&session).map_err(agent_err)?;
        self.send(pharmacy, out);
        Ok(thread)
    }

    fn result_for(&mut self, pharmacy: &str, thread: &str) -> Result<Value, HarnessError> {
        let record = self.pharmacy(pharmacy)?.records().iter().rev().find(|r| r.thread == thread).cloned();
        Ok(match record {
            Some(r) => json!({
                "status": r.result.status,
                "reason": r.result.reason,
                "message": r.result.message,
                "remaining": r.result.remaining_redemptions,
            }),
            None => json!({"status": "no-result"}),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn redeem(
        &mut self,
        pharmacy: &str,
        patient: &str,
        label: &str,
        consent: Consent,
        tamper: Option<Tamper>,
        replay: bool,
        withhold: &[String],
    ) -> Result<Value, HarnessError> {
        let credential = self.prescription(label)?.thread.clone();
        let thread = self.request(pharmacy, patient)?;
        self.pump();
        let out = if consent == Consent::Decline {
            self.patient(patient)?.decline_proof(&thread).map_err(agent_err)?
        } else {
            let mut presentation = if replay {
                self.sent
                    .get(label)
                    .cloned()
                    .ok_or_else(|| HarnessError::Scenario(format!("nothing to replay for {label}")))?
            } else if withhold.is_empty() {
                self.patient(patient)?.respond(&thread, &credential).map_err(agent_err)?
            } else {
                self.patient(patient)?.respond_withholding(&thread, &credential, withhold).map_err(agent_err)?
            };
            apply_tamper(&mut presentation, tamper);
            if !replay {
                self.sent.insert(label.to_string(), presentation.clone());
            }
            self.patient(patient)?.send_presentation(&thread, presentation).map_err(agent_err)?
        };
        self.send(patient, out);
        self.pump();
        // remaining is read back from the ledger, not taken from the pharmacy
        let mut outcome = self.result_for(pharmacy, &thread)?;
        outcome["remaining"] = json!(self.remaining(label)?);
        Ok(outcome)
    }

    fn race(&mut self, patient: &str, label: &str, pharmacies: &[String]) -> Result<Value, HarnessError> {
        let credential = self.prescription(label)?.thread.clone();
        let mut threads = Vec::new();
        for pharmacy in pharmacies {
            threads.push((pharmacy.clone(), self.request(pharmacy, patient)?));
        }
        self.pump();
        // every presentation is in flight before any pharmacy sees one
        for (_, thread) in &threads {
            let out = self.patient(patient)?.present(thread, &credential).map_err(agent_err)?;
            self.send(patient, out);
        }
        self.pump();
        let (mut approved, mut rejected) = (0, 0);
        let mut reasons: BTreeMap<String, u64> = BTreeMap::new();
        let mut messages: BTreeMap<String, u64> = BTreeMap::new();
        for (pharmacy, thread) in &threads {
            let result = self.result_for(pharmacy, thread)?;
            if result["status"] == "dispense-approved" {
                approved += 1;
            } else {
                rejected += 1;
                let reason = result["reason"].as_str().unwrap_or("none").to_string();
                *reasons.entry(reason).or_default() += 1;
                if let Some(m) = result["message"].as_str() {
                    *messages.entry(m.to_string()).or_default() += 1;
                }
            }
        }
        Ok(json!({
            "approved": approved,
            "rejected": rejected,
            "reasons": reasons,
            "messages": messages,
            "remaining": self.remaining(label)?,
        }))
    }

    fn ledger_create(&mut self, sender: &str, doctor: &str, count: u64) -> Result<Value, HarnessError> {
        let contract = self
            .doctor(doctor)?
            .onboarding()
            .map(|o| o.contract_address)
            .ok_or_else(|| HarnessError::Scenario(format!("{doctor} has not onboarded")))?;
        let patient_pk = KeyPair::generate(&mut self.outsider).public_key();
        let receipt: LedgerReceipt = if sender == "outsider" {
            let key = KeyPair::generate(&mut self.outsider);
            let receipt = self
                .ledger
                .submit_command(&key, Command::Create { contract_address: contract, patient_pk, count })
                .map_err(|e| HarnessError::Scenario(e.to_string()))?;
            self.record("event", json!({"actor": "outsider", "event": {"event": "ledger-receipt", "command": "create", "receipt": receipt}}));
            receipt
        } else {
            self.doctor(sender)?.create_on(contract, patient_pk, count).map_err(agent_err)?
        };
        Ok(json!({
            "status": receipt.status,
            "error_code": receipt.error_code,
            "error": receipt.error_message,
        }))
    }
}

fn agent_err(e: AgentError) -> HarnessError {
    HarnessError::Agent(e.to_string())
}

fn apply_tamper(p: &mut Presentation, tamper: Option<Tamper>) {
    match tamper {
        None => {}
        Some(Tamper::Value) => {
            if let Some(a) = p.disclosed.iter_mut().find(|a| a.name == crate::credentials::QUANTITY) {
                a.value.push('0');
            }
        }
        Some(Tamper::IssuerSignature) => p.issuer_signature.0[0] ^= 1,
        Some(Tamper::HolderSignature) => p.holder_signature.0[0] ^= 1,
    }
}

/// Run `scenario` on the in-memory transport. `seed` overrides the
/// scenario's own seed.
pub fn run_scenario(scenario: &Scenario, seed: Option<u64>) -> Result<RunReport, HarnessError> {
    run_scenario_on(scenario, seed, Arc::new(MemoryTransport::new()))
}

pub fn run_scenario_on(
    scenario: &Scenario,
    seed: Option<u64>,
    transport: Arc<dyn Transport>,
) -> Result<RunReport, HarnessError> {
    let runner = Runner::new(scenario, seed.unwrap_or(scenario.seed), transport)?;
    Ok(runner.run(&scenario.steps))
}
