//! The full happy path on any transport, with the two patient decisions
//! delegated to the caller. Used by `rxledger demo` and the latency check.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::HarnessError;
use crate::agents::{
    AgentError, Doctor, Invitation, Outgoing, Patient, Pharmacy, PharmacyConfig, RedemptionResult, Transport,
};
use crate::credentials::{PATIENT_NAME, PHARMACEUTICAL, QUANTITY};
use crate::ledger::Ledger;
use crate::registry::Registry;

/// A decision the patient has to make.
#[derive(Debug, Clone)]
pub enum Prompt {
    Offer { from: String, preview: BTreeMap<String, String>, count: u64 },
    ProofRequest { from: String, requested: Vec<String> },
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowReport {
    /// Machine time per phase, in order, excluding time spent waiting for
    /// a decision.
    pub phases: Vec<(&'static str, Duration)>,
    pub total: Duration,
    pub result: RedemptionResult,
}

struct Actors {
    doctor: Doctor,
    patient: Patient,
    pharmacy: Pharmacy,
    endpoints: [String; 3],
    transport: Arc<dyn Transport>,
    in_flight: usize,
}

impl Actors {
    fn send(&mut self, out: Outgoing) -> Result<(), HarnessError> {
        self.transport.send(&out.to, &out.frame).map_err(|e| HarnessError::Agent(e.to_string()))?;
        self.in_flight += 1;
        Ok(())
    }

    fn pump(&mut self) -> Result<(), HarnessError> {
        let deadline = Instant::now() + Duration::from_secs(10);
        while self.in_flight > 0 {
            let mut idle = true;
            for i in 0..3 {
                let Some(frame) = self.transport.try_recv(&self.endpoints[i]) else { continue };
                idle = false;
                self.in_flight -= 1;
                let outs = match i {
                    0 => self.doctor.handle(&frame),
                    1 => self.patient.handle(&frame),
                    _ => self.pharmacy.handle(&frame),
                }
                .map_err(agent_err)?;
                for out in outs {
                    self.send(out)?;
                }
            }
            if idle {
                if Instant::now() > deadline {
                    return Err(HarnessError::Agent(format!("{} frames never arrived", self.in_flight)));
                }
                std::thread::yield_now();
            }
        }
        Ok(())
    }

    fn connect(&mut self, invitation: Invitation) -> Result<String, HarnessError> {
        let out = self.patient.accept_invitation(&invitation).map_err(agent_err)?;
        let session = out.session_id.clone();
        self.send(out)?;
        self.pump()?;
        Ok(session)
    }
}

fn agent_err(e: AgentError) -> HarnessError {
    HarnessError::Agent(e.to_string())
}

/// onboard, connect, prescribe, redeem. `decide` answers the patient's
/// prompts; returning false declines.
pub fn happy_path(
    transport: Arc<dyn Transport>,
    seed: u64,
    values: &BTreeMap<String, String>,
    mut decide: impl FnMut(&Prompt) -> bool,
) -> Result<FlowReport, HarnessError> {
    use rand::SeedableRng;
    let rng = |stream: u64| {
        let mut r = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        r.set_stream(stream);
        r
    };
    let registry = Arc::new(Registry::new());
    let ledger = Ledger::new();
    let register = |name: &str| transport.register(name).map_err(|e| HarnessError::Agent(e.to_string()));
    let endpoints = [register("doctor")?, register("patient")?, register("pharmacy")?];
    let mut actors = Actors {
        doctor: Doctor::new("doctor", &endpoints[0], rng(1), registry.clone(), ledger.clone()),
        patient: Patient::new("patient", &endpoints[1], rng(2), registry.clone()),
        pharmacy: Pharmacy::new(
            "pharmacy",
            &endpoints[2],
            rng(3),
            registry,
            ledger,
            PharmacyConfig { request_patient_name: true, ..PharmacyConfig::default() },
        ),
        endpoints: endpoints.clone(),
        transport: transport.clone(),
        in_flight: 0,
    };

    let mut phases = Vec::new();
    let mut waiting = Duration::ZERO;
    let mut clock = Instant::now();
    let start = clock;
    let mut lap = |name: &'static str, waiting: &mut Duration, phases: &mut Vec<_>| {
        phases.push((name, clock.elapsed().saturating_sub(*waiting)));
        *waiting = Duration::ZERO;
        clock = Instant::now();
    };

    let onboarding = actors.doctor.onboard().map_err(agent_err)?;
    actors.pharmacy.onboard().map_err(agent_err)?;
    actors.pharmacy.trust(onboarding.did.clone());
    lap("onboard", &mut waiting, &mut phases);

    let invitation = actors.doctor.invite().map_err(agent_err)?;
    let doctor_session = actors.connect(invitation)?;
    lap("connect", &mut waiting, &mut phases);

    let (thread, offer) = actors.doctor.prescribe(&doctor_session, values, 1).map_err(agent_err)?;
    actors.send(offer)?;
    actors.pump()?;
    let asked = Instant::now();
    let accepted = decide(&Prompt::Offer { from: onboarding.did.to_string(), preview: values.clone(), count: 1 });
    waiting += asked.elapsed();
    let answer = if accepted { actors.patient.accept_offer(&thread) } else { actors.patient.decline_offer(&thread) };
    actors.send(answer.map_err(agent_err)?)?;
    actors.pump()?;
    if !accepted {
        return Err(agent_err(AgentError::PatientDeclined));
    }
    if !actors.patient.wallet().credentials().contains_key(&thread) {
        return Err(HarnessError::Agent("credential was not stored".into()));
    }
    lap("prescribe", &mut waiting, &mut phases);

    let invitation = actors.pharmacy.invite().map_err(agent_err)?;
    let pharmacy_session = actors.connect(invitation)?;
    let (proof_thread, request) = actors.pharmacy.request_redemption(&pharmacy_session).map_err(agent_err)?;
    actors.send(request)?;
    actors.pump()?;
    let requested = actors
        .patient
        .proof_request(&proof_thread)
        .map(|r| r.requested_attribute_names.iter().cloned().collect())
        .unwrap_or_default();
    let asked = Instant::now();
    let share = decide(&Prompt::ProofRequest { from: pharmacy_session.clone(), requested });
    waiting += asked.elapsed();
    let out = if share {
        actors.patient.present(&proof_thread, &thread)
    } else {
        actors.patient.decline_proof(&proof_thread)
    };
    actors.send(out.map_err(agent_err)?)?;
    actors.pump()?;
    lap("redeem", &mut waiting, &mut phases);

    let result = actors
        .pharmacy
        .records()
        .iter()
        .rev()
        .find(|r| r.thread == proof_thread)
        .map(|r| r.result.clone())
        .ok_or_else(|| HarnessError::Agent("pharmacy recorded no result".into()))?;
    let total = phases.iter().map(|(_, d)| *d).sum::<Duration>().min(start.elapsed());
    Ok(FlowReport { phases, total, result })
}

/// The attribute values the demo prescribes.
pub fn sample_prescription() -> BTreeMap<String, String> {
    [(PATIENT_NAME, "Jane Doe"), (PHARMACEUTICAL, "Amoxicillin 500mg"), (QUANTITY, "20")]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{DispenseStatus, MemoryTransport, TcpTransport};

    #[test]
    fn memory_flow_approves() {
        let mut prompts = Vec::new();
        let report = happy_path(Arc::new(MemoryTransport::new()), 1, &sample_prescription(), |p| {
            prompts.push(p.clone());
            true
        })
        .unwrap();
        assert_eq!(report.result.status, DispenseStatus::DispenseApproved);
        assert_eq!(report.phases.iter().map(|p| p.0).collect::<Vec<_>>(), ["onboard", "connect", "prescribe", "redeem"]);
        assert_eq!(prompts.len(), 2);
        let Prompt::ProofRequest { requested, .. } = &prompts[1] else { panic!("second prompt is the proof request") };
        assert!(requested.contains(&"spending_key".to_string()));
    }

    #[test]
    fn tcp_flow_approves() {
        let report = happy_path(Arc::new(TcpTransport::new()), 2, &sample_prescription(), |_| true).unwrap();
        assert_eq!(report.result.status, DispenseStatus::DispenseApproved);
    }

    #[test]
    fn declined_share_is_rejected() {
        let report = happy_path(Arc::new(MemoryTransport::new()), 3, &sample_prescription(), |p| {
            matches!(p, Prompt::Offer { .. })
        })
        .unwrap();
        assert_eq!(report.result.status, DispenseStatus::DispenseRejected);
        assert_eq!(report.result.reason.as_deref(), Some("user-declined"));
    }

    #[test]
    fn declined_offer_stops_the_flow() {
        let outcome = happy_path(Arc::new(MemoryTransport::new()), 4, &sample_prescription(), |_| false);
        assert!(matches!(outcome, Err(HarnessError::Agent(_))));
    }
}
