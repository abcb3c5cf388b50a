use std::sync::{Arc, Barrier};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::HarnessError;
use crate::crypto::KeyPair;
use crate::ledger::{Command, ErrorCode, Ledger, ALREADY_SPENT_MESSAGE};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RaceReport {
    pub count: u64,
    pub spenders: usize,
    pub ok: usize,
    pub already_spent: usize,
    pub other: usize,
    pub remaining: u64,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl RaceReport {
    /// The outcome total ordering forces: min(k, n) winners, the rest
    /// refused with "Already spent", and the token drained accordingly.
    pub fn is_exact(&self) -> bool {
        let winners = (self.count as usize).min(self.spenders);
        self.ok == winners
            && self.already_spent == self.spenders - winners
            && self.other == 0
            && self.remaining == self.count - winners as u64
    }
}

/// `spenders` threads all try to spend one token of `count` redemptions
/// at once, released by a barrier in a seeded random order with seeded
/// random start jitter.
pub fn race_test(count: u64, spenders: usize, seed: u64) -> Result<RaceReport, HarnessError> {
    let started = Instant::now();
    let ledger = Ledger::new();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let doctor = KeyPair::generate(&mut rng);
    let deploy = ledger.submit_command(&doctor, Command::Deploy)?;
    let contract_address = deploy.contract_address.expect("deploy receipts carry the address");
    let prescription = KeyPair::generate(&mut rng);
    let created =
        ledger.submit_command(&doctor, Command::Create { contract_address, patient_pk: prescription.public_key(), count })?;
    if !created.is_ok() {
        return Err(HarnessError::Setup(format!("create rejected: {:?}", created.error_message)));
    }

    let mut order: Vec<usize> = (0..spenders).collect();
    order.shuffle(&mut rng);
    let jitter: Vec<u32> = (0..spenders).map(|_| rng.gen_range(0..4)).collect();
    let barrier = Arc::new(Barrier::new(spenders));
    let handles: Vec<_> = order
        .into_iter()
        .map(|slot| {
            let (ledger, key, barrier, yields) = (ledger.clone(), prescription.clone(), barrier.clone(), jitter[slot]);
            std::thread::spawn(move || {
                barrier.wait();
                for _ in 0..yields {
                    std::thread::yield_now();
                }
                ledger.submit_command(&key, Command::Spend { contract_address })
            })
        })
        .collect();

    let (mut ok, mut already_spent, mut other) = (0, 0, 0);
    for handle in handles {
        match handle.join().expect("spender thread panicked") {
            Ok(r) if r.is_ok() => ok += 1,
            Ok(r) if r.error_code == Some(ErrorCode::AlreadySpent)
                && r.error_message.as_deref() == Some(ALREADY_SPENT_MESSAGE) =>
            {
                already_spent += 1
            }
            _ => other += 1,
        }
    }
    let remaining = ledger
        .query_token(&contract_address, &prescription.public_key())
        .map_or(0, |t| t.remaining_redemptions);
    Ok(RaceReport { count, spenders, ok, already_spent, other, remaining, elapsed: started.elapsed() })
}
