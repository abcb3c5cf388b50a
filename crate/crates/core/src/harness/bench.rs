//! Load generator for the in-process ledger.
//!
//! Each writer has its own signing key, so writers never contend for
//! nonces: create writers are added as contract issuers, spend writers
//! each own a token with a practically unbounded count.

use std::sync::{Arc, Barrier};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::HarnessError;
use crate::crypto::{self, Digest, KeyPair};
use crate::ledger::{Command, Ledger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchOp {
    Create,
    Spend,
}

impl std::str::FromStr for BenchOp {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "create" => Ok(BenchOp::Create),
            "spend" => Ok(BenchOp::Spend),
            other => Err(format!("unknown op {other:?}, expected create or spend")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub op: BenchOp,
    /// Offered rate in tx/s across all writers; `None` runs closed-loop
    /// as fast as the writers can submit.
    pub rate: Option<f64>,
    pub duration: Duration,
    pub writers: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub op: BenchOp,
    pub offered_rate: Option<f64>,
    pub achieved_tps: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
    pub duration_s: f64,
    pub writers: usize,
    pub submissions: u64,
    pub ok: u64,
    pub rejected: u64,
    pub config_fingerprint: String,
}

fn percentile(sorted: &[Duration], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1].as_secs_f64() * 1e3
}

struct WriterResult {
    latencies: Vec<Duration>,
    ok: u64,
    rejected: u64,
}

fn setup(ledger: &Ledger, config: &BenchConfig, rng: &mut ChaCha20Rng) -> Result<(Digest, Vec<KeyPair>), HarnessError> {
    let admin = KeyPair::generate(rng);
    let deploy = ledger.submit_command(&admin, Command::Deploy)?;
    let contract_address = deploy.contract_address.expect("deploy receipts carry the address");
    let mut keys = Vec::with_capacity(config.writers);
    for _ in 0..config.writers {
        let key = KeyPair::generate(rng);
        let receipt = match config.op {
            BenchOp::Create => ledger
                .submit_command(&admin, Command::AddIssuer { contract_address, new_issuer_pk: key.public_key() })?,
            BenchOp::Spend => ledger.submit_command(
                &admin,
                Command::Create { contract_address, patient_pk: key.public_key(), count: u64::MAX },
            )?,
        };
        if !receipt.is_ok() {
            return Err(HarnessError::Setup(format!("{:?}", receipt.error_message)));
        }
        keys.push(key);
    }
    Ok((contract_address, keys))
}

pub fn bench(config: BenchConfig) -> Result<BenchReport, HarnessError> {
    if config.writers == 0 || config.duration.is_zero() || config.rate.is_some_and(|r| r <= 0.0 || !r.is_finite()) {
        return Err(HarnessError::Setup("writers, duration and rate must be positive".into()));
    }
    let ledger = Ledger::new();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let (contract_address, keys) = setup(&ledger, &config, &mut rng)?;
    let height_before = ledger.height();
    let barrier = Arc::new(Barrier::new(config.writers + 1));
    // per-writer interval for open-loop pacing
    let interval = config.rate.map(|r| Duration::from_secs_f64(config.writers as f64 / r));

    let handles: Vec<_> = keys
        .into_iter()
        .enumerate()
        .map(|(w, key)| {
            let (ledger, barrier, duration, op) = (ledger.clone(), barrier.clone(), config.duration, config.op);
            let writers = config.writers as f64;
            let seed = config.seed.wrapping_add(1 + w as u64);
            std::thread::spawn(move || {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                let mut result = WriterResult { latencies: Vec::new(), ok: 0, rejected: 0 };
                barrier.wait();
                let start = Instant::now();
                // stagger writers across the first interval
                let offset = interval.map_or(Duration::ZERO, |i| i.mul_f64(w as f64 / writers));
                let mut i: u32 = 0;
                loop {
                    let due = match interval {
                        Some(step) => {
                            let due = offset + step * i;
                            if due >= duration {
                                break;
                            }
                            due
                        }
                        None => {
                            if start.elapsed() >= duration {
                                break;
                            }
                            Duration::ZERO
                        }
                    };
                    let now = start.elapsed();
                    if due > now {
                        std::thread::sleep(due - now);
                    }
                    let command = match op {
                        BenchOp::Create => Command::Create {
                            contract_address,
                            patient_pk: KeyPair::generate(&mut rng).public_key(),
                            count: 1,
                        },
                        BenchOp::Spend => Command::Spend { contract_address },
                    };
                    // Paced latency counts from the scheduled send time, so
                    // a backlog shows up in the percentiles.
                    let sent = if interval.is_some() { (start + due).min(Instant::now()) } else { Instant::now() };
                    match ledger.submit_command(&key, command) {
                        Ok(receipt) if receipt.is_ok() => result.ok += 1,
                        _ => result.rejected += 1,
                    }
                    result.latencies.push(sent.elapsed());
                    i += 1;
                }
                result
            })
        })
        .collect();

    barrier.wait();
    let start = Instant::now();
    let results: Vec<WriterResult> = handles.into_iter().map(|h| h.join().expect("writer panicked")).collect();
    // Never divide by less than the configured window: achieved can then
    // not exceed offered.
    let elapsed = start.elapsed().max(config.duration);

    let mut latencies: Vec<Duration> = results.iter().flat_map(|r| r.latencies.iter().copied()).collect();
    latencies.sort_unstable();
    let ok: u64 = results.iter().map(|r| r.ok).sum();
    let rejected: u64 = results.iter().map(|r| r.rejected).sum();
    let submissions = latencies.len() as u64;

    // post-hoc audit against the ledger itself
    let ordered = ledger.height() - height_before;
    if ok + rejected != submissions || ordered != submissions {
        return Err(HarnessError::Audit(format!("{submissions} submitted, {ok} ok, {rejected} rejected, {ordered} ordered")));
    }
    let state = ledger.snapshot();
    let contract = state.contract(&contract_address).expect("contract exists");
    let consistent = match config.op {
        BenchOp::Create => contract.prescriptions.len() as u64 == ok,
        BenchOp::Spend => {
            let spent: u64 = contract.prescriptions.values().map(|t| u64::MAX - t.remaining_redemptions).sum();
            spent == ok
        }
    };
    if !consistent {
        return Err(HarnessError::Audit(format!("ledger state disagrees with {ok} ok receipts")));
    }

    let fingerprint = crypto::hash_canonical(&json!({
        "op": config.op,
        "rate": config.rate.map(|r| r.to_string()),
        "duration_ms": config.duration.as_millis() as u64,
        "writers": config.writers,
        "seed": config.seed,
        "version": env!("CARGO_PKG_VERSION"),
    }))
    .expect("canonicalizable")
    .short_hex();

    Ok(BenchReport {
        op: config.op,
        offered_rate: config.rate,
        achieved_tps: submissions as f64 / elapsed.as_secs_f64(),
        p50_ms: percentile(&latencies, 50.0),
        p95_ms: percentile(&latencies, 95.0),
        p99_ms: percentile(&latencies, 99.0),
        max_ms: latencies.last().map_or(0.0, |d| d.as_secs_f64() * 1e3),
        duration_s: elapsed.as_secs_f64(),
        writers: config.writers,
        submissions,
        ok,
        rejected,
        config_fingerprint: fingerprint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_are_nearest_rank() {
        let xs: Vec<Duration> = (1..=100).map(Duration::from_millis).collect();
        assert_eq!(percentile(&xs, 50.0), 50.0);
        assert_eq!(percentile(&xs, 99.0), 99.0);
        assert_eq!(percentile(&xs, 100.0), 100.0);
        assert_eq!(percentile(&[], 99.0), 0.0);
    }

    #[test]
    fn paced_run_accounts_exactly() {
        let report = bench(BenchConfig {
            op: BenchOp::Create,
            rate: Some(40.0),
            duration: Duration::from_millis(500),
            writers: 2,
            seed: 1,
        })
        .unwrap();
        assert_eq!(report.submissions, 20);
        assert_eq!(report.ok, 20);
        assert!(report.achieved_tps <= 40.0 + 1e-9);
        assert!(report.p50_ms <= report.p95_ms && report.p95_ms <= report.p99_ms && report.p99_ms <= report.max_ms);
    }

    #[test]
    fn ten_per_second_for_five_seconds() {
        let report = bench(BenchConfig {
            op: BenchOp::Create,
            rate: Some(10.0),
            duration: Duration::from_secs(5),
            writers: 1,
            seed: 3,
        })
        .unwrap();
        assert_eq!(report.ok, 50);
        assert!((9.0..=11.0).contains(&report.achieved_tps), "{}", report.achieved_tps);
    }

    #[test]
    fn closed_loop_spend_run() {
        let report = bench(BenchConfig {
            op: BenchOp::Spend,
            rate: None,
            duration: Duration::from_millis(200),
            writers: 4,
            seed: 2,
        })
        .unwrap();
        assert!(report.submissions > 0);
        assert_eq!(report.ok, report.submissions);
    }

    #[test]
    fn rejects_bad_config() {
        let config = BenchConfig { op: BenchOp::Create, rate: Some(0.0), duration: Duration::from_secs(1), writers: 1, seed: 0 };
        assert!(bench(config).is_err());
    }
}
