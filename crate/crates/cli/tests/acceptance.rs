//! Acceptance gate. Runs every criterion in sequence (the timing checks
//! must not share the machine with each other) and prints one line per
//! criterion. Exits nonzero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::Command as Process;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Map, Value};

use rxledger_core::agents::{DispenseStatus, TcpTransport};
use rxledger_core::credentials::{
    e_prescription_schema, present, verify_presentation, verify_presentation_bytes, Credential, FailureReason,
    Issuer, ProofRequest, VerificationPolicy, CONTRACT_ADDRESS, CREDENTIAL_INDEX, PATIENT_NAME, PHARMACEUTICAL,
    QUANTITY, SPENDING_KEY,
};
use rxledger_core::crypto::{self, Digest, KeyPair, PublicKey, Signature};
use rxledger_core::harness::{self, flow, BenchConfig, BenchOp};
use rxledger_core::ledger::{
    contract_address, Command, ErrorCode, Ledger, LedgerReceipt, LedgerTransaction, SubmitError,
    ALREADY_SPENT_MESSAGE, NOT_ADMIN_MESSAGE,
};
use rxledger_core::registry::{
    CredentialDefinition, Did, DidDocument, RecordKind, Registry, RegistryError, RegistryLookup, RevocationBitmap,
    RevocationRegistry, Role,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn ensure(cond: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(message())
    }
}

// ---------------------------------------------------------------- 1

fn double_spend_safety() -> Outcome {
    let start = Instant::now();
    for k in 1..=3u64 {
        let out = Process::new(env!("CARGO_BIN_EXE_rxledger"))
            .args(["race", "--count", &k.to_string(), "--spenders", "100", "--repeat", "50", "--seed", &(k * 1000).to_string()])
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || format!("k={k}: exit {:?}", out.status.code()))?;
        let lines: Vec<Value> = String::from_utf8_lossy(&out.stdout)
            .lines()
            .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        ensure(lines.len() == 50, || format!("k={k}: {} repetitions", lines.len()))?;
        for (i, r) in lines.iter().enumerate() {
            let counts = (r["ok"].as_u64(), r["already_spent"].as_u64(), r["other"].as_u64(), r["remaining"].as_u64());
            ensure(counts == (Some(k), Some(100 - k), Some(0), Some(0)), || format!("k={k} rep {i}: {r}"))?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("3 x 50 races of 100 spenders exact, {:.1} s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------- 2

/// Brute-force sequential interpreter: plain vectors, linear scans, no
/// shared code with the ledger's state machine.
#[derive(Default)]
struct Oracle {
    height: u64,
    nonces: Vec<(PublicKey, u64)>,
    contracts: Vec<OracleContract>,
}

struct OracleContract {
    address: Digest,
    admin: PublicKey,
    issuers: Vec<PublicKey>,
    tokens: Vec<(PublicKey, PublicKey, u64)>,
}

enum OracleResult {
    Stale,
    BadSignature,
    Receipt { ok: bool, code: Option<&'static str>, remaining: Option<u64>, address: Option<Digest> },
}

fn on_curve(pk: &PublicKey) -> bool {
    crypto::verify(pk, b"", &Signature([0; 64])).is_ok()
}

impl Oracle {
    fn last_nonce(&self, pk: &PublicKey) -> Option<u64> {
        self.nonces.iter().find(|(k, _)| k == pk).map(|(_, n)| *n)
    }

    fn run(&mut self, tx: &LedgerTransaction, signature_ok: bool) -> OracleResult {
        if self.last_nonce(&tx.sender).is_some_and(|last| tx.nonce <= last) {
            return OracleResult::Stale;
        }
        if !signature_ok {
            return OracleResult::BadSignature;
        }
        self.height += 1;
        match self.nonces.iter_mut().find(|(k, _)| *k == tx.sender) {
            Some(slot) => slot.1 = tx.nonce,
            None => self.nonces.push((tx.sender, tx.nonce)),
        }
        let reject = |code| OracleResult::Receipt { ok: false, code: Some(code), remaining: None, address: None };
        let ok = |remaining| OracleResult::Receipt { ok: true, code: None, remaining, address: None };
        let sender = tx.sender;
        match &tx.command {
            Command::Deploy => {
                // address = H({deployer, nonce}) written out independently
                let address = crypto::hash(
                    format!(r#"{{"deployer":"{}","nonce":{}}}"#, sender.to_b64(), tx.nonce).as_bytes(),
                );
                self.contracts.push(OracleContract { address, admin: sender, issuers: vec![sender], tokens: vec![] });
                OracleResult::Receipt { ok: true, code: None, remaining: None, address: Some(address) }
            }
            Command::Create { contract_address, patient_pk, count } => {
                let Some(c) = self.contracts.iter_mut().find(|c| c.address == *contract_address) else {
                    return reject("unknown-contract");
                };
                if !c.issuers.contains(&sender) {
                    return reject("not-authorized");
                }
                if *count == 0 {
                    return reject("bad-count");
                }
                if !on_curve(patient_pk) {
                    return reject("malformed-key");
                }
                if c.tokens.iter().any(|(pk, _, _)| pk == patient_pk) {
                    return reject("duplicate-token");
                }
                c.tokens.push((*patient_pk, sender, *count));
                ok(Some(*count))
            }
            Command::Spend { contract_address } => {
                let Some(c) = self.contracts.iter_mut().find(|c| c.address == *contract_address) else {
                    return reject("unknown-contract");
                };
                match c.tokens.iter_mut().find(|(pk, _, n)| *pk == sender && *n > 0) {
                    Some(token) => {
                        token.2 -= 1;
                        ok(Some(token.2))
                    }
                    None => reject("already-spent"),
                }
            }
            Command::AddIssuer { contract_address, new_issuer_pk } => {
                let Some(c) = self.contracts.iter_mut().find(|c| c.address == *contract_address) else {
                    return reject("unknown-contract");
                };
                if c.admin != sender {
                    return reject("not-authorized");
                }
                if !on_curve(new_issuer_pk) {
                    return reject("malformed-key");
                }
                if !c.issuers.contains(new_issuer_pk) {
                    c.issuers.push(*new_issuer_pk);
                }
                ok(None)
            }
        }
    }

    /// The ledger's published state layout, rebuilt from the oracle's
    /// vectors.
    fn digest(&self) -> Digest {
        let mut contracts = Map::new();
        for c in &self.contracts {
            let mut issuers = c.issuers.clone();
            issuers.sort_by_key(|pk| pk.0);
            let tokens: Map<String, Value> = c
                .tokens
                .iter()
                .map(|(pk, issuer, n)| (pk.to_b64(), json!({"issuer": issuer, "remaining_redemptions": n})))
                .collect();
            contracts.insert(
                c.address.to_b64(),
                json!({"contract_address": c.address, "admin": c.admin, "issuers": issuers, "prescriptions": tokens}),
            );
        }
        let nonces: Map<String, Value> = self.nonces.iter().map(|(pk, n)| (pk.to_b64(), json!(n))).collect();
        crypto::hash_canonical(&json!({"height": self.height, "contracts": contracts, "last_nonces": nonces})).unwrap()
    }
}

fn expected_message(code: &str) -> &'static str {
    match code {
        "not-authorized" => "Sender is not the admin of the contract",
        "already-spent" => "Already spent",
        "duplicate-token" => "Prescription already exists",
        "bad-count" => "Count must be at least 1",
        "unknown-contract" => "Unknown contract",
        _ => "Malformed public key",
    }
}

fn matches(got: &Result<LedgerReceipt, SubmitError>, want: &OracleResult) -> bool {
    match (got, want) {
        (Err(SubmitError::StaleNonce { .. }), OracleResult::Stale) => true,
        (Err(SubmitError::BadSignature), OracleResult::BadSignature) => true,
        (Ok(r), OracleResult::Receipt { ok, code, remaining, address }) => {
            r.is_ok() == *ok
                && r.error_code.map(ErrorCode::as_str) == *code
                && r.error_message.as_deref() == code.map(expected_message)
                && r.remaining_redemptions == *remaining
                && (address.is_none() || r.contract_address == *address)
        }
        _ => false,
    }
}

fn random_sequence(ledger: &Ledger, oracle: &mut Oracle, rng: &mut ChaCha20Rng, len: usize) -> Result<(), String> {
    let keys: Vec<KeyPair> = (0..4).map(|_| KeyPair::generate(rng)).collect();
    let off_curve = {
        // find a 32-byte string that is not a curve point
        let mut bytes = [0u8; 32];
        loop {
            rng.fill_bytes(&mut bytes);
            if !on_curve(&PublicKey(bytes)) {
                break PublicKey(bytes);
            }
        }
    };
    let mut next: BTreeMap<[u8; 32], u64> = BTreeMap::new();
    let mut addresses: Vec<Digest> = vec![crypto::hash(b"nowhere")];
    for step in 0..len {
        let key = &keys[rng.gen_range(0..keys.len())];
        let pick_pk = |rng: &mut ChaCha20Rng| match rng.gen_range(0..10) {
            0 => off_curve,
            _ => keys[rng.gen_range(0..keys.len())].public_key(),
        };
        let address = addresses[rng.gen_range(0..addresses.len())];
        let command = match rng.gen_range(0..10) {
            0 | 1 => Command::Deploy,
            2..=4 => Command::Create { contract_address: address, patient_pk: pick_pk(rng), count: rng.gen_range(0..4) },
            5..=7 => Command::Spend { contract_address: address },
            _ => Command::AddIssuer { contract_address: address, new_issuer_pk: pick_pk(rng) },
        };
        let counter = next.entry(key.public_key().0).or_insert(0);
        let nonce = match rng.gen_range(0..20) {
            0 => counter.saturating_sub(1),
            1 => *counter + 3,
            _ => *counter,
        };
        let mut tx = LedgerTransaction::signed(key, nonce, command);
        let signature_ok = rng.gen_range(0..25) != 0;
        if !signature_ok {
            tx.signature.0[7] ^= 0x40;
        }
        let want = oracle.run(&tx, signature_ok);
        if matches!(want, OracleResult::Receipt { .. }) {
            *counter = nonce + 1;
        }
        if let OracleResult::Receipt { address: Some(a), .. } = want {
            addresses.push(a);
        }
        let got = ledger.submit(tx.clone());
        if !matches(&got, &want) {
            return Err(format!("step {step}: ledger gave {got:?} for {:?}", tx.command));
        }
    }
    Ok(())
}

fn contract_semantics() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(2);

    // the named properties, one by one
    let ledger = Ledger::new();
    let admin = KeyPair::generate(&mut rng);
    let delegate = KeyPair::generate(&mut rng);
    let stranger = KeyPair::generate(&mut rng);
    let token = KeyPair::generate(&mut rng);
    let deploy = ledger.submit_command(&admin, Command::Deploy).map_err(|e| e.to_string())?;
    let address = deploy.contract_address.ok_or("deploy without address")?;
    ensure(address == contract_address(&admin.public_key(), 0), || "contract address formula".into())?;
    let create = |who: &KeyPair, pk: PublicKey, count| {
        ledger.submit_command(who, Command::Create { contract_address: address, patient_pk: pk, count }).unwrap()
    };
    let r = create(&stranger, token.public_key(), 1);
    ensure(r.error_message.as_deref() == Some(NOT_ADMIN_MESSAGE), || format!("non-admin create: {r:?}"))?;
    ensure(r.error_message.as_deref() == Some("Sender is not the admin of the contract"), || "admin string".into())?;
    let r = create(&delegate, token.public_key(), 1);
    ensure(!r.is_ok(), || "delegate created before being added".into())?;
    let r = ledger
        .submit_command(&delegate, Command::AddIssuer { contract_address: address, new_issuer_pk: delegate.public_key() })
        .unwrap();
    ensure(r.error_message.as_deref() == Some(NOT_ADMIN_MESSAGE), || "non-admin add_issuer".into())?;
    let r = ledger
        .submit_command(&admin, Command::AddIssuer { contract_address: address, new_issuer_pk: delegate.public_key() })
        .unwrap();
    ensure(r.is_ok(), || format!("add_issuer: {r:?}"))?;
    ensure(create(&delegate, token.public_key(), 2).is_ok(), || "delegated create refused".into())?;
    let spend = |who: &KeyPair| ledger.submit_command(who, Command::Spend { contract_address: address }).unwrap();
    ensure(spend(&token).remaining_redemptions == Some(1), || "first spend".into())?;
    ensure(spend(&token).remaining_redemptions == Some(0), || "second spend".into())?;
    let r = spend(&token);
    ensure(r.error_message.as_deref() == Some(ALREADY_SPENT_MESSAGE), || format!("decrement guard: {r:?}"))?;
    ensure(r.error_message.as_deref() == Some("Already spent"), || "spent string".into())?;
    let r = spend(&stranger);
    ensure(!r.is_ok() && r.error_message.as_deref() == Some("Already spent"), || format!("unknown key: {r:?}"))?;

    // oracle equivalence
    for seq in 0..1000 {
        let ledger = Ledger::new();
        let mut oracle = Oracle::default();
        let len = rng.gen_range(10..60);
        random_sequence(&ledger, &mut oracle, &mut rng, len).map_err(|e| format!("sequence {seq}: {e}"))?;
        ensure(ledger.state_digest() == oracle.digest(), || format!("sequence {seq}: state digests differ"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("exact error strings, 1000 random sequences digest-equal to oracle, {:.1} s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------- 3, 4

struct Issuing {
    registry: Arc<Registry>,
    issuer: Issuer,
    key: KeyPair,
    did: Did,
}

fn issuing(rng: &mut ChaCha20Rng) -> Issuing {
    let registry = Arc::new(Registry::new());
    let key = KeyPair::generate(rng);
    let doc = DidDocument {
        did: Did::generate(rng),
        verification_key: key.public_key(),
        service_endpoint: "mem:doctor".into(),
        role: Role::Doctor,
    };
    let did = registry.register_did(doc.clone(), doc.prove(&key)).unwrap();
    let schema = e_prescription_schema();
    registry.register_schema(schema.clone()).unwrap();
    let creddef = CredentialDefinition::new(schema.schema_id, did.clone(), key.public_key());
    registry.register_creddef(creddef.clone(), creddef.prove(&key)).unwrap();
    Issuing { registry, issuer: Issuer::new(key.clone(), creddef, schema), key, did }
}

const RANDOM_VALUED: [&str; 5] = [PATIENT_NAME, PHARMACEUTICAL, QUANTITY, CONTRACT_ADDRESS, SPENDING_KEY];

fn random_value(rng: &mut ChaCha20Rng) -> String {
    let mut bytes = vec![0u8; rng.gen_range(16..=40)];
    rng.fill_bytes(&mut bytes);
    crypto::b64(&bytes)
}

fn issue_random(ctx: &mut Issuing, holder: &KeyPair, rng: &mut ChaCha20Rng) -> Credential {
    let values: BTreeMap<String, String> = RANDOM_VALUED.iter().map(|n| (n.to_string(), random_value(rng))).collect();
    let index = ctx.issuer.next_index();
    ctx.issuer.issue(&values, holder.public_key(), index, rng).unwrap()
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

fn confidentiality() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut ctx = issuing(&mut rng);
    let mut leaks = Vec::new();
    let mut checked = 0usize;
    for i in 0..200 {
        let holder = KeyPair::generate(&mut rng);
        let credential = issue_random(&mut ctx, &holder, &mut rng);
        let subset: Vec<&str> = RANDOM_VALUED.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
        let request = ProofRequest::new(&subset, BTreeSet::new(), rng.gen_bool(0.5), &mut rng);
        let shown = request.names_to_disclose();
        let bytes = present(&credential, &holder, &request).unwrap().to_bytes();
        for attr in credential.attributes.iter().filter(|a| !shown.contains(&a.name)) {
            let salt_b64 = attr.salt.to_b64();
            let mut secrets = vec![attr.salt.0.to_vec(), salt_b64.into_bytes()];
            if attr.name != CREDENTIAL_INDEX {
                let raw = crypto::unb64(&attr.value).unwrap();
                secrets.push(attr.value.clone().into_bytes());
                secrets.push(raw);
            }
            for secret in secrets {
                checked += 1;
                if contains(&bytes, &secret) {
                    leaks.push(format!("credential {i}: {} leaked", attr.name));
                }
            }
        }
    }
    ensure(leaks.is_empty(), || format!("{} leaks, first: {}", leaks.len(), leaks[0]))?;
    Ok(format!("200 presentations, {checked} withheld values and salts, 0 leaks"))
}

fn soundness() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let mut ctx = issuing(&mut rng);
    let policy = VerificationPolicy::trusting([ctx.did.clone()]);
    let mut accepted = Vec::new();
    let mut mutations = 0;
    for base in 0..100 {
        let holder = KeyPair::generate(&mut rng);
        let credential = issue_random(&mut ctx, &holder, &mut rng);
        let request = ProofRequest::new(&[PHARMACEUTICAL, QUANTITY, SPENDING_KEY], BTreeSet::new(), true, &mut rng);
        let bytes = present(&credential, &holder, &request).unwrap().to_bytes();
        let clean = verify_presentation_bytes(&bytes, ctx.registry.as_ref(), &request, &policy);
        ensure(clean.valid, || format!("base {base} rejected: {:?}", clean.failure_reason))?;
        for _ in 0..100 {
            let mut mutated = bytes.clone();
            let at = rng.gen_range(0..mutated.len());
            mutated[at] ^= rng.gen_range(1..=255u8);
            mutations += 1;
            if verify_presentation_bytes(&mutated, ctx.registry.as_ref(), &request, &policy).valid {
                accepted.push(format!("base {base} byte {at}"));
            }
        }
    }
    ensure(accepted.is_empty(), || format!("{} mutations accepted, first: {}", accepted.len(), accepted[0]))?;

    // a fresh request carries a fresh nonce; the old answer is stale
    let holder = KeyPair::generate(&mut rng);
    let credential = issue_random(&mut ctx, &holder, &mut rng);
    let first = ProofRequest::new(&[PHARMACEUTICAL], BTreeSet::new(), true, &mut rng);
    let presentation = present(&credential, &holder, &first).unwrap();
    let second = ProofRequest::new(&[PHARMACEUTICAL], BTreeSet::new(), true, &mut rng);
    let replay = verify_presentation(&presentation, ctx.registry.as_ref(), &second, &policy);
    ensure(replay.failure_reason == Some(FailureReason::StaleNonce), || format!("replay: {:?}", replay.failure_reason))?;

    ctx.issuer.revoke(&ctx.registry, &[credential.credential_index]).map_err(|e| e.to_string())?;
    let after = verify_presentation(&presentation, ctx.registry.as_ref(), &first, &policy);
    ensure(after.failure_reason == Some(FailureReason::Revoked), || format!("revoked: {:?}", after.failure_reason))?;
    Ok(format!("{mutations} single-byte mutations all rejected; replay -> stale-nonce; revoked -> revoked"))
}

// ---------------------------------------------------------------- 5

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for name in ["happy_path", "double_spend_race"] {
        let golden = std::fs::read(repo_path(&format!("testdata/transcripts/{name}.json"))).map_err(|e| e.to_string())?;
        for run in 0..5 {
            let out = dir.path().join(format!("{name}-{run}.json"));
            let status = Process::new(env!("CARGO_BIN_EXE_rxledger"))
                .arg("run-scenario")
                .arg(repo_path(&format!("scenarios/{name}.json")))
                .arg("--transcript")
                .arg(&out)
                .output()
                .map_err(|e| e.to_string())?
                .status;
            ensure(status.success(), || format!("{name} run {run}: exit {:?}", status.code()))?;
            let bytes = std::fs::read(&out).map_err(|e| e.to_string())?;
            ensure(bytes == golden, || format!("{name} run {run} differs from the frozen transcript"))?;
        }
    }
    Ok("happy_path and double_spend_race: 5 runs each byte-identical to the frozen transcripts".into())
}

// ---------------------------------------------------------------- 6

fn median_run(op: BenchOp, rate: Option<f64>, seed: u64) -> Result<harness::BenchReport, String> {
    let mut runs = Vec::new();
    for i in 0..3 {
        let config = BenchConfig { op, rate, duration: Duration::from_secs(10), writers: 8, seed: seed + i };
        let report = harness::bench(config).map_err(|e| e.to_string())?;
        ensure(report.ok + report.rejected == report.submissions, || "accounting".into())?;
        if let Some(r) = rate {
            ensure(report.achieved_tps <= r + 1e-9, || format!("achieved {} > offered {r}", report.achieved_tps))?;
        }
        runs.push(report);
    }
    runs.sort_by(|a, b| a.achieved_tps.total_cmp(&b.achieved_tps));
    Ok(runs.swap_remove(1))
}

fn performance() -> Outcome {
    let create = median_run(BenchOp::Create, None, 10)?;
    let spend = median_run(BenchOp::Spend, None, 20)?;
    let mut paced: Vec<_> = (0..3)
        .map(|i| {
            let config = BenchConfig { op: BenchOp::Create, rate: Some(500.0), duration: Duration::from_secs(10), writers: 8, seed: 30 + i };
            harness::bench(config).map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    paced.sort_by(|a, b| a.p99_ms.total_cmp(&b.p99_ms));
    let p99 = paced[1].p99_ms;
    let summary = format!(
        "create {:.0} tx/s, spend {:.0} tx/s, p99 {:.1} ms at 500 tx/s (medians of 3 x 10 s, 8 writers)",
        create.achieved_tps, spend.achieved_tps, p99
    );
    ensure(create.achieved_tps >= 2000.0, || format!("create below 2000 tx/s: {summary}"))?;
    ensure(spend.achieved_tps >= create.achieved_tps, || format!("spend slower than create: {summary}"))?;
    ensure(p99 < 50.0, || format!("p99 too high: {summary}"))?;
    Ok(summary)
}

// ---------------------------------------------------------------- 7

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let report = flow::happy_path(Arc::new(TcpTransport::new()), 7, &flow::sample_prescription(), |_| true)
        .map_err(|e| e.to_string())?;
    let wall = start.elapsed();
    ensure(report.result.status == DispenseStatus::DispenseApproved, || format!("{:?}", report.result))?;
    ensure(wall < Duration::from_millis(250), || format!("took {wall:?}"))?;
    Ok(format!("onboard -> connect -> prescribe -> redeem over loopback TCP in {:.1} ms", wall.as_secs_f64() * 1e3))
}

// ---------------------------------------------------------------- 8

fn registry_invariants() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let mut refused = 0;
    for seq in 0..1000 {
        let Issuing { registry, issuer, key, .. } = issuing(&mut rng);
        let creddef = issuer.creddef().clone();
        let id = creddef.creddef_id;
        for _ in 0..rng.gen_range(1..10) {
            let head = registry.revocation_head(&id).map_err(|e| e.to_string())?;
            match rng.gen_range(0..4) {
                0 if head.revoked.count() > 0 => {
                    // full snapshot that drops one revoked index
                    let mut indices: Vec<u64> = head.revoked.indices().collect();
                    indices.remove(rng.gen_range(0..indices.len()));
                    indices.push(rng.gen_range(0..64));
                    let bitmap = RevocationBitmap::from_indices(indices);
                    let cleared = !bitmap.is_superset_of(&head.revoked);
                    let snapshot = RevocationRegistry::signed(&creddef, head.epoch + 1, bitmap, &key);
                    let outcome = registry.publish_snapshot(snapshot);
                    if cleared {
                        ensure(outcome == Err(RegistryError::BitClear), || format!("sequence {seq}: clear accepted"))?;
                        refused += 1;
                    }
                }
                1 => {
                    let bitmap = RevocationBitmap::from_indices(head.revoked.indices().chain([rng.gen_range(0..64)]));
                    let snapshot = RevocationRegistry::signed(&creddef, head.epoch, bitmap, &key);
                    let outcome = registry.publish_snapshot(snapshot);
                    ensure(matches!(outcome, Err(RegistryError::StaleEpoch { .. })), || format!("sequence {seq}: stale epoch accepted"))?;
                    refused += 1;
                }
                _ => {
                    let fresh: Vec<u64> = (0..rng.gen_range(0..4)).map(|_| rng.gen_range(0..64)).collect();
                    issuer.revoke(&registry, &fresh).map_err(|e| format!("sequence {seq}: {e}"))?;
                }
            }
            let now = registry.revocation_head(&id).map_err(|e| e.to_string())?;
            ensure(now.revoked.is_superset_of(&head.revoked), || format!("sequence {seq}: bit cleared"))?;
        }
        let head = registry.revocation_head(&id).map_err(|e| e.to_string())?.epoch;
        for e in 1..=head {
            let before = registry.revocation_at(&id, e - 1).map_err(|e| e.to_string())?;
            let after = registry.revocation_at(&id, e).map_err(|e| e.to_string())?;
            ensure(after.revoked.is_superset_of(&before.revoked), || format!("sequence {seq}: epoch {e} not monotone"))?;
        }
    }

    // byte-stable re-read and content ids
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("registry.jsonl");
    {
        let registry = Registry::open(&path).map_err(|e| e.to_string())?;
        let key = KeyPair::generate(&mut rng);
        let doc = DidDocument { did: Did::generate(&mut rng), verification_key: key.public_key(), service_endpoint: "x".into(), role: Role::Doctor };
        let did = registry.register_did(doc.clone(), doc.prove(&key)).unwrap();
        let schema = e_prescription_schema();
        registry.register_schema(schema.clone()).unwrap();
        let creddef = CredentialDefinition::new(schema.schema_id, did, key.public_key());
        registry.register_creddef(creddef.clone(), creddef.prove(&key)).unwrap();
        Issuer::new(key, creddef, schema).revoke(&registry, &[3, 9]).unwrap();
    }
    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    for _ in 0..3 {
        let reopened = Registry::open(&path).map_err(|e| e.to_string())?;
        let rendered: Vec<u8> = reopened.records().iter().flat_map(|r| [r.to_line(), b"\n".to_vec()].concat()).collect();
        ensure(rendered == bytes, || "re-rendered log differs from file".into())?;
        drop(reopened);
        ensure(std::fs::read(&path).map_err(|e| e.to_string())? == bytes, || "re-open changed the file".into())?;
    }
    let loaded = Registry::load(&path).map_err(|e| e.to_string())?;
    for record in loaded.records_of(RecordKind::Schema) {
        let body = &record.body;
        let id = crypto::hash(
            format!(
                r#"{{"attribute_names":{},"name":{},"version":{}}}"#,
                body["attribute_names"], body["name"], body["version"]
            )
            .as_bytes(),
        );
        ensure(body["schema_id"] == json!(id), || "schema id does not recompute".into())?;
    }
    for record in loaded.records_of(RecordKind::Creddef) {
        let body = &record.body;
        let id = crypto::hash(
            format!(
                r#"{{"issuer_did":{},"issuer_signing_key":{},"schema_id":{}}}"#,
                body["issuer_did"], body["issuer_signing_key"], body["schema_id"]
            )
            .as_bytes(),
        );
        ensure(body["creddef_id"] == json!(id), || "creddef id does not recompute".into())?;
    }
    Ok(format!(
        "1000 random publish sequences monotone ({refused} clears or stale epochs refused); log byte-stable on re-read; ids recompute"
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("double-spend safety", double_spend_safety),
        ("contract semantics", contract_semantics),
        ("selective-disclosure confidentiality", confidentiality),
        ("presentation soundness", soundness),
        ("determinism", determinism),
        ("performance", performance),
        ("end-to-end latency", end_to_end),
        ("registry invariants", registry_invariants),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let started = Instant::now();
        match check() {
            Ok(detail) => println!("criterion {n} PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL {name}: {detail}");
            }
        }
        eprintln!("  ({:.1} s)", started.elapsed().as_secs_f64());
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
