use std::sync::Arc;

use super::*;
use crate::agents::TcpTransport;

macro_rules! bundled {
    ($name:literal) => {
        ($name, include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/", $name, ".json")))
    };
}

const BUNDLED: [(&str, &str); 9] = [
    bundled!("happy_path"),
    bundled!("double_spend_race"),
    bundled!("revoked"),
    bundled!("tampered_presentation"),
    bundled!("replayed_nonce"),
    bundled!("untrusted_issuer"),
    bundled!("non_admin_create"),
    bundled!("over_spend"),
    bundled!("registry_unavailable"),
];

#[test]
fn bundled_scenarios_meet_their_expectations() {
    for (name, text) in BUNDLED {
        let scenario = Scenario::from_json(text).unwrap();
        assert_eq!(scenario.name, name);
        let report = run_scenario(&scenario, None).unwrap();
        assert!(report.passed, "{name}: {:#?}", report.violations);
    }
}

#[test]
fn same_seed_same_bytes() {
    for (name, text) in BUNDLED {
        let scenario = Scenario::from_json(text).unwrap();
        let a = run_scenario(&scenario, None).unwrap().transcript;
        let b = run_scenario(&scenario, None).unwrap().transcript;
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn aliases_hide_raw_keys() {
    let scenario = Scenario::from_json(BUNDLED[0].1).unwrap();
    let transcript = run_scenario(&scenario, None).unwrap().transcript;
    assert!(transcript.contains("\"K1\""));
    assert!(!transcript.contains("did:rx:"));
}

#[test]
fn different_seeds_keep_the_outcome() {
    let scenario = Scenario::from_json(BUNDLED[1].1).unwrap();
    for seed in 0..5 {
        let report = run_scenario(&scenario, Some(seed)).unwrap();
        assert!(report.passed, "seed {seed}: {:?}", report.violations);
    }
}

#[test]
fn violated_expectation_is_reported() {
    let text = BUNDLED[0].1.replace("\"dispense-approved\"", "\"dispense-rejected\"");
    let report = run_scenario(&Scenario::from_json(&text).unwrap(), None).unwrap();
    assert!(!report.passed);
    assert_eq!(report.violations.len(), 1);
    assert!(report.violations[0].starts_with("step 3 (redeem): expected status="), "{}", report.violations[0]);
}

#[test]
fn loopback_transport_runs_the_happy_path() {
    let scenario = Scenario::from_json(BUNDLED[0].1).unwrap();
    let report = run_scenario_on(&scenario, None, Arc::new(TcpTransport::new())).unwrap();
    assert!(report.passed, "{:?}", report.violations);
    assert!(!report.transcript.contains("tcp:127.0.0.1"));
}

#[test]
fn schema_errors() {
    for bad in [
        r#"{"name":"x","actors":{},"steps":[{"op":"fly"}]}"#,
        r#"{"name":"x","actors":{"doctors":["a","a"]},"steps":[]}"#,
        r#"{"name":"x","actors":{"doctors":["outsider"]},"steps":[]}"#,
        r#"{"name":"x","actors":{"pharmacies":[{"name":"p","trusts":["ghost"]}]},"steps":[]}"#,
        r#"{"name":"x","actors":{},"steps":[{"op":"onboard","doctor":"a","typo":1}]}"#,
        r#"{"name":"x","actors":{},"steps":[],"extra":true}"#,
    ] {
        assert!(Scenario::from_json(bad).is_err(), "{bad}");
    }
}

#[test]
fn unknown_actor_is_a_violation_not_a_panic() {
    let text = r#"{"name":"x","actors":{},"steps":[{"op":"onboard","doctor":"nobody","expect":{"status":"ok"}}]}"#;
    let report = run_scenario(&Scenario::from_json(text).unwrap(), None).unwrap();
    assert!(!report.passed);
}
