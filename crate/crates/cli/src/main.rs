use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use rxledger_core::agents::{MemoryTransport, TcpTransport, Transport};
use rxledger_core::crypto::Digest;
use rxledger_core::harness::{self, flow, BenchConfig, BenchOp, Prompt, Runner, Scenario};
use rxledger_core::ledger::{self, Ledger};
use rxledger_core::registry::{RecordKind, Registry};

#[derive(Parser)]
#[command(name = "rxledger", version, about = "Decentralized e-prescriptions: scenarios, benchmarks and inspection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportKind {
    Memory,
    Tcp,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario script and check its expectations.
    RunScenario {
        file: PathBuf,
        /// Override the seed stored in the script.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the normalized transcript here.
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "memory")]
        transport: TransportKind,
        /// Keep the registry and ledger logs in this (fresh) directory.
        #[arg(long)]
        state_dir: Option<PathBuf>,
    },
    /// Drive the in-process ledger with concurrent writers.
    Bench {
        #[arg(long, value_parser = ["create", "spend"])]
        op: String,
        /// Offered tx/s across all writers; omit for closed-loop.
        #[arg(long)]
        rate: Option<f64>,
        /// Seconds per run.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long, default_value_t = 8)]
        writers: usize,
        /// Repeat and report the median run by throughput.
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Spend one token from many threads at once.
    Race {
        #[arg(long)]
        count: u64,
        #[arg(long)]
        spenders: usize,
        #[arg(long, default_value_t = 1)]
        repeat: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Replay a ledger log and print the resulting state.
    InspectLedger {
        #[arg(long)]
        log: PathBuf,
        /// Only this contract (base64url address).
        #[arg(long)]
        contract: Option<String>,
        /// Print every log entry as well.
        #[arg(long)]
        entries: bool,
    },
    /// Load a registry log and list its records.
    InspectRegistry {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_parser = ["did", "schema", "creddef", "revocation"])]
        kind: Option<String>,
    },
    /// Walk through onboarding, issuance and redemption over loopback TCP.
    Demo {
        /// Accept every prompt without asking.
        #[arg(long)]
        yes: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Failures caused by the caller's input map to exit code 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    Usage(message.into()).into()
}

/// Print a line, ignoring a closed stdout (`| head`).
fn emit(line: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn print_json(value: &serde_json::Value) {
    emit(&serde_json::to_string_pretty(value).expect("serializable"));
}

fn fresh_file(dir: &Path, name: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    if path.exists() {
        return Err(usage(format!("{} already exists; use an empty state directory", path.display())));
    }
    Ok(path)
}

fn run_scenario(
    file: &Path,
    seed: Option<u64>,
    transcript: Option<&Path>,
    transport: TransportKind,
    state_dir: Option<&Path>,
) -> Result<bool> {
    let scenario = Scenario::load(file).map_err(|e| usage(format!("{}: {e}", file.display())))?;
    let transport: Arc<dyn Transport> = match transport {
        TransportKind::Memory => Arc::new(MemoryTransport::new()),
        TransportKind::Tcp => Arc::new(TcpTransport::new()),
    };
    let (registry, ledger) = match state_dir {
        None => (Registry::new(), Ledger::new()),
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let registry = Registry::open(&fresh_file(dir, "registry.jsonl")?)?;
            let ledger = Ledger::with_log_file(&fresh_file(dir, "ledger.jsonl")?)?;
            (registry, ledger)
        }
    };
    let runner = Runner::with_backends(&scenario, seed.unwrap_or(scenario.seed), transport, Arc::new(registry), ledger)
        .map_err(|e| usage(e.to_string()))?;
    let report = runner.run(&scenario.steps);
    if let Some(path) = transcript {
        std::fs::write(path, &report.transcript).with_context(|| format!("writing {}", path.display()))?;
    }
    for v in &report.violations {
        eprintln!("violation: {v}");
    }
    println!(
        "{}: {} ({} steps, {} violations)",
        scenario.name,
        if report.passed { "passed" } else { "FAILED" },
        scenario.steps.len(),
        report.violations.len()
    );
    Ok(report.passed)
}

fn bench(op: &str, rate: Option<f64>, duration: f64, writers: usize, runs: usize, seed: u64) -> Result<bool> {
    let op: BenchOp = op.parse().map_err(usage)?;
    if !(duration.is_finite() && duration > 0.0) || runs == 0 {
        return Err(usage("duration and runs must be positive"));
    }
    let mut reports = Vec::new();
    for run in 0..runs {
        let config = BenchConfig {
            op,
            rate,
            duration: Duration::from_secs_f64(duration),
            writers,
            seed: seed.wrapping_add(run as u64),
        };
        let report = harness::bench(config).map_err(|e| match e {
            harness::HarnessError::Setup(m) => usage(m),
            other => other.into(),
        })?;
        eprintln!(
            "run {}: {:.0} tx/s, p50 {:.2} ms, p99 {:.2} ms",
            run + 1,
            report.achieved_tps,
            report.p50_ms,
            report.p99_ms
        );
        reports.push(report);
    }
    reports.sort_by(|a, b| a.achieved_tps.total_cmp(&b.achieved_tps));
    print_json(&json!({"median": reports[reports.len() / 2], "runs": reports}));
    Ok(true)
}

fn race(count: u64, spenders: usize, repeat: usize, seed: u64) -> Result<bool> {
    if spenders == 0 {
        return Err(usage("spenders must be positive"));
    }
    let mut exact = true;
    for i in 0..repeat.max(1) {
        let report = harness::race_test(count, spenders, seed.wrapping_add(i as u64)).map_err(|e| usage(e.to_string()))?;
        exact &= report.is_exact();
        println!(
            "{}",
            json!({
                "count": count,
                "spenders": spenders,
                "ok": report.ok,
                "already_spent": report.already_spent,
                "other": report.other,
                "remaining": report.remaining,
                "elapsed_ms": report.elapsed.as_secs_f64() * 1e3,
            })
        );
    }
    Ok(exact)
}

fn inspect_ledger(log: &Path, contract: Option<&str>, entries: bool) -> Result<bool> {
    if !log.exists() {
        return Err(usage(format!("{} does not exist", log.display())));
    }
    let log_entries = ledger::read_log(log).map_err(|e| usage(e.to_string()))?;
    let state = match ledger::replay(&log_entries) {
        Ok(state) => state,
        Err(e) => {
            eprintln!("replay failed: {e}");
            return Ok(false);
        }
    };
    if entries {
        for entry in &log_entries {
            emit(&String::from_utf8_lossy(&entry.to_line()));
        }
    }
    let view = match contract {
        None => state.to_json(),
        Some(address) => {
            let address = Digest::from_b64(address).map_err(|e| usage(format!("bad contract address: {e}")))?;
            match state.contract(&address) {
                Some(c) => c.to_json(),
                None => return Err(usage("no such contract")),
            }
        }
    };
    print_json(&json!({"height": state.height(), "digest": state.digest(), "state": view}));
    Ok(true)
}

fn inspect_registry(store: &Path, kind: Option<&str>) -> Result<bool> {
    if !store.exists() {
        return Err(usage(format!("{} does not exist", store.display())));
    }
    let registry = match Registry::load(store) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("registry log does not validate: {e}");
            return Ok(false);
        }
    };
    let records = match kind {
        None => registry.records(),
        Some(k) => registry.records_of(k.parse::<RecordKind>().map_err(usage)?),
    };
    for record in records {
        emit(&String::from_utf8_lossy(&record.to_line()));
    }
    Ok(true)
}

fn ask(question: &str) -> bool {
    print!("{question} [Y/n] ");
    let _ = std::io::stdout().flush();
    let mut line = String::new();
    if std::io::stdin().lock().read_line(&mut line).unwrap_or(0) == 0 {
        println!();
        return false;
    }
    !matches!(line.trim().to_ascii_lowercase().as_str(), "n" | "no")
}

fn demo(yes: bool, seed: u64) -> Result<bool> {
    println!("doctor, patient and pharmacy agents on loopback TCP");
    let values = flow::sample_prescription();
    let report = harness::happy_path(Arc::new(TcpTransport::new()), seed, &values, |prompt| match prompt {
        Prompt::Offer { from, preview, count } => {
            println!("\ncredential offer from {from} ({count} redemption{})", if *count == 1 { "" } else { "s" });
            for (name, value) in preview {
                println!("  {name}: {value}");
            }
            yes || ask("accept the prescription?")
        }
        Prompt::ProofRequest { requested, .. } => {
            println!("\nthe pharmacy asks to see: {}", requested.join(", "));
            yes || ask("share these attributes?")
        }
    })?;
    println!();
    for (phase, took) in &report.phases {
        println!("{phase:>10}: {:.1} ms", took.as_secs_f64() * 1e3);
    }
    println!("{:>10}: {:.1} ms (machine time, prompts excluded)", "total", report.total.as_secs_f64() * 1e3);
    print_json(&json!(report.result));
    Ok(report.result.approved() || report.result.reason.as_deref() == Some("user-declined"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::RunScenario { file, seed, transcript, transport, state_dir } => {
            run_scenario(&file, seed, transcript.as_deref(), transport, state_dir.as_deref())
        }
        Command::Bench { op, rate, duration, writers, runs, seed } => bench(&op, rate, duration, writers, runs, seed),
        Command::Race { count, spenders, repeat, seed } => race(count, spenders, repeat, seed),
        Command::InspectLedger { log, contract, entries } => inspect_ledger(&log, contract.as_deref(), entries),
        Command::InspectRegistry { store, kind } => inspect_registry(&store, kind.as_deref()),
        Command::Demo { yes, seed } => demo(yes, seed),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
