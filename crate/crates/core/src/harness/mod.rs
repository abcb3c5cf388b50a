//! Drivers around the agents and the ledger: scripted scenarios with
//! normalized transcripts, the double-spend race and the load generator.

pub mod bench;
pub mod flow;
pub mod race;
pub mod scenario;
pub mod transcript;

use thiserror::Error;

use crate::ledger::SubmitError;

pub use bench::{bench, BenchConfig, BenchOp, BenchReport};
pub use flow::{happy_path, FlowReport, Prompt};
pub use race::{race_test, RaceReport};
pub use scenario::{run_scenario, run_scenario_on, RunReport, Runner, Scenario};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("agent: {0}")]
    Agent(String),
    #[error("setup: {0}")]
    Setup(String),
    #[error("audit failed: {0}")]
    Audit(String),
    #[error(transparent)]
    Submit(#[from] SubmitError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
