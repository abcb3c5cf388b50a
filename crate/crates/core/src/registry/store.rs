use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RegistryError, Result};
use crate::crypto::{self, Signature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Did,
    Schema,
    Creddef,
    Revocation,
}

impl std::str::FromStr for RecordKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "did" => Ok(RecordKind::Did),
            "schema" => Ok(RecordKind::Schema),
            "creddef" => Ok(RecordKind::Creddef),
            "revocation" => Ok(RecordKind::Revocation),
            other => Err(format!("unknown record kind {other:?}")),
        }
    }
}

/// One line of the registry log: `{seq, kind, body, signature?}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub kind: RecordKind,
    pub body: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<Signature>,
}

impl LogRecord {
    pub fn to_line(&self) -> Vec<u8> {
        crypto::to_canonical(self).expect("log records are canonicalizable")
    }
}

pub(super) struct LogSink {
    file: File,
}

impl LogSink {
    pub(super) fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| RegistryError::Persistence(e.to_string()))?;
        Ok(LogSink { file })
    }

    pub(super) fn write(&mut self, record: &LogRecord) -> Result<()> {
        let mut line = record.to_line();
        line.push(b'\n');
        self.file.write_all(&line).map_err(|e| RegistryError::Persistence(e.to_string()))
    }
}

pub(super) fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(RegistryError::Persistence(e.to_string())),
    };
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| RegistryError::Persistence(e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let record: LogRecord =
            crypto::from_canonical(line.as_bytes()).map_err(|e| RegistryError::Persistence(e.to_string()))?;
        if record.to_line() != line.as_bytes() {
            return Err(RegistryError::Persistence(format!("record {} is not canonical", record.seq)));
        }
        records.push(record);
    }
    Ok(records)
}
