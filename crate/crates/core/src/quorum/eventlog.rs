//! Totally ordered event log shared by all replicas.
//!
//! One record per line: `index caller kind payload_hex nonce signature_hex`,
//! where `payload_hex` is the canonical JSON payload and all hex is
//! lowercase. Replaying the log from genesis reconstructs the registry.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use super::request::{Payload, SignedRequest};
use super::state::{Outcome, RegistryError, RegistryState};
use crate::config::ServiceConfig;
use crate::identity::{signature_from_hex, signature_to_hex};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("event log corrupt at record {index}: {reason}")]
    LogCorrupt { index: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventRecord {
    pub index: u64,
    pub request: SignedRequest,
}

impl EventRecord {
    pub fn to_line(&self) -> String {
        let r = &self.request;
        format!(
            "{} {} {} {} {} {}",
            self.index,
            r.caller,
            r.payload.kind(),
            hex::encode(r.payload.canonical_bytes()),
            r.nonce,
            signature_to_hex(&r.signature)
        )
    }

    /// Parses one line; `expected_index` is the record's position.
    pub fn from_line(line: &str, expected_index: u64) -> Result<Self, LogError> {
        let corrupt = |reason: &str| LogError::LogCorrupt { index: expected_index, reason: reason.to_string() };
        let fields: Vec<&str> = line.split(' ').collect();
        let [index, caller, kind, payload_hex, nonce, sig] = fields[..] else {
            return Err(corrupt("wrong field count"));
        };
        let index: u64 = index.parse().map_err(|_| corrupt("bad index"))?;
        if index != expected_index {
            return Err(corrupt("index out of sequence"));
        }
        let bytes = hex::decode(payload_hex).map_err(|_| corrupt("payload is not hex"))?;
        let payload: Payload = serde_json::from_slice(&bytes).map_err(|_| corrupt("payload does not parse"))?;
        if payload.kind() != kind {
            return Err(corrupt("payload kind mismatch"));
        }
        let nonce: u64 = nonce.parse().map_err(|_| corrupt("bad nonce"))?;
        let signature = signature_from_hex(sig).map_err(|_| corrupt("bad signature encoding"))?;
        let record = EventRecord {
            index,
            request: SignedRequest { caller: caller.to_string(), payload, nonce, signature },
        };
        if record.to_line() != line {
            return Err(corrupt("non-canonical encoding"));
        }
        Ok(record)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventLog {
    records: Vec<EventRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, request: SignedRequest) -> &EventRecord {
        let index = self.records.len() as u64;
        self.records.push(EventRecord { index, request });
        self.records.last().unwrap()
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_text(&self) -> String {
        self.records.iter().map(|r| r.to_line() + "\n").collect()
    }

    /// Parses a log. A final line without its terminating newline is a
    /// torn write and is ignored.
    pub fn from_text(text: &str) -> Result<Self, LogError> {
        let complete = match text.rfind('\n') {
            Some(pos) => &text[..=pos],
            None => "",
        };
        let mut log = EventLog::new();
        for (i, line) in complete.lines().enumerate() {
            log.records.push(EventRecord::from_line(line, i as u64)?);
        }
        Ok(log)
    }

    pub fn load(path: &Path) -> Result<Self, LogError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn write_to(&self, path: &Path) -> Result<(), LogError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_text().as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn append_to_file(path: &Path, record: &EventRecord) -> Result<(), LogError> {
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        writeln!(f, "{}", record.to_line())?;
        Ok(())
    }
}

/// Result of replaying a log from genesis.
#[derive(Debug)]
pub struct Replay {
    pub state: RegistryState,
    pub outcomes: Vec<Result<Outcome, RegistryError>>,
    /// Epoch commitments whose root matched the replayed graph.
    pub commitments_checked: usize,
}

/// Rebuilds registry state by applying every record in order. A record whose
/// envelope no longer authenticates, or a commitment whose root differs from
/// the replayed graph, marks the log corrupt at that record.
pub fn replay(config: &ServiceConfig, log: &EventLog) -> Result<Replay, LogError> {
    let mut state = RegistryState::genesis(config);
    let mut outcomes = Vec::with_capacity(log.len());
    let mut commitments_checked = 0;
    for record in log.records() {
        let corrupt = |reason: String| LogError::LogCorrupt { index: record.index, reason };
        state.authenticate(&record.request).map_err(|e| corrupt(e.to_string()))?;
        let outcome = state.apply(&record.request);
        if let Ok(Outcome::EpochCommitted { root, local_root, .. }) = &outcome {
            if root != local_root {
                return Err(corrupt(format!("replayed root {local_root} differs from committed {root}")));
            }
            commitments_checked += 1;
        }
        outcomes.push(outcome);
    }
    Ok(Replay { state, outcomes, commitments_checked })
}

pub fn replay_text(config: &ServiceConfig, text: &str) -> Result<Replay, LogError> {
    replay(config, &EventLog::from_text(text)?)
}
