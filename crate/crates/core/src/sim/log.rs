use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::kernel::Tick;

/// One line of the merged run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub tick: Tick,
    pub seq: u64,
    pub kind: String,
    pub payload: Value,
}

impl LogRecord {
    pub fn get(&self, key: &str) -> Option<&Value> {
        self.payload.get(key)
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.payload.get(key).and_then(Value::as_str)
    }

    pub fn u64(&self, key: &str) -> Option<u64> {
        self.payload.get(key).and_then(Value::as_u64)
    }
}

/// Append-only log with a single global sequence counter.
#[derive(Clone, Debug, Default)]
pub struct EventLog {
    records: Vec<LogRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tick: Tick, kind: &str, payload: Value) -> u64 {
        let seq = self.records.len() as u64;
        self.records.push(LogRecord {
            tick,
            seq,
            kind: kind.to_owned(),
            payload,
        });
        seq
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records with `seq >= from`.
    pub fn since(&self, from: u64) -> &[LogRecord] {
        let i = (from as usize).min(self.records.len());
        &self.records[i..]
    }

    pub fn to_ndjson(&self) -> String {
        to_ndjson(&self.records)
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_ndjson().as_bytes())
    }
}

pub fn to_ndjson(records: &[LogRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("log record serializes"));
        out.push('\n');
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses an NDJSON log, reporting the 1-based line of the first bad record.
pub fn parse_ndjson(text: &str) -> Result<Vec<LogRecord>, (usize, serde_json::Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e)))
        .collect()
}
