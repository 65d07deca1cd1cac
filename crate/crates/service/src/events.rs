//! Append-only, hash-chained event log stored as JSON lines.
//!
//! Each line is `{"seq":N,"prev":H,"hash":H',"body":{...}}` where
//! `H' = sha256(N "\n" H "\n" body)` over the body's exact bytes, so any
//! change to a committed line breaks either its own hash or the next link.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::state::EventBody;

pub const GENESIS: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub seq: u64,
    pub prev: String,
    pub hash: String,
    pub body: EventBody,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogError {
    #[error("event log {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("event log line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("event log line {line} is incomplete")]
    TornTail { line: usize, valid_len: usize },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine<'a> {
    seq: u64,
    prev: String,
    hash: String,
    #[serde(borrow)]
    body: &'a RawValue,
}

pub fn chain_hash(seq: u64, prev: &str, body: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("{seq}\n{prev}\n").as_bytes());
    h.update(body.as_bytes());
    hex::encode(h.finalize())
}

/// Serializes one event line (newline included) and returns it with its hash.
pub fn encode(seq: u64, prev: &str, body: &EventBody) -> (String, String) {
    let body = serde_json::to_string(body).expect("event bodies serialize");
    let hash = chain_hash(seq, prev, &body);
    (
        format!("{{\"seq\":{seq},\"prev\":\"{prev}\",\"hash\":\"{hash}\",\"body\":{body}}}\n"),
        hash,
    )
}

/// Parses and checks a whole log. Strict: a final line without its newline
/// is reported as [`LogError::TornTail`].
pub fn verify(bytes: &[u8]) -> Result<Vec<Event>, LogError> {
    let mut events = Vec::new();
    let mut prev = GENESIS.to_string();
    let mut offset = 0;
    while offset < bytes.len() {
        let line_no = events.len() + 1;
        let Some(len) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            return Err(LogError::TornTail {
                line: line_no,
                valid_len: offset,
            });
        };
        let line = &bytes[offset..offset + len];
        let corrupt = |reason: String| LogError::Corrupt { line: line_no, reason };
        let raw: RawLine = serde_json::from_slice(line).map_err(|e| corrupt(e.to_string()))?;
        if raw.seq != line_no as u64 {
            return Err(corrupt(format!("sequence {} where {line_no} was expected", raw.seq)));
        }
        if raw.prev != prev {
            return Err(corrupt("link to the previous event is broken".into()));
        }
        if chain_hash(raw.seq, &raw.prev, raw.body.get()) != raw.hash {
            return Err(corrupt("hash does not match the event".into()));
        }
        let body: EventBody = serde_json::from_str(raw.body.get()).map_err(|e| corrupt(e.to_string()))?;
        prev = raw.hash.clone();
        events.push(Event {
            seq: raw.seq,
            prev: raw.prev,
            hash: raw.hash,
            body,
        });
        offset += len + 1;
    }
    Ok(events)
}

/// Writable handle positioned at the end of a verified log.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    head: String,
    seq: u64,
}

fn io_err(path: &Path, e: std::io::Error) -> LogError {
    LogError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

impl EventLog {
    pub fn create(path: &Path) -> Result<Self, LogError> {
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        Ok(EventLog {
            path: path.to_path_buf(),
            file,
            head: GENESIS.to_string(),
            seq: 0,
        })
    }

    /// Opens an existing log. A torn final line, left by a crash during a
    /// write, is cut off and reported as a warning.
    pub fn open(path: &Path) -> Result<(Self, Vec<Event>, Option<String>), LogError> {
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        let (events, warning) = match verify(&bytes) {
            Ok(events) => (events, None),
            Err(LogError::TornTail { line, valid_len }) => {
                let events = verify(&bytes[..valid_len])?;
                let f = OpenOptions::new().write(true).open(path).map_err(|e| io_err(path, e))?;
                f.set_len(valid_len as u64).map_err(|e| io_err(path, e))?;
                f.sync_all().map_err(|e| io_err(path, e))?;
                (events, Some(format!("dropped incomplete event log line {line}")))
            }
            Err(e) => return Err(e),
        };
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        let (head, seq) = events
            .last()
            .map(|e| (e.hash.clone(), e.seq))
            .unwrap_or_else(|| (GENESIS.to_string(), 0));
        Ok((
            EventLog {
                path: path.to_path_buf(),
                file,
                head,
                seq,
            },
            events,
            warning,
        ))
    }

    pub fn append(&mut self, body: EventBody) -> Result<Event, LogError> {
        let seq = self.seq + 1;
        let (line, hash) = encode(seq, &self.head, &body);
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.sync_data())
            .map_err(|e| io_err(&self.path, e))?;
        let event = Event {
            seq,
            prev: std::mem::replace(&mut self.head, hash.clone()),
            hash,
            body,
        };
        self.seq = seq;
        Ok(event)
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn head(&self) -> &str {
        &self.head
    }
}
