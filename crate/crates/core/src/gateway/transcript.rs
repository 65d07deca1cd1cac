//! JSON-lines transcript of model exchanges, keyed by request fingerprint.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptEntry {
    pub fingerprint: String,
    pub template_id: String,
    pub response: String,
}

#[derive(Debug, Default)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
    index: HashMap<String, usize>,
}

impl Transcript {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let file = File::open(path)
            .map_err(|e| GatewayError::TranscriptCorrupt(format!("cannot open {}: {e}", path.display())))?;
        let mut transcript = Transcript::default();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| GatewayError::TranscriptCorrupt(format!("line {}: {e}", n + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line)
                .map_err(|e| GatewayError::TranscriptCorrupt(format!("line {}: {e}", n + 1)))?;
            if transcript.index.contains_key(&entry.fingerprint) {
                return Err(GatewayError::TranscriptCorrupt(format!(
                    "line {}: duplicate fingerprint {}",
                    n + 1,
                    entry.fingerprint
                )));
            }
            transcript.push(entry);
        }
        Ok(transcript)
    }

    fn push(&mut self, entry: TranscriptEntry) {
        self.index.insert(entry.fingerprint.clone(), self.entries.len());
        self.entries.push(entry);
    }

    pub fn get(&self, fingerprint: &str) -> Option<&TranscriptEntry> {
        self.index.get(fingerprint).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Append-only transcript file used in record mode.
#[derive(Debug)]
pub struct TranscriptWriter {
    path: PathBuf,
    transcript: Transcript,
}

impl TranscriptWriter {
    /// Opens (or creates) a transcript; existing entries are served as cache hits.
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let transcript = if path.exists() {
            Transcript::load(path)?
        } else {
            File::create(path).map_err(|e| GatewayError::Io(format!("{}: {e}", path.display())))?;
            Transcript::default()
        };
        Ok(TranscriptWriter {
            path: path.to_path_buf(),
            transcript,
        })
    }

    pub fn get(&self, fingerprint: &str) -> Option<&TranscriptEntry> {
        self.transcript.get(fingerprint)
    }

    pub fn append(&mut self, entry: TranscriptEntry) -> Result<(), GatewayError> {
        if self.transcript.get(&entry.fingerprint).is_some() {
            return Ok(());
        }
        let mut line = serde_json::to_string(&entry).map_err(|e| GatewayError::Io(e.to_string()))?;
        line.push('\n');
        let mut file = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| GatewayError::Io(format!("{}: {e}", self.path.display())))?;
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| GatewayError::Io(format!("{}: {e}", self.path.display())))?;
        self.transcript.push(entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.transcript.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transcript.is_empty()
    }
}
