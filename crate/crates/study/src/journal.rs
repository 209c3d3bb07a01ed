//! Append-only JSON-lines event log. Each line is
//! `{"seq":…,"type":…,"payload":…,"checksum":…}` and is synced to disk before
//! the append returns. Opening a journal replays it and cuts off a torn or
//! corrupt tail.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::StudyError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub seq: u64,
    #[serde(rename = "type")]
    pub kind: String,
    pub payload: Value,
}

#[derive(Serialize, Deserialize)]
struct Line {
    seq: u64,
    #[serde(rename = "type")]
    kind: String,
    payload: Value,
    checksum: String,
}

/// CRC-32 of `seq`, `type` and the compact payload, tab separated.
pub fn checksum(seq: u64, kind: &str, payload: &Value) -> String {
    let text = format!("{seq}\t{kind}\t{payload}");
    format!("{:08x}", crc32fast::hash(text.as_bytes()))
}

pub fn encode(entry: &Entry) -> String {
    let line = Line {
        seq: entry.seq,
        kind: entry.kind.clone(),
        payload: entry.payload.clone(),
        checksum: checksum(entry.seq, &entry.kind, &entry.payload),
    };
    let mut s = serde_json::to_string(&line).expect("json values serialise");
    s.push('\n');
    s
}

fn decode(line: &[u8], expected_seq: u64) -> Option<Entry> {
    let line: Line = serde_json::from_slice(line).ok()?;
    if line.seq != expected_seq || line.checksum != checksum(line.seq, &line.kind, &line.payload) {
        return None;
    }
    Some(Entry {
        seq: line.seq,
        kind: line.kind,
        payload: line.payload,
    })
}

/// Entries of the longest valid prefix and its length in bytes. Sequence
/// numbers start at 1 and must be consecutive.
pub fn replay_bytes(bytes: &[u8]) -> (Vec<Entry>, usize) {
    let mut entries = Vec::new();
    let mut offset = 0;
    while let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') {
        match decode(&bytes[offset..offset + nl], entries.len() as u64 + 1) {
            Some(e) => entries.push(e),
            None => break,
        }
        offset += nl + 1;
    }
    (entries, offset)
}

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
    next_seq: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub entries: Vec<Entry>,
    /// Bytes dropped from the end of the file.
    pub truncated: u64,
}

impl Journal {
    pub fn open(path: &Path) -> Result<(Journal, Replay), StudyError> {
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let (entries, good) = replay_bytes(&bytes);
        let truncated = (bytes.len() - good) as u64;
        if truncated > 0 {
            file.set_len(good as u64)?;
            file.sync_all()?;
        }
        let journal = Journal {
            path: path.to_owned(),
            file,
            next_seq: entries.len() as u64 + 1,
        };
        Ok((journal, Replay { entries, truncated }))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Writes and syncs one entry, returning its sequence number.
    pub fn append(&mut self, kind: &str, payload: Value) -> Result<u64, StudyError> {
        let entry = Entry {
            seq: self.next_seq,
            kind: kind.to_owned(),
            payload,
        };
        self.file.write_all(encode(&entry).as_bytes())?;
        self.file.sync_data()?;
        self.next_seq += 1;
        Ok(entry.seq)
    }
}
