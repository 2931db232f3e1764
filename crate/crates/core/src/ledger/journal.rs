//! Append-only journal: each sealed record is a 4-byte big-endian length
//! followed by its canonical JSON encoding.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::record::SealedRecord;
use crate::canonical::{Hash32, ZERO_HASH};
use crate::par::{self, Execution};

pub fn encode_frame(rec: &SealedRecord) -> Vec<u8> {
    let body = rec.canonical();
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body.as_bytes());
    out
}

pub fn encode_journal(records: &[SealedRecord]) -> Vec<u8> {
    records.iter().flat_map(encode_frame).collect()
}

#[derive(Debug)]
pub struct JournalWriter {
    out: BufWriter<File>,
}

impl JournalWriter {
    /// Creates (truncating) a journal file.
    pub fn create(path: &Path) -> io::Result<Self> {
        let f = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(Self { out: BufWriter::new(f) })
    }

    /// Writes one frame and flushes it to the OS before returning.
    pub fn append(&mut self, rec: &SealedRecord) -> io::Result<()> {
        self.out.write_all(&encode_frame(rec))?;
        self.out.flush()
    }

    pub fn sync(&mut self) -> io::Result<()> {
        self.out.flush()?;
        self.out.get_ref().sync_data()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ChainVerdict {
    Ok { records: u64 },
    BrokenAt { seq: u64 },
}

impl ChainVerdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, ChainVerdict::Ok { .. })
    }
}

/// Splits storage into frames. The second value is the index of the first
/// frame whose length prefix is truncated or overruns the buffer.
pub fn split_frames(bytes: &[u8]) -> (Vec<&[u8]>, Option<usize>) {
    let mut frames = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        if bytes.len() - pos < 4 {
            let at = frames.len();
            return (frames, Some(at));
        }
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let start = pos + 4;
        if len > bytes.len() - start {
            let at = frames.len();
            return (frames, Some(at));
        }
        frames.push(&bytes[start..start + len]);
        pos = start + len;
    }
    (frames, None)
}

/// Parses a frame strictly: it must decode and be byte-identical to the
/// canonical re-encoding of what it decodes to.
pub fn parse_frame(frame: &[u8]) -> Option<SealedRecord> {
    let rec: SealedRecord = serde_json::from_slice(frame).ok()?;
    (rec.canonical().as_bytes() == frame).then_some(rec)
}

/// Checks every stored record in `[from, to]` (inclusive, by position)
/// against its position, its own hash and its predecessor's hash.
/// `prev_of_first` is the hash the first record must link to.
pub fn verify_records(
    exec: Execution,
    records: &[Option<SealedRecord>],
    first_seq: u64,
    prev_of_first: Hash32,
) -> Option<usize> {
    par::position_min(exec, records, |i, rec| {
        let Some(rec) = rec else { return true };
        let expected_prev = if i == 0 {
            prev_of_first
        } else {
            match &records[i - 1] {
                Some(p) => p.this_hash,
                // predecessor unreadable; it is reported first
                None => return true,
            }
        };
        rec.record.seq != first_seq + i as u64 || rec.prev_hash != expected_prev || !rec.hash_is_consistent()
    })
}

/// Verifies raw journal bytes. Detects byte flips, deletions and
/// insertions; reports the first broken position.
pub fn verify_journal(exec: Execution, bytes: &[u8]) -> ChainVerdict {
    let (frames, bad_frame) = split_frames(bytes);
    let parsed: Vec<Option<SealedRecord>> = par::map(exec, &frames, |f| parse_frame(f));
    let first_bad = verify_records(exec, &parsed, 0, ZERO_HASH);
    match (first_bad, bad_frame) {
        (Some(i), Some(j)) => ChainVerdict::BrokenAt { seq: i.min(j) as u64 },
        (Some(i), None) | (None, Some(i)) => ChainVerdict::BrokenAt { seq: i as u64 },
        (None, None) => ChainVerdict::Ok {
            records: parsed.len() as u64,
        },
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum JournalError {
    #[error("journal corrupt at record {0}")]
    Corrupt(u64),
}

/// Reads a journal, failing on the first unverifiable record.
pub fn read_journal(bytes: &[u8]) -> Result<Vec<SealedRecord>, JournalError> {
    match verify_journal(Execution::Auto, bytes) {
        ChainVerdict::BrokenAt { seq } => Err(JournalError::Corrupt(seq)),
        ChainVerdict::Ok { .. } => Ok(split_frames(bytes)
            .0
            .into_iter()
            .map(|f| parse_frame(f).expect("verified frame parses"))
            .collect()),
    }
}
