//! Hash-chained, access-controlled transcripts and trace-context plumbing.

pub mod grant;
pub mod journal;
pub mod record;
pub mod trace;

use std::collections::BTreeSet;
use std::path::Path;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical::{hash_value, Hash32, ZERO_HASH};
use crate::par::Execution;
pub use journal::{ChainVerdict, JournalWriter};
pub use record::{EventKind, SealedRecord, TranscriptRecord};
pub use trace::{
    format_traceparent, parse_traceparent, SpanId, TraceContext, TraceError, TraceId, TraceIdGenerator,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("invalid internal token")]
    InvalidInternalToken,
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("range {from}..={to} out of bounds for ledger of {len} records")]
    RangeOutOfBounds { from: u64, to: u64, len: u64 },
    #[error("journal write failed: {0}")]
    Journal(String),
}

/// The data plane's append capability. Never handed to agents.
pub struct InternalToken(String);

impl InternalToken {
    fn generate() -> Self {
        let a: u128 = rand::random();
        let b: u128 = rand::random();
        Self(format!("adp-internal-{a:032x}{b:032x}"))
    }

    pub(crate) fn expose(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Debug for InternalToken {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("InternalToken(..)")
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// Everything in a record except what the ledger assigns (`seq`).
#[derive(Debug, Clone)]
pub struct RecordDraft {
    pub logical_time: u64,
    pub trace: TraceContext,
    pub parent_span: Option<SpanId>,
    pub actor: String,
    pub event_kind: EventKind,
    pub client: Option<String>,
    pub body: Value,
    /// Pre-redaction body hash; defaults to the hash of `body`.
    pub body_prehash: Option<Hash32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFilter {
    #[serde(default)]
    pub trace_id: Option<String>,
    #[serde(default)]
    pub actor: Option<String>,
    #[serde(default)]
    pub event_kind: Option<EventKind>,
    #[serde(default)]
    pub seq_from: Option<u64>,
    #[serde(default)]
    pub seq_to: Option<u64>,
}

impl QueryFilter {
    pub fn matches(&self, r: &TranscriptRecord) -> bool {
        self.trace_id.as_deref().is_none_or(|t| r.trace.trace_id.to_hex() == t)
            && self.actor.as_deref().is_none_or(|a| r.actor == a)
            && self.event_kind.is_none_or(|k| r.event_kind == k)
            && self.seq_from.is_none_or(|s| r.seq >= s)
            && self.seq_to.is_none_or(|s| r.seq <= s)
    }
}

/// Append-only transcript store with a single serialization point.
#[derive(Debug)]
pub struct Ledger {
    records: RwLock<Vec<SealedRecord>>,
    journal: Mutex<Option<JournalWriter>>,
    token: InternalToken,
}

impl Ledger {
    pub fn new() -> (Self, InternalToken) {
        let token = InternalToken::generate();
        let handle = InternalToken(token.0.clone());
        (
            Self {
                records: RwLock::new(Vec::new()),
                journal: Mutex::new(None),
                token,
            },
            handle,
        )
    }

    /// Starts mirroring appends to a journal file; existing records are
    /// written first.
    pub fn attach_journal(&self, path: &Path) -> Result<(), LedgerError> {
        let records = self.records.read();
        let mut w = JournalWriter::create(path).map_err(|e| LedgerError::Journal(e.to_string()))?;
        for r in records.iter() {
            w.append(r).map_err(|e| LedgerError::Journal(e.to_string()))?;
        }
        *self.journal.lock() = Some(w);
        Ok(())
    }

    pub fn sync_journal(&self) -> Result<(), LedgerError> {
        if let Some(w) = self.journal.lock().as_mut() {
            w.sync().map_err(|e| LedgerError::Journal(e.to_string()))?;
        }
        Ok(())
    }

    pub fn append(&self, internal_token: &str, draft: RecordDraft) -> Result<SealedRecord, LedgerError> {
        if !constant_time_eq(internal_token.as_bytes(), self.token.0.as_bytes()) {
            return Err(LedgerError::InvalidInternalToken);
        }
        if draft.actor.is_empty() {
            return Err(LedgerError::MalformedRecord("empty actor".into()));
        }
        if !draft.body.is_object() {
            return Err(LedgerError::MalformedRecord("body must be an object".into()));
        }
        let prehash = draft.body_prehash.unwrap_or_else(|| hash_value(&draft.body));
        let mut records = self.records.write();
        let prev = records.last().map(|r| r.this_hash).unwrap_or(ZERO_HASH);
        let sealed = SealedRecord::seal(
            TranscriptRecord {
                seq: records.len() as u64,
                logical_time: draft.logical_time,
                trace: draft.trace,
                parent_span: draft.parent_span,
                actor: draft.actor,
                event_kind: draft.event_kind,
                client: draft.client,
                body: draft.body,
                body_prehash: prehash,
            },
            prev,
        );
        if let Some(w) = self.journal.lock().as_mut() {
            w.append(&sealed).map_err(|e| LedgerError::Journal(e.to_string()))?;
        }
        records.push(sealed.clone());
        Ok(sealed)
    }

    pub fn len(&self) -> u64 {
        self.records.read().len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<SealedRecord> {
        self.records.read().clone()
    }

    pub fn hashes(&self) -> Vec<Hash32> {
        self.records.read().iter().map(|r| r.this_hash).collect()
    }

    /// Recomputes hashes over `[from_seq, to_seq]`.
    pub fn verify_chain(&self, from_seq: u64, to_seq: u64) -> Result<ChainVerdict, LedgerError> {
        self.verify_chain_with(Execution::Auto, from_seq, to_seq)
    }

    pub fn verify_chain_with(&self, exec: Execution, from_seq: u64, to_seq: u64) -> Result<ChainVerdict, LedgerError> {
        let records = self.records.read();
        let len = records.len() as u64;
        if from_seq > to_seq || to_seq >= len {
            return Err(LedgerError::RangeOutOfBounds { from: from_seq, to: to_seq, len });
        }
        let prev = if from_seq == 0 {
            ZERO_HASH
        } else {
            records[from_seq as usize - 1].this_hash
        };
        let slice: Vec<Option<SealedRecord>> = records[from_seq as usize..=to_seq as usize]
            .iter()
            .cloned()
            .map(Some)
            .collect();
        Ok(match journal::verify_records(exec, &slice, from_seq, prev) {
            Some(i) => ChainVerdict::BrokenAt { seq: from_seq + i as u64 },
            None => ChainVerdict::Ok { records: to_seq - from_seq + 1 },
        })
    }

    /// Whole-ledger verification; an empty ledger is trivially intact.
    pub fn verify_all(&self) -> ChainVerdict {
        match self.len() {
            0 => ChainVerdict::Ok { records: 0 },
            n => self.verify_chain(0, n - 1).expect("range in bounds"),
        }
    }

    /// Records visible under `grants`, then narrowed by `filter`.
    pub fn query(&self, grants: &BTreeSet<String>, filter: &QueryFilter) -> Vec<SealedRecord> {
        self.records
            .read()
            .iter()
            .filter(|r| grants.iter().any(|g| grant::grant_matches(g, &r.record)))
            .filter(|r| filter.matches(&r.record))
            .cloned()
            .collect()
    }

    pub fn journal_bytes(&self) -> Vec<u8> {
        journal::encode_journal(&self.records.read())
    }

    #[cfg(test)]
    pub(crate) fn tamper(&self, seq: usize, f: impl FnOnce(&mut SealedRecord)) {
        f(&mut self.records.write()[seq]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn draft(g: &TraceIdGenerator, actor: &str, client: Option<&str>, kind: EventKind) -> RecordDraft {
        RecordDraft {
            logical_time: 0,
            trace: g.new_root_context(),
            parent_span: None,
            actor: actor.into(),
            event_kind: kind,
            client: client.map(str::to_string),
            body: json!({"k": actor}),
            body_prehash: None,
        }
    }

    #[test]
    fn genesis_and_link() {
        let (l, tok) = Ledger::new();
        let g = TraceIdGenerator::new(1);
        let r0 = l.append(tok.expose(), draft(&g, "a", None, EventKind::Produce)).unwrap();
        let r1 = l.append(tok.expose(), draft(&g, "b", None, EventKind::Consume)).unwrap();
        assert_eq!((r0.record.seq, r0.prev_hash), (0, ZERO_HASH));
        assert_eq!(r1.prev_hash, r0.this_hash);
        assert_eq!(r1.record.seq, 1);
    }

    #[test]
    fn wrong_token_rejected() {
        let (l, _tok) = Ledger::new();
        let g = TraceIdGenerator::new(1);
        assert_eq!(
            l.append("adp_0123456789abcdef0123456789abcdef", draft(&g, "a", None, EventKind::Produce)).unwrap_err(),
            LedgerError::InvalidInternalToken
        );
        assert!(l.is_empty());
    }

    #[test]
    fn malformed_records_rejected() {
        let (l, tok) = Ledger::new();
        let g = TraceIdGenerator::new(1);
        let mut d = draft(&g, "", None, EventKind::Produce);
        assert!(matches!(l.append(tok.expose(), d.clone()), Err(LedgerError::MalformedRecord(_))));
        d.actor = "a".into();
        d.body = json!([1]);
        assert!(matches!(l.append(tok.expose(), d), Err(LedgerError::MalformedRecord(_))));
    }

    #[test]
    fn verify_detects_in_memory_tamper() {
        let (l, tok) = Ledger::new();
        let g = TraceIdGenerator::new(1);
        for _ in 0..1000 {
            l.append(tok.expose(), draft(&g, "a", None, EventKind::ToolCall)).unwrap();
        }
        assert_eq!(l.verify_chain(0, 999).unwrap(), ChainVerdict::Ok { records: 1000 });
        l.tamper(413, |r| r.record.body = json!({"k": "b"}));
        assert_eq!(l.verify_chain(0, 999).unwrap(), ChainVerdict::BrokenAt { seq: 413 });
        assert_eq!(l.verify_chain(414, 999).unwrap(), ChainVerdict::Ok { records: 586 });
        assert_eq!(
            l.verify_chain_with(Execution::Sequential, 400, 999).unwrap(),
            ChainVerdict::BrokenAt { seq: 413 }
        );
        assert!(matches!(l.verify_chain(5, 1000), Err(LedgerError::RangeOutOfBounds { .. })));
        assert!(matches!(l.verify_chain(6, 5), Err(LedgerError::RangeOutOfBounds { .. })));
    }

    #[test]
    fn grants_then_filter() {
        let (l, tok) = Ledger::new();
        let g = TraceIdGenerator::new(1);
        let r = l.append(tok.expose(), draft(&g, "router", Some("c1"), EventKind::RouteDecision)).unwrap();
        l.append(tok.expose(), draft(&g, "router", Some("c2"), EventKind::RouteDecision)).unwrap();
        l.append(tok.expose(), draft(&g, "signal-c1", Some("c1"), EventKind::Produce)).unwrap();

        let c1: BTreeSet<String> = ["client:c1".to_string()].into();
        let got = l.query(&c1, &QueryFilter { event_kind: Some(EventKind::RouteDecision), ..Default::default() });
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].record.client.as_deref(), Some("c1"));

        let trace: BTreeSet<String> = [format!("trace:{}", r.record.trace.trace_id)].into();
        assert_eq!(l.query(&trace, &QueryFilter::default()), vec![r]);
        assert!(l.query(&BTreeSet::new(), &QueryFilter::default()).is_empty());
        let all: BTreeSet<String> = ["*".to_string()].into();
        assert_eq!(l.query(&all, &QueryFilter::default()).len(), 3);
    }

    #[test]
    fn journal_file_mirrors_memory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.journal");
        let (l, tok) = Ledger::new();
        let g = TraceIdGenerator::new(1);
        l.append(tok.expose(), draft(&g, "a", None, EventKind::Produce)).unwrap();
        l.attach_journal(&path).unwrap();
        l.append(tok.expose(), draft(&g, "b", None, EventKind::Produce)).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes, l.journal_bytes());
        assert_eq!(journal::read_journal(&bytes).unwrap(), l.snapshot());
    }
}
