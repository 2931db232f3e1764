use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use super::trace::{SpanId, TraceContext};
use crate::canonical::{canonical_json, chain_hash, Hash32};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    CredentialEvent,
    Produce,
    Consume,
    ToolCall,
    ToolDenied,
    ModelCall,
    ModelDenied,
    RouteDecision,
    ApprovalDecision,
    OrderSubmitted,
    OrderFilled,
    GuardrailVerdict,
}

impl EventKind {
    pub const ALL: [EventKind; 12] = [
        EventKind::CredentialEvent,
        EventKind::Produce,
        EventKind::Consume,
        EventKind::ToolCall,
        EventKind::ToolDenied,
        EventKind::ModelCall,
        EventKind::ModelDenied,
        EventKind::RouteDecision,
        EventKind::ApprovalDecision,
        EventKind::OrderSubmitted,
        EventKind::OrderFilled,
        EventKind::GuardrailVerdict,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::CredentialEvent => "credential_event",
            EventKind::Produce => "produce",
            EventKind::Consume => "consume",
            EventKind::ToolCall => "tool_call",
            EventKind::ToolDenied => "tool_denied",
            EventKind::ModelCall => "model_call",
            EventKind::ModelDenied => "model_denied",
            EventKind::RouteDecision => "route_decision",
            EventKind::ApprovalDecision => "approval_decision",
            EventKind::OrderSubmitted => "order_submitted",
            EventKind::OrderFilled => "order_filled",
            EventKind::GuardrailVerdict => "guardrail_verdict",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

pub(crate) mod hex32 {
    use super::*;

    pub fn serialize<S: Serializer>(h: &Hash32, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(h))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Hash32, D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(out)
    }
}

/// A transcript entry before sealing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptRecord {
    pub seq: u64,
    pub logical_time: u64,
    pub trace: TraceContext,
    pub parent_span: Option<SpanId>,
    pub actor: String,
    pub event_kind: EventKind,
    /// Client the event concerns, when the infrastructure knows it.
    pub client: Option<String>,
    pub body: Value,
    /// Hash of the pre-redaction body; equals the body hash when nothing
    /// was redacted.
    #[serde(with = "hex32")]
    pub body_prehash: Hash32,
}

impl TranscriptRecord {
    pub fn canonical(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("record serializes"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SealedRecord {
    pub record: TranscriptRecord,
    #[serde(with = "hex32")]
    pub prev_hash: Hash32,
    #[serde(with = "hex32")]
    pub this_hash: Hash32,
}

impl SealedRecord {
    pub fn seal(record: TranscriptRecord, prev_hash: Hash32) -> Self {
        let this_hash = chain_hash(&prev_hash, record.canonical().as_bytes());
        Self {
            record,
            prev_hash,
            this_hash,
        }
    }

    /// Whether `this_hash` matches the recomputed chain hash.
    pub fn hash_is_consistent(&self) -> bool {
        chain_hash(&self.prev_hash, self.record.canonical().as_bytes()) == self.this_hash
    }

    pub fn canonical(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("sealed record serializes"))
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("sealed record serializes")
    }
}
