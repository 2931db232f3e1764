//! Per-client message channels with credential-enforced ACLs.
//!
//! Envelope metadata is written here at append time and never leaves the
//! infrastructure: [`Consumed`] carries payload bytes only.

use std::collections::BTreeMap;
use std::sync::Arc;

use base64::Engine;
use parking_lot::RwLock;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::canonical::sha256;
use crate::ledger::{EventKind, TraceContext};
use crate::plane::{AuditError, AuthError, DataPlane, HopContext, OpenSpan};
use crate::policy::acl::{self, client_of_channel, Direction};
use crate::identity::Resolved;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EnvelopeMeta {
    pub producer_principal: String,
    pub trace: TraceContext,
    pub logical_time: u64,
    pub offset: u64,
    /// Client the producing step was bound to by its runtime harness, or
    /// the producer's sole scoped client.
    pub client_binding: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Envelope {
    #[serde(with = "b64")]
    pub payload: Vec<u8>,
    pub meta: EnvelopeMeta,
}

mod b64 {
    use base64::Engine;
    use serde::Serializer;

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }
}

#[derive(Debug, Default)]
pub(crate) struct Channel {
    records: RwLock<Vec<Envelope>>,
}

#[derive(Debug, Default)]
pub(crate) struct ChannelStore {
    channels: RwLock<BTreeMap<String, Arc<Channel>>>,
}

impl ChannelStore {
    fn get(&self, name: &str) -> Option<Arc<Channel>> {
        self.channels.read().get(name).cloned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelCreated {
    Created,
    AlreadyExists,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BrokerError {
    #[error("authentication failed")]
    AuthenticationFailed,
    #[error("channel access denied")]
    ChannelAccessDenied,
    #[error("unknown channel")]
    UnknownChannel,
    #[error("unauthorized")]
    Unauthorized,
    #[error("malformed channel name")]
    MalformedChannel,
    #[error("offset out of range")]
    OffsetOutOfRange,
    #[error("invalid cursor")]
    InvalidCursor,
    #[error(transparent)]
    Audit(#[from] AuditError),
}

impl From<AuthError> for BrokerError {
    fn from(e: AuthError) -> Self {
        match e {
            AuthError::AuthenticationFailed => BrokerError::AuthenticationFailed,
            AuthError::Audit(a) => BrokerError::Audit(a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cursor {
    pub channel: String,
    pub offset: u64,
}

/// Result of an append, for infrastructure callers.
#[derive(Debug, Clone, Copy)]
pub struct Produced {
    pub offset: u64,
    pub span: TraceContext,
}

/// Result of a read: payloads only, plus infrastructure trace context.
#[derive(Debug, Clone)]
pub struct Consumed {
    pub payloads: Vec<Vec<u8>>,
    pub next: Cursor,
    pub span: TraceContext,
}

pub(crate) fn payload_fields(payload: &[u8]) -> Value {
    match std::str::from_utf8(payload) {
        Ok(s) => json!({"payload": s, "payload_encoding": "utf8", "payload_sha256": hex::encode(sha256(payload))}),
        Err(_) => json!({
            "payload": base64::engine::general_purpose::STANDARD.encode(payload),
            "payload_encoding": "base64",
            "payload_sha256": hex::encode(sha256(payload)),
        }),
    }
}

fn merge(mut a: Value, b: Value) -> Value {
    if let (Some(a), Value::Object(b)) = (a.as_object_mut(), b) {
        a.extend(b);
    }
    a
}

impl DataPlane {
    pub fn create_channel(&self, admin_token: &str, name: &str) -> Result<ChannelCreated, BrokerError> {
        let r = self.authenticate(&HopContext::root(), admin_token, "create_channel")?;
        if !r.scope.admin {
            return Err(BrokerError::Unauthorized);
        }
        if !acl::is_valid_channel_name(name) {
            return Err(BrokerError::MalformedChannel);
        }
        let mut map = self.channels.channels.write();
        if map.contains_key(name) {
            return Ok(ChannelCreated::AlreadyExists);
        }
        map.insert(name.to_string(), Arc::new(Channel::default()));
        Ok(ChannelCreated::Created)
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.channels.channels.read().keys().cloned().collect()
    }

    /// Next offset to be assigned on `channel` (infrastructure polling aid).
    pub fn end_offset(&self, channel: &str) -> Option<u64> {
        self.channels.get(channel).map(|c| c.records.read().len() as u64)
    }

    fn record_client(r: &Resolved, channel: &str, direction: Direction, binding: Option<&str>) -> Option<String> {
        binding
            .map(str::to_string)
            .or_else(|| client_of_channel(&r.scope, channel, direction))
            .or_else(|| r.scope.sole_client().map(str::to_string))
    }

    fn deny_io(
        &self,
        span: OpenSpan,
        r: &Resolved,
        op: &'static str,
        channel: &str,
        reason: &str,
        err: BrokerError,
    ) -> BrokerError {
        let body = json!({"op": op, "outcome": "denied", "reason": reason, "channel": channel});
        let kind = if op == "produce" { EventKind::Produce } else { EventKind::Consume };
        match self.emit_at(span, kind, &r.principal.id, None, body, None) {
            Ok(_) => err,
            Err(a) => BrokerError::Audit(a),
        }
    }

    /// Appends `payload` to `channel` as the credential's principal. The
    /// broker writes all envelope metadata.
    pub fn produce(&self, hop: &HopContext, token: &str, channel: &str, payload: &[u8]) -> Result<Produced, BrokerError> {
        self.count_op("produce");
        let r = self.authenticate(hop, token, "produce")?;
        let span = self.open_span(hop);
        if let Some(b) = &hop.binding {
            if !r.scope.client_ids.contains(b) {
                return Err(self.deny_io(span, &r, "produce", channel, "binding_out_of_scope", BrokerError::ChannelAccessDenied));
            }
        }
        if !acl::check_channel_access(&r.scope, channel, Direction::Produce).is_allowed() {
            return Err(self.deny_io(span, &r, "produce", channel, "acl", BrokerError::ChannelAccessDenied));
        }
        let Some(ch) = self.channels.get(channel) else {
            return Err(self.deny_io(span, &r, "produce", channel, "unknown_channel", BrokerError::UnknownChannel));
        };
        let client = Self::record_client(&r, channel, Direction::Produce, hop.binding.as_deref());
        let mut records = ch.records.write();
        let offset = records.len() as u64;
        let body = merge(
            json!({"op": "produce", "outcome": "ok", "channel": channel, "offset": offset, "binding": hop.binding}),
            payload_fields(payload),
        );
        self.emit_at(span, EventKind::Produce, &r.principal.id, client.as_deref(), body, None)?;
        records.push(Envelope {
            payload: payload.to_vec(),
            meta: EnvelopeMeta {
                producer_principal: r.principal.id.clone(),
                trace: span.ctx,
                logical_time: self.clock.now(),
                offset,
                client_binding: hop.binding.clone().or_else(|| r.scope.sole_client().map(str::to_string)),
            },
        });
        Ok(Produced { offset, span: span.ctx })
    }

    /// Reads up to `max` payloads from `offset`. The consume record joins
    /// the trace of the first envelope read.
    pub fn consume(&self, hop: &HopContext, token: &str, channel: &str, offset: u64, max: u64) -> Result<Consumed, BrokerError> {
        self.count_op("consume");
        let r = self.authenticate(hop, token, "consume")?;
        if !acl::check_channel_access(&r.scope, channel, Direction::Consume).is_allowed() {
            let span = self.open_span(hop);
            return Err(self.deny_io(span, &r, "consume", channel, "acl", BrokerError::ChannelAccessDenied));
        }
        let Some(ch) = self.channels.get(channel) else {
            let span = self.open_span(hop);
            return Err(self.deny_io(span, &r, "consume", channel, "unknown_channel", BrokerError::UnknownChannel));
        };
        let records = ch.records.read();
        let end = records.len() as u64;
        if max == 0 || offset > end {
            let span = self.open_span(hop);
            return Err(self.deny_io(span, &r, "consume", channel, "invalid_cursor", BrokerError::InvalidCursor));
        }
        let upto = end.min(offset.saturating_add(max));
        let batch = &records[offset as usize..upto as usize];
        let span = match batch.first() {
            Some(e) => self.open_span(&HopContext::under(e.meta.trace)),
            None => self.open_span(hop),
        };
        let client = Self::record_client(&r, channel, Direction::Consume, None);
        let body = json!({
            "op": "consume",
            "outcome": "ok",
            "channel": channel,
            "from_offset": offset,
            "next_offset": upto,
            "envelopes": batch.iter().map(|e| json!({
                "offset": e.meta.offset,
                "trace": e.meta.trace.to_string(),
                "producer": e.meta.producer_principal,
                "payload_sha256": hex::encode(sha256(&e.payload)),
            })).collect::<Vec<_>>(),
        });
        self.emit_at(span, EventKind::Consume, &r.principal.id, client.as_deref(), body, None)?;
        Ok(Consumed {
            payloads: batch.iter().map(|e| e.payload.clone()).collect(),
            next: Cursor { channel: channel.to_string(), offset: upto },
            span: span.ctx,
        })
    }

    /// Full envelope including metadata; admin only.
    pub fn inspect_envelope(&self, admin_token: &str, channel: &str, offset: u64) -> Result<Envelope, BrokerError> {
        let r = self.authenticate(&HopContext::root(), admin_token, "inspect_envelope")?;
        if !r.scope.admin {
            return Err(BrokerError::Unauthorized);
        }
        self.envelope(channel, offset)
    }

    /// Infrastructure-side read of a full envelope (router, approval service).
    pub(crate) fn envelope(&self, channel: &str, offset: u64) -> Result<Envelope, BrokerError> {
        let ch = self.channels.get(channel).ok_or(BrokerError::UnknownChannel)?;
        let records = ch.records.read();
        records.get(offset as usize).cloned().ok_or(BrokerError::OffsetOutOfRange)
    }
}
