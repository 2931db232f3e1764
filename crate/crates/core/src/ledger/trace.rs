//! W3C Trace Context identifiers and `traceparent` encoding.
//!
//! Only version `00` is produced or accepted, in canonical lowercase form:
//! `00-{32 hex trace-id}-{16 hex parent-id}-{2 hex flags}`.

use std::fmt;
use std::str::FromStr;

use parking_lot::Mutex;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const TRACEPARENT_LEN: usize = 55;
pub const FLAG_SAMPLED: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TraceId(pub [u8; 16]);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpanId(pub [u8; 8]);

impl TraceId {
    pub fn to_hex(self) -> String {
        hex::encode(self.0)
    }

    pub fn is_valid(self) -> bool {
        self.0 != [0; 16]
    }
}

impl SpanId {
    pub fn to_hex(self) -> String {
        hex::encode(self.0)
    }

    pub fn is_valid(self) -> bool {
        self.0 != [0; 8]
    }

    pub fn parse(s: &str) -> Result<Self, TraceError> {
        let mut out = [0u8; 8];
        decode_lower_hex(s, &mut out)?;
        let id = SpanId(out);
        if !id.is_valid() {
            return Err(TraceError::MalformedHeader("all-zero span id"));
        }
        Ok(id)
    }
}

impl fmt::Display for TraceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Display for SpanId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceContext {
    pub trace_id: TraceId,
    pub span_id: SpanId,
    pub flags: u8,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("malformed traceparent header: {0}")]
    MalformedHeader(&'static str),
}

fn decode_lower_hex(s: &str, out: &mut [u8]) -> Result<(), TraceError> {
    if s.len() != out.len() * 2 {
        return Err(TraceError::MalformedHeader("wrong field length"));
    }
    if !s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
        return Err(TraceError::MalformedHeader("non-lowercase-hex character"));
    }
    hex::decode_to_slice(s, out).map_err(|_| TraceError::MalformedHeader("bad hex"))
}

pub fn parse_traceparent(header: &str) -> Result<TraceContext, TraceError> {
    if header.len() != TRACEPARENT_LEN {
        return Err(TraceError::MalformedHeader("wrong length"));
    }
    let parts: Vec<&str> = header.split('-').collect();
    let [version, trace, span, flags] = parts.as_slice() else {
        return Err(TraceError::MalformedHeader("expected four fields"));
    };
    let mut v = [0u8; 1];
    decode_lower_hex(version, &mut v)?;
    if v[0] != 0 {
        return Err(TraceError::MalformedHeader("unsupported version"));
    }
    let mut trace_id = [0u8; 16];
    decode_lower_hex(trace, &mut trace_id)?;
    let mut span_id = [0u8; 8];
    decode_lower_hex(span, &mut span_id)?;
    let mut f = [0u8; 1];
    decode_lower_hex(flags, &mut f)?;
    let ctx = TraceContext {
        trace_id: TraceId(trace_id),
        span_id: SpanId(span_id),
        flags: f[0],
    };
    if !ctx.trace_id.is_valid() {
        return Err(TraceError::MalformedHeader("all-zero trace id"));
    }
    if !ctx.span_id.is_valid() {
        return Err(TraceError::MalformedHeader("all-zero span id"));
    }
    Ok(ctx)
}

pub fn format_traceparent(ctx: &TraceContext) -> String {
    format!("00-{}-{}-{:02x}", ctx.trace_id, ctx.span_id, ctx.flags)
}

impl fmt::Display for TraceContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_traceparent(self))
    }
}

impl FromStr for TraceContext {
    type Err = TraceError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_traceparent(s)
    }
}

impl Serialize for TraceContext {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_traceparent(self))
    }
}

impl<'de> Deserialize<'de> for TraceContext {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_traceparent(&s).map_err(serde::de::Error::custom)
    }
}

impl Serialize for SpanId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for SpanId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        SpanId::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Seeded source of trace and span ids. Same seed, same id sequence.
#[derive(Debug)]
pub struct TraceIdGenerator {
    rng: Mutex<ChaCha8Rng>,
}

impl TraceIdGenerator {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    fn fill_nonzero(&self, buf: &mut [u8]) {
        let mut rng = self.rng.lock();
        loop {
            rng.fill_bytes(buf);
            if buf.iter().any(|&b| b != 0) {
                return;
            }
        }
    }

    pub fn new_root_context(&self) -> TraceContext {
        let mut t = [0u8; 16];
        let mut s = [0u8; 8];
        self.fill_nonzero(&mut t);
        self.fill_nonzero(&mut s);
        TraceContext {
            trace_id: TraceId(t),
            span_id: SpanId(s),
            flags: FLAG_SAMPLED,
        }
    }

    pub fn child_context(&self, parent: &TraceContext) -> TraceContext {
        let mut s = [0u8; 8];
        loop {
            self.fill_nonzero(&mut s);
            if s != parent.span_id.0 {
                break;
            }
        }
        TraceContext {
            trace_id: parent.trace_id,
            span_id: SpanId(s),
            flags: parent.flags,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use regex::Regex;

    // traceparent = version "-" trace-id "-" parent-id "-" trace-flags,
    // restricted to version 00 and lowercase HEXDIGLC.
    fn grammar() -> Regex {
        Regex::new(r"^00-[0-9a-f]{32}-[0-9a-f]{16}-[0-9a-f]{2}$").unwrap()
    }

    fn oracle_valid(h: &str) -> bool {
        grammar().is_match(h)
            && &h[3..35] != "00000000000000000000000000000000"
            && &h[36..52] != "0000000000000000"
    }

    #[test]
    fn child_shares_trace() {
        let g = TraceIdGenerator::new(7);
        let root = g.new_root_context();
        let child = g.child_context(&root);
        assert_eq!(child.trace_id, root.trace_id);
        assert_ne!(child.span_id, root.span_id);
        assert!(grammar().is_match(&format_traceparent(&root)));
    }

    #[test]
    fn seeded_sequences_repeat() {
        let a = TraceIdGenerator::new(42);
        let b = TraceIdGenerator::new(42);
        let c = TraceIdGenerator::new(43);
        let sa: Vec<_> = (0..20).map(|_| a.new_root_context()).collect();
        let sb: Vec<_> = (0..20).map(|_| b.new_root_context()).collect();
        let sc: Vec<_> = (0..20).map(|_| c.new_root_context()).collect();
        assert_eq!(sa, sb);
        assert_ne!(sa, sc);
    }

    #[test]
    fn parses_valid_header() {
        let h = "00-4bf92f3577b34da6a3ce929d0e0e4736-00f067aa0ba902b7-01";
        let ctx = parse_traceparent(h).unwrap();
        assert_eq!(ctx.flags, 1);
        assert_eq!(format_traceparent(&ctx), h);
    }

    #[test]
    fn rejects_invalid_headers() {
        for h in [
            "00-00000000000000000000000000000000-00f067aa0ba902b7-01",
            "00-4bf92f3577b34da6a3ce929d0e0e4736-0000000000000000-01",
            "00-4BF92F3577B34DA6A3CE929D0E0E4736-00f067aa0ba902b7-01",
            "01-4bf92f3577b34da6a3ce929d0e0e4736-00f067aa0ba902b7-01",
            "ff-4bf92f3577b34da6a3ce929d0e0e4736-00f067aa0ba902b7-01",
            "00-4bf92f3577b34da6a3ce929d0e0e4736-00f067aa0ba902b7-1",
            "00-4bf92f3577b34da6a3ce929d0e0e4736_00f067aa0ba902b7-01",
            "00-4bf92f3577b34da6a3ce929d0e0e473-600f067aa0ba902b7-01",
            "",
        ] {
            assert!(parse_traceparent(h).is_err(), "{h}");
        }
    }

    proptest! {
        #[test]
        fn parser_agrees_with_grammar(h in "(00|01|0f|ff|0A)-[0-9a-fA-F]{32}-[0-9a-f]{16}-[0-9a-f]{2}|00-0{32}-[0-9a-f]{16}-01|00-[0-9a-f]{32}-0{16}-00") {
            prop_assert_eq!(parse_traceparent(&h).is_ok(), oracle_valid(&h));
            if let Ok(ctx) = parse_traceparent(&h) {
                prop_assert_eq!(format_traceparent(&ctx), h);
            }
        }

        #[test]
        fn generated_contexts_validate(seed in any::<u64>()) {
            let g = TraceIdGenerator::new(seed);
            let root = g.new_root_context();
            let child = g.child_context(&root);
            prop_assert!(oracle_valid(&format_traceparent(&root)));
            prop_assert!(oracle_valid(&format_traceparent(&child)));
        }
    }
}
