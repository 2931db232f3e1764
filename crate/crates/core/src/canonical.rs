//! Canonical JSON encoding and hashing helpers.
//!
//! Canonical form: UTF-8, object keys sorted by byte order, no insignificant
//! whitespace. Only integers, strings, booleans, null, arrays and objects are
//! expected in hashed documents; floats are encoded with serde_json's
//! shortest round-trip form.

use serde_json::Value;
use sha2::{Digest, Sha256};

pub type Hash32 = [u8; 32];

pub const ZERO_HASH: Hash32 = [0u8; 32];

pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, &mut out);
    out
}

fn write_value(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_value(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(v, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

pub fn sha256(bytes: &[u8]) -> Hash32 {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().into()
}

pub fn hash_value(value: &Value) -> Hash32 {
    sha256(canonical_json(value).as_bytes())
}

/// `SHA-256(prev ‖ body)`, the chaining step of the ledger.
pub fn chain_hash(prev: &Hash32, body: &[u8]) -> Hash32 {
    let mut h = Sha256::new();
    h.update(prev);
    h.update(body);
    h.finalize().into()
}
