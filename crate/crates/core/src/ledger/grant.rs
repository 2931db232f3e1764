//! Transcript grant patterns.
//!
//! A grant is one of `*`, `trace:<32 hex>`, `client:<id>` or `actor:<id>`.
//! A record is visible when any grant matches its trace id, client
//! association or acting principal.

use super::record::TranscriptRecord;

pub fn validate_grant(g: &str) -> Result<(), String> {
    let ok = match g.split_once(':') {
        None => g == "*",
        Some(("trace", id)) => {
            id.len() == 32 && id.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
        }
        Some(("client", id)) | Some(("actor", id)) => !id.is_empty(),
        Some(_) => false,
    };
    if ok {
        Ok(())
    } else {
        Err(format!("invalid transcript grant `{g}`"))
    }
}

pub fn grant_matches(grant: &str, record: &TranscriptRecord) -> bool {
    match grant.split_once(':') {
        None => grant == "*",
        Some(("trace", id)) => record.trace.trace_id.to_hex() == id,
        Some(("client", id)) => record.client.as_deref() == Some(id),
        Some(("actor", id)) => record.actor == id,
        Some(_) => false,
    }
}
