//! Channel-name grammar and ACL pattern matching.

use serde::{Deserialize, Serialize};

use crate::identity::{AclEntry, Scope};

pub const CLIENT_TEMPLATE: &str = "{client_id}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Produce,
    Consume,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Produce => "produce",
            Direction::Consume => "consume",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "snake_case")]
pub enum AccessVerdict {
    Allow,
    Deny(DenyReason),
}

impl AccessVerdict {
    pub fn is_allowed(&self) -> bool {
        matches!(self, AccessVerdict::Allow)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenyReason {
    MalformedChannel,
    NoMatchingAcl,
}

fn is_head_segment(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b == b'_')
}

fn is_tail_segment(s: &str) -> bool {
    !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// `[a-z_]+(\.[a-z0-9_]+)*`
pub fn is_valid_channel_name(name: &str) -> bool {
    let mut segs = name.split('.');
    match segs.next() {
        Some(head) if is_head_segment(head) => segs.all(is_tail_segment),
        _ => false,
    }
}

/// Client ids are substituted into channel segments, so they must be valid
/// non-leading segments themselves.
pub fn is_valid_client_id(id: &str) -> bool {
    is_tail_segment(id)
}

pub fn validate_channel_pattern(pattern: &str) -> Result<(), String> {
    let segs: Vec<&str> = pattern.split('.').collect();
    let last = segs.len() - 1;
    for (i, seg) in segs.iter().enumerate() {
        let ok = match *seg {
            "*" => i == last,
            CLIENT_TEMPLATE => i > 0,
            s if i == 0 => is_head_segment(s),
            s => is_tail_segment(s),
        };
        if !ok {
            return Err(format!("invalid channel pattern `{pattern}` at segment `{seg}`"));
        }
    }
    Ok(())
}

/// Tool patterns are exact names or a prefix followed by a trailing `*`.
pub fn validate_tool_pattern(pattern: &str) -> Result<(), String> {
    let body = pattern.strip_suffix('*').unwrap_or(pattern);
    let ok = body
        .bytes()
        .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-' || b == b'_')
        && (!body.is_empty() || pattern == "*");
    if ok {
        Ok(())
    } else {
        Err(format!("invalid tool pattern `{pattern}`"))
    }
}

pub fn tool_pattern_matches(pattern: &str, tool: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => tool.starts_with(prefix),
        None => pattern == tool,
    }
}

/// Does `pattern` match `channel` for a scope holding `client_ids`?
pub fn channel_pattern_matches<'a, I>(pattern: &str, channel: &str, client_ids: I) -> bool
where
    I: IntoIterator<Item = &'a String> + Clone,
{
    let pat: Vec<&str> = pattern.split('.').collect();
    let chan: Vec<&str> = channel.split('.').collect();
    for (i, p) in pat.iter().enumerate() {
        match *p {
            "*" => return chan.len() > i,
            CLIENT_TEMPLATE => match chan.get(i) {
                Some(seg) if client_ids.clone().into_iter().any(|c| c == seg) => {}
                _ => return false,
            },
            lit => {
                if chan.get(i) != Some(&lit) {
                    return false;
                }
            }
        }
    }
    pat.len() == chan.len()
}

fn entry_matches(entry: &AclEntry, scope: &Scope, channel: &str, direction: Direction) -> bool {
    entry.direction == direction
        && channel_pattern_matches(&entry.channel_pattern, channel, &scope.client_ids)
}

/// Pure function of `(scope, channel, direction)`.
pub fn check_channel_access(scope: &Scope, channel: &str, direction: Direction) -> AccessVerdict {
    if !is_valid_channel_name(channel) {
        return AccessVerdict::Deny(DenyReason::MalformedChannel);
    }
    if scope
        .channel_acls
        .iter()
        .any(|e| entry_matches(e, scope, channel, direction))
    {
        AccessVerdict::Allow
    } else {
        AccessVerdict::Deny(DenyReason::NoMatchingAcl)
    }
}

/// The client segment a channel carries under a `{client_id}` ACL entry of
/// `scope`, if any. Used by infrastructure to bind a step to a client.
pub fn client_of_channel(scope: &Scope, channel: &str, direction: Direction) -> Option<String> {
    let chan: Vec<&str> = channel.split('.').collect();
    scope
        .channel_acls
        .iter()
        .filter(|e| entry_matches(e, scope, channel, direction))
        .find_map(|e| {
            e.channel_pattern
                .split('.')
                .position(|s| s == CLIENT_TEMPLATE)
                .and_then(|i| chan.get(i).map(|s| s.to_string()))
        })
}
