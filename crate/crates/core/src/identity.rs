//! Infrastructure-issued credentials binding principals to immutable scopes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::grant;
use crate::policy::acl::{self, Direction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrincipalKind {
    Agent,
    Service,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub id: String,
    pub kind: PrincipalKind,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclEntry {
    pub channel_pattern: String,
    pub direction: Direction,
}

impl AclEntry {
    pub fn produce(pattern: &str) -> Self {
        Self { channel_pattern: pattern.into(), direction: Direction::Produce }
    }

    pub fn consume(pattern: &str) -> Self {
        Self { channel_pattern: pattern.into(), direction: Direction::Consume }
    }
}

/// Authorization scope captured at issuance and never widened.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scope {
    #[serde(default)]
    pub client_ids: BTreeSet<String>,
    #[serde(default)]
    pub channel_acls: Vec<AclEntry>,
    #[serde(default)]
    pub tool_acls: BTreeSet<String>,
    #[serde(default)]
    pub transcript_grants: BTreeSet<String>,
    #[serde(default)]
    pub budgets_ref: Option<String>,
    #[serde(default)]
    pub rate_refs: Vec<String>,
    /// Data-plane administration (channel creation, registration, inspection).
    #[serde(default)]
    pub admin: bool,
}

impl Scope {
    pub fn validate(&self) -> Result<(), String> {
        for c in &self.client_ids {
            if !acl::is_valid_client_id(c) {
                return Err(format!("invalid client id `{c}`"));
            }
        }
        for e in &self.channel_acls {
            acl::validate_channel_pattern(&e.channel_pattern)?;
        }
        for t in &self.tool_acls {
            acl::validate_tool_pattern(t)?;
        }
        for g in &self.transcript_grants {
            grant::validate_grant(g)?;
        }
        Ok(())
    }

    /// The single client this scope can act for, if unambiguous.
    pub fn sole_client(&self) -> Option<&str> {
        match self.client_ids.len() {
            1 => self.client_ids.iter().next().map(String::as_str),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credential {
    /// Stable handle used in transcripts and admin URLs; never the token.
    pub id: String,
    pub token: String,
    pub principal_id: String,
    pub issued_at: u64,
    pub expires_at: Option<u64>,
    pub revoked: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdentityError {
    #[error("unknown principal `{0}`")]
    UnknownPrincipal(String),
    #[error("principal `{0}` already registered")]
    DuplicatePrincipal(String),
    #[error("malformed scope: {0}")]
    MalformedScope(String),
    #[error("unknown credential")]
    UnknownCredential,
}

/// Why resolution failed. Recorded in the transcript; callers only ever see
/// a single "authentication failed" surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthFailure {
    UnknownCredential,
    Expired,
    Revoked,
}

impl AuthFailure {
    pub fn as_str(self) -> &'static str {
        match self {
            AuthFailure::UnknownCredential => "unknown_credential",
            AuthFailure::Expired => "expired",
            AuthFailure::Revoked => "revoked",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub principal: Principal,
    pub scope: Arc<Scope>,
    pub credential_id: String,
}

#[derive(Debug)]
struct Entry {
    credential: Credential,
    scope: Arc<Scope>,
}

#[derive(Debug, Default)]
struct Tables {
    principals: BTreeMap<String, Principal>,
    by_token: HashMap<String, Entry>,
    token_of_id: HashMap<String, String>,
}

/// Registry of principals and credentials. Readers run concurrently;
/// issuance and revocation serialize on the write lock.
#[derive(Debug, Default)]
pub struct IdentityRegistry {
    tables: RwLock<Tables>,
    next_id: AtomicU64,
}

fn fresh_token() -> String {
    format!("adp_{:032x}", rand::random::<u128>())
}

impl IdentityRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_principal(&self, principal: Principal) -> Result<(), IdentityError> {
        let mut t = self.tables.write();
        if t.principals.contains_key(&principal.id) {
            return Err(IdentityError::DuplicatePrincipal(principal.id));
        }
        t.principals.insert(principal.id.clone(), principal);
        Ok(())
    }

    pub fn principal(&self, id: &str) -> Option<Principal> {
        self.tables.read().principals.get(id).cloned()
    }

    pub fn issue_credential(
        &self,
        principal_id: &str,
        scope: Scope,
        ttl: Option<u64>,
        now: u64,
    ) -> Result<Credential, IdentityError> {
        scope.validate().map_err(IdentityError::MalformedScope)?;
        let mut t = self.tables.write();
        if !t.principals.contains_key(principal_id) {
            return Err(IdentityError::UnknownPrincipal(principal_id.into()));
        }
        let mut token = fresh_token();
        while t.by_token.contains_key(&token) {
            token = fresh_token();
        }
        let n = self.next_id.fetch_add(1, Ordering::SeqCst);
        let credential = Credential {
            id: format!("cred-{n:06}"),
            token: token.clone(),
            principal_id: principal_id.into(),
            issued_at: now,
            expires_at: ttl.map(|d| now.saturating_add(d)),
            revoked: false,
        };
        t.token_of_id.insert(credential.id.clone(), token.clone());
        t.by_token.insert(
            token,
            Entry {
                credential: credential.clone(),
                scope: Arc::new(scope),
            },
        );
        Ok(credential)
    }

    /// Pure lookup. Expiry is inclusive: a credential expiring at `T` fails
    /// when resolved at `T`.
    pub fn resolve(&self, token: &str, now: u64) -> Result<Resolved, (AuthFailure, Option<String>)> {
        let t = self.tables.read();
        let entry = t
            .by_token
            .get(token)
            .ok_or((AuthFailure::UnknownCredential, None))?;
        let c = &entry.credential;
        if c.revoked {
            return Err((AuthFailure::Revoked, Some(c.principal_id.clone())));
        }
        if c.expires_at.is_some_and(|e| now >= e) {
            return Err((AuthFailure::Expired, Some(c.principal_id.clone())));
        }
        let principal = t
            .principals
            .get(&c.principal_id)
            .cloned()
            .ok_or((AuthFailure::UnknownCredential, None))?;
        Ok(Resolved {
            principal,
            scope: entry.scope.clone(),
            credential_id: c.id.clone(),
        })
    }

    /// Revokes by token or by credential id. Idempotent.
    pub fn revoke(&self, token_or_id: &str) -> Result<Credential, IdentityError> {
        let mut t = self.tables.write();
        let token = match t.token_of_id.get(token_or_id) {
            Some(tok) => tok.clone(),
            None => token_or_id.to_string(),
        };
        let entry = t
            .by_token
            .get_mut(&token)
            .ok_or(IdentityError::UnknownCredential)?;
        entry.credential.revoked = true;
        Ok(entry.credential.clone())
    }

    pub fn credential_count(&self) -> usize {
        self.tables.read().by_token.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> IdentityRegistry {
        let r = IdentityRegistry::new();
        r.register_principal(Principal {
            id: "signal-c1".into(),
            kind: PrincipalKind::Agent,
            display_name: "Signal Agent (c1)".into(),
        })
        .unwrap();
        r
    }

    fn signal_scope() -> Scope {
        Scope {
            client_ids: ["c1".to_string()].into(),
            channel_acls: vec![AclEntry::produce("signals.{client_id}")],
            ..Scope::default()
        }
    }

    #[test]
    fn issue_and_resolve_round_trip() {
        let r = registry();
        let c = r.issue_credential("signal-c1", signal_scope(), None, 0).unwrap();
        let res = r.resolve(&c.token, 100).unwrap();
        assert_eq!(res.principal.id, "signal-c1");
        assert_eq!(*res.scope, signal_scope());
        assert!(!c.token.contains("signal"));
    }

    #[test]
    fn unknown_principal_and_malformed_scope() {
        let r = registry();
        assert_eq!(
            r.issue_credential("ghost", Scope::default(), None, 0),
            Err(IdentityError::UnknownPrincipal("ghost".into()))
        );
        let bad = Scope {
            channel_acls: vec![AclEntry::produce("signals.{tenant}")],
            ..Scope::default()
        };
        assert!(matches!(r.issue_credential("signal-c1", bad, None, 0), Err(IdentityError::MalformedScope(_))));
        let bad_client = Scope { client_ids: ["C-1".to_string()].into(), ..Scope::default() };
        assert!(matches!(r.issue_credential("signal-c1", bad_client, None, 0), Err(IdentityError::MalformedScope(_))));
    }

    #[test]
    fn tokens_never_collide() {
        let r = registry();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..1000 {
            let c = r.issue_credential("signal-c1", Scope::default(), None, 0).unwrap();
            assert!(seen.insert(c.token.clone()));
            assert_eq!(r.resolve(&c.token, 0).unwrap().principal.id, "signal-c1");
        }
    }

    #[test]
    fn expiry_boundary_inclusive() {
        let r = registry();
        let c = r.issue_credential("signal-c1", Scope::default(), Some(10), 5).unwrap();
        assert_eq!(c.expires_at, Some(15));
        assert!(r.resolve(&c.token, 14).is_ok());
        assert_eq!(r.resolve(&c.token, 15).unwrap_err().0, AuthFailure::Expired);
    }

    #[test]
    fn revoke_is_idempotent_and_final() {
        let r = registry();
        let c = r.issue_credential("signal-c1", Scope::default(), None, 0).unwrap();
        r.revoke(&c.token).unwrap();
        assert_eq!(r.resolve(&c.token, 0).unwrap_err().0, AuthFailure::Revoked);
        assert!(r.revoke(&c.id).unwrap().revoked);
        assert_eq!(r.revoke("nope"), Err(IdentityError::UnknownCredential));
    }

    #[test]
    fn duplicate_principal() {
        let r = registry();
        let p = r.principal("signal-c1").unwrap();
        assert_eq!(r.register_principal(p), Err(IdentityError::DuplicatePrincipal("signal-c1".into())));
    }
}
