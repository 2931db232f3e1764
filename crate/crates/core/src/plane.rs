//! The data plane: shared infrastructure state and the transcript emission
//! path every gateway, the broker and the pipeline services go through.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde_json::{json, Value};
use thiserror::Error;

use crate::ai::ModelRegistry;
use crate::broker::ChannelStore;
use crate::canonical::Hash32;
use crate::clock::LogicalClock;
use crate::identity::{
    Credential, IdentityError, IdentityRegistry, Principal, PrincipalKind, Resolved, Scope,
};
use crate::ledger::{
    EventKind, InternalToken, Ledger, LedgerError, QueryFilter, RecordDraft, SealedRecord, SpanId,
    TraceContext, TraceIdGenerator,
};
use crate::mcp::ToolRegistry;
use crate::policy::{BudgetLedger, PolicyConfig, PolicyError, PolicySet, RateLimiter};

/// Trace parent and client binding for one hop, supplied by
/// infrastructure (runtime harness, router, HTTP layer), never by agents.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HopContext {
    pub parent: Option<TraceContext>,
    pub binding: Option<String>,
}

impl HopContext {
    pub fn root() -> Self {
        Self::default()
    }

    pub fn under(parent: TraceContext) -> Self {
        Self { parent: Some(parent), binding: None }
    }

    pub fn bound(mut self, client: impl Into<String>) -> Self {
        self.binding = Some(client.into());
        self
    }
}

/// Ledger write failed; the triggering operation fails with it.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("audit unavailable: {0}")]
pub struct AuditError(pub String);

impl From<LedgerError> for AuditError {
    fn from(e: LedgerError) -> Self {
        AuditError(e.to_string())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthError {
    #[error("authentication failed")]
    AuthenticationFailed,
    #[error(transparent)]
    Audit(#[from] AuditError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AdminError {
    #[error("authentication failed")]
    AuthenticationFailed,
    #[error("unauthorized")]
    Unauthorized,
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Audit(#[from] AuditError),
}

impl From<AuthError> for AdminError {
    fn from(e: AuthError) -> Self {
        match e {
            AuthError::AuthenticationFailed => AdminError::AuthenticationFailed,
            AuthError::Audit(a) => AdminError::Audit(a),
        }
    }
}

/// A span opened for a record that will be emitted once the operation's
/// outcome is known.
#[derive(Debug, Clone, Copy)]
pub struct OpenSpan {
    pub ctx: TraceContext,
    pub parent: Option<SpanId>,
}

pub struct DataPlane {
    pub(crate) clock: LogicalClock,
    pub(crate) ids: TraceIdGenerator,
    pub(crate) identity: IdentityRegistry,
    pub(crate) policy: RwLock<Arc<PolicySet>>,
    pub(crate) rates: RateLimiter,
    pub(crate) budgets: BudgetLedger,
    pub(crate) ledger: Ledger,
    internal: InternalToken,
    pub(crate) channels: ChannelStore,
    pub(crate) tools: ToolRegistry,
    pub(crate) models: ModelRegistry,
    ops: Mutex<BTreeMap<&'static str, u64>>,
}

impl std::fmt::Debug for DataPlane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DataPlane")
            .field("now", &self.clock.now())
            .field("records", &self.ledger.len())
            .finish_non_exhaustive()
    }
}

pub const ADMIN_PRINCIPAL: &str = "adp-admin";

impl DataPlane {
    /// A fresh plane whose trace ids derive from `seed`.
    pub fn new(seed: u64, policy: PolicySet) -> Self {
        let (ledger, internal) = Ledger::new();
        Self {
            clock: LogicalClock::new(0),
            ids: TraceIdGenerator::new(seed),
            identity: IdentityRegistry::new(),
            policy: RwLock::new(Arc::new(policy)),
            rates: RateLimiter::new(),
            budgets: BudgetLedger::new(),
            ledger,
            internal,
            channels: ChannelStore::default(),
            tools: ToolRegistry::default(),
            models: ModelRegistry::default(),
            ops: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn advance_clock(&self, ticks: u64) -> u64 {
        self.clock.advance(ticks)
    }

    pub fn policy(&self) -> Arc<PolicySet> {
        self.policy.read().clone()
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn attach_journal(&self, path: &Path) -> Result<(), LedgerError> {
        self.ledger.attach_journal(path)
    }

    pub fn new_root_context(&self) -> TraceContext {
        self.ids.new_root_context()
    }

    pub fn child_context(&self, parent: &TraceContext) -> TraceContext {
        self.ids.child_context(parent)
    }

    /// Operations executed so far, by operation name. Counted independently
    /// of transcript emission so audits can check one record per operation.
    pub fn op_counts(&self) -> BTreeMap<&'static str, u64> {
        self.ops.lock().clone()
    }

    pub(crate) fn count_op(&self, op: &'static str) {
        *self.ops.lock().entry(op).or_insert(0) += 1;
    }

    pub(crate) fn open_span(&self, hop: &HopContext) -> OpenSpan {
        match &hop.parent {
            Some(p) => OpenSpan { ctx: self.ids.child_context(p), parent: Some(p.span_id) },
            None => OpenSpan { ctx: self.ids.new_root_context(), parent: None },
        }
    }

    pub(crate) fn emit_at(
        &self,
        span: OpenSpan,
        kind: EventKind,
        actor: &str,
        client: Option<&str>,
        body: Value,
        prehash: Option<Hash32>,
    ) -> Result<SealedRecord, AuditError> {
        Ok(self.ledger.append(
            self.internal.expose(),
            RecordDraft {
                logical_time: self.clock.now(),
                trace: span.ctx,
                parent_span: span.parent,
                actor: actor.to_string(),
                event_kind: kind,
                client: client.map(str::to_string),
                body,
                body_prehash: prehash,
            },
        )?)
    }

    pub(crate) fn emit(
        &self,
        hop: &HopContext,
        kind: EventKind,
        actor: &str,
        client: Option<&str>,
        body: Value,
    ) -> Result<TraceContext, AuditError> {
        let span = self.open_span(hop);
        self.emit_at(span, kind, actor, client, body, None)?;
        Ok(span.ctx)
    }

    /// Resolves a token. Failures are transcripted with their internal
    /// reason and surface as one opaque error.
    pub fn authenticate(&self, hop: &HopContext, token: &str, op: &'static str) -> Result<Resolved, AuthError> {
        match self.identity.resolve(token, self.clock.now()) {
            Ok(r) => Ok(r),
            Err((reason, principal)) => {
                let actor = principal.clone().unwrap_or_else(|| "unauthenticated".into());
                self.emit(
                    hop,
                    EventKind::CredentialEvent,
                    &actor,
                    None,
                    json!({"op": op, "event": "auth_failed", "reason": reason.as_str()}),
                )?;
                Err(AuthError::AuthenticationFailed)
            }
        }
    }

    pub(crate) fn authenticate_admin(&self, token: &str, op: &'static str) -> Result<Resolved, AdminError> {
        let r = self.authenticate(&HopContext::root(), token, op)?;
        if r.scope.admin {
            return Ok(r);
        }
        self.emit(
            &HopContext::root(),
            EventKind::CredentialEvent,
            &r.principal.id,
            None,
            json!({"op": op, "event": "unauthorized", "credential_id": r.credential_id}),
        )?;
        Err(AdminError::Unauthorized)
    }

    /// Registers the bootstrap administrator and issues its credential.
    pub fn bootstrap_admin(&self) -> Result<Credential, AdminError> {
        if self.identity.principal(ADMIN_PRINCIPAL).is_none() {
            self.identity.register_principal(Principal {
                id: ADMIN_PRINCIPAL.into(),
                kind: PrincipalKind::Service,
                display_name: "Data plane administrator".into(),
            })?;
        }
        self.count_op("issue_credential");
        self.issue_internal(ADMIN_PRINCIPAL, Scope { admin: true, transcript_grants: ["*".to_string()].into(), ..Scope::default() }, None)
    }

    pub fn register_principal(&self, admin_token: &str, principal: Principal) -> Result<(), AdminError> {
        self.authenticate_admin(admin_token, "register_principal")?;
        self.identity.register_principal(principal)?;
        Ok(())
    }

    pub fn issue_credential(
        &self,
        admin_token: &str,
        principal_id: &str,
        scope: Scope,
        ttl: Option<u64>,
    ) -> Result<Credential, AdminError> {
        self.count_op("issue_credential");
        self.authenticate_admin(admin_token, "issue_credential")?;
        self.issue_internal(principal_id, scope, ttl)
    }

    fn issue_internal(&self, principal_id: &str, scope: Scope, ttl: Option<u64>) -> Result<Credential, AdminError> {
        let cred = match self.identity.issue_credential(principal_id, scope, ttl, self.clock.now()) {
            Ok(c) => c,
            Err(e) => {
                self.emit(
                    &HopContext::root(),
                    EventKind::CredentialEvent,
                    principal_id,
                    None,
                    json!({"op": "issue_credential", "event": "issue_failed", "reason": e.to_string()}),
                )?;
                return Err(e.into());
            }
        };
        self.emit(
            &HopContext::root(),
            EventKind::CredentialEvent,
            principal_id,
            None,
            json!({
                "op": "issue_credential",
                "event": "issued",
                "credential_id": cred.id,
                "expires_at": cred.expires_at,
            }),
        )?;
        Ok(cred)
    }

    /// Revokes by token or credential id; repeated revocation is
    /// acknowledged again.
    pub fn revoke(&self, admin_token: &str, token_or_id: &str) -> Result<Credential, AdminError> {
        self.count_op("revoke");
        let admin = self.authenticate_admin(admin_token, "revoke")?;
        let cred = match self.identity.revoke(token_or_id) {
            Ok(c) => c,
            Err(e) => {
                self.emit(
                    &HopContext::root(),
                    EventKind::CredentialEvent,
                    &admin.principal.id,
                    None,
                    json!({"op": "revoke", "event": "revoke_failed", "reason": e.to_string()}),
                )?;
                return Err(e.into());
            }
        };
        self.emit(
            &HopContext::root(),
            EventKind::CredentialEvent,
            &cred.principal_id,
            None,
            json!({"op": "revoke", "event": "revoked", "credential_id": cred.id}),
        )?;
        Ok(cred)
    }

    /// Resolution without transcript side effects (admin introspection).
    pub fn resolve(&self, token: &str) -> Option<Resolved> {
        self.identity.resolve(token, self.clock.now()).ok()
    }

    pub fn principal(&self, id: &str) -> Option<Principal> {
        self.identity.principal(id)
    }

    /// Replaces the policy document. Counters carry over.
    pub fn load_policies(&self, admin_token: &str, config: PolicyConfig) -> Result<(), AdminError> {
        self.authenticate_admin(admin_token, "load_policies")?;
        let set = PolicySet::compile(config)?;
        *self.policy.write() = Arc::new(set);
        Ok(())
    }

    pub fn query_transcripts(&self, token: &str, filter: &QueryFilter) -> Result<Vec<SealedRecord>, AuthError> {
        let r = self.authenticate(&HopContext::root(), token, "query_transcripts")?;
        Ok(self.ledger.query(&r.scope.transcript_grants, filter))
    }
}
