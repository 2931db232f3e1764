use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::HeaderMap;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::Json;
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use tokio::sync::broadcast::error::RecvError;

use adp_core::identity::Scope;
use adp_core::pipeline::approval::{ApprovalDecision, ApprovalEvent, Decision, PendingOrder};
use adp_core::pipeline::demo;
use adp_core::plane::HopContext;
use adp_core::policy::acl::{check_channel_access, Direction};

use crate::{bearer, ApiError, AppState};

fn can_review(scope: &Scope, client: &str) -> bool {
    check_channel_access(scope, &demo::pending(client), Direction::Consume).is_allowed()
}

fn event_client(e: &ApprovalEvent) -> &str {
    match e {
        ApprovalEvent::Added { order } => &order.client_id,
        ApprovalEvent::Decided { decision } => &decision.client_id,
    }
}

fn visible_pending(st: &AppState, scope: &Scope) -> Vec<PendingOrder> {
    let p = &st.pipeline;
    p.approvals().scan(p.plane(), p.clients());
    p.approvals().pending().into_iter().filter(|o| can_review(scope, &o.client_id)).collect()
}

fn authorize(st: &AppState, token: &str, op: &'static str) -> Result<Arc<Scope>, ApiError> {
    Ok(st.pipeline.plane().authenticate(&HopContext::root(), token, op)?.scope)
}

pub(crate) async fn pending(State(st): State<AppState>, headers: HeaderMap) -> Result<Json<Vec<PendingOrder>>, ApiError> {
    let scope = authorize(&st, &bearer(&headers), "approvals_pending")?;
    Ok(Json(visible_pending(&st, &scope)))
}

#[derive(Debug, Deserialize)]
pub(crate) struct DecideRequest {
    decision: Decision,
    #[serde(default)]
    note: String,
}

pub(crate) async fn decide(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path(order_ref): Path<String>,
    Json(req): Json<DecideRequest>,
) -> Result<Json<ApprovalDecision>, ApiError> {
    let p = &st.pipeline;
    p.approvals().scan(p.plane(), p.clients());
    Ok(Json(p.approvals().decide(p.plane(), &bearer(&headers), &order_ref, req.decision, &req.note)?))
}

#[derive(Debug, Deserialize)]
pub(crate) struct StreamParams {
    token: Option<String>,
}

/// A `snapshot` event with the visible pending set, then one `added` or
/// `decided` event per change. A subscriber that falls behind gets a fresh
/// `snapshot`.
pub(crate) async fn stream(
    State(st): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<StreamParams>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let token = q.token.unwrap_or_else(|| bearer(&headers));
    let scope = authorize(&st, &token, "approvals_stream")?;
    let rx = st.subscribe();
    let snapshot = snapshot_event(&visible_pending(&st, &scope));
    let changes = stream::unfold((rx, st, scope), |(mut rx, st, scope)| async move {
        loop {
            match rx.recv().await {
                Ok(e) if can_review(&scope, event_client(&e)) => {
                    let ev = change_event(&e);
                    return Some((ev, (rx, st, scope)));
                }
                Ok(_) => {}
                Err(RecvError::Lagged(_)) => {
                    let ev = snapshot_event(&visible_pending(&st, &scope));
                    return Some((ev, (rx, st, scope)));
                }
                Err(RecvError::Closed) => return None,
            }
        }
    });
    let events = stream::once(async move { snapshot }).chain(changes).map(Ok);
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

fn snapshot_event(pending: &[PendingOrder]) -> Event {
    Event::default().event("snapshot").json_data(pending).expect("pending orders serialize")
}

fn change_event(e: &ApprovalEvent) -> Event {
    let name = match e {
        ApprovalEvent::Added { .. } => "added",
        ApprovalEvent::Decided { .. } => "decided",
    };
    Event::default().event(name).json_data(e).expect("approval events serialize")
}
