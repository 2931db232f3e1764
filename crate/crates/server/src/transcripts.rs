use axum::extract::{Query, State};
use axum::http::HeaderMap;
use axum::Json;
use serde::Deserialize;
use serde_json::Value;

use adp_core::ledger::{ChainVerdict, QueryFilter};
use adp_core::plane::HopContext;

use crate::{bearer, ApiError, AppState};

/// Records visible to the caller's transcript grants, as canonical
/// documents in sequence order.
pub(crate) async fn query(
    State(st): State<AppState>,
    headers: HeaderMap,
    Query(filter): Query<QueryFilter>,
) -> Result<Json<Vec<Value>>, ApiError> {
    let records = st.pipeline.plane().query_transcripts(&bearer(&headers), &filter)?;
    Ok(Json(records.iter().map(|r| r.to_value()).collect()))
}

#[derive(Debug, Deserialize)]
pub(crate) struct Range {
    from: Option<u64>,
    to: Option<u64>,
}

pub(crate) async fn verify(
    State(st): State<AppState>,
    headers: HeaderMap,
    Query(range): Query<Range>,
) -> Result<Json<ChainVerdict>, ApiError> {
    let plane = st.pipeline.plane();
    plane.authenticate(&HopContext::root(), &bearer(&headers), "verify_chain")?;
    let ledger = plane.ledger();
    let verdict = match (range.from, range.to) {
        (None, None) => ledger.verify_all(),
        (from, to) => {
            let last = ledger.len().saturating_sub(1);
            ledger
                .verify_chain(from.unwrap_or(0), to.unwrap_or(last))
                .map_err(|e| ApiError::BadRequest(e.to_string()))?
        }
    };
    Ok(Json(verdict))
}
