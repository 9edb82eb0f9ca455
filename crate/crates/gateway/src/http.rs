use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use enclave_gate_core::audit::AuditFilter;
use enclave_gate_core::{EditRequest, ResourceKind};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::error::ApiError;
use crate::state::{Gateway, LoginRequest, PolicyCheckRequest, RejectRequest, ATTESTATION_HEADER, DIGEST_HEADER};

type Shared = Arc<Gateway>;

/// Runs a synchronous gateway operation on the blocking pool.
async fn blocking<T, F>(gw: Shared, f: F) -> Result<T, ApiError>
where
    F: FnOnce(&Gateway) -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&gw)).await.unwrap_or_else(|e| Err(ApiError::internal(e.to_string())))
}

fn json_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

fn reply<T: Serialize>(status: StatusCode, result: Result<T, ApiError>) -> Response {
    match result {
        Ok(v) => (status, Json(v)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn login(State(gw): State<Shared>, body: Bytes) -> Response {
    let result = blocking(gw, move |g| {
        let req: LoginRequest = json_body(&body)?;
        g.login(&req)
    })
    .await;
    reply(StatusCode::OK, result)
}

async fn ingest(gw: Shared, headers: HeaderMap, body: Bytes, hint: Option<ResourceKind>) -> Response {
    match blocking(gw, move |g| g.ingest(&headers, &body, hint)).await {
        Ok((status, result)) => (status, Json(result)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn ingest_fhir(State(gw): State<Shared>, headers: HeaderMap, body: Bytes) -> Response {
    ingest(gw, headers, body, None).await
}

async fn ingest_dicom(State(gw): State<Shared>, headers: HeaderMap, body: Bytes) -> Response {
    ingest(gw, headers, body, Some(ResourceKind::DicomStudyMeta)).await
}

async fn put_object(
    State(gw): State<Shared>,
    Path((bucket, key)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    match blocking(gw, move |g| g.put_object(&headers, &bucket, &key, &body)).await {
        Ok(obj) => {
            let digest = HeaderValue::from_str(&obj.digest).expect("hex is a valid header value");
            (StatusCode::CREATED, [(DIGEST_HEADER, digest)], Json(obj)).into_response()
        }
        Err(e) => e.into_response(),
    }
}

async fn get_object(State(gw): State<Shared>, Path((bucket, key)): Path<(String, String)>, headers: HeaderMap) -> Response {
    match blocking(gw, move |g| g.get_object(&headers, &bucket, &key)).await {
        Ok((obj, bytes)) => (
            StatusCode::OK,
            [
                (header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream")),
                (header::HeaderName::from_static(DIGEST_HEADER), HeaderValue::from_str(&obj.digest).expect("hex")),
                (header::HeaderName::from_static(ATTESTATION_HEADER), HeaderValue::from_static(obj.attestation.as_str())),
            ],
            bytes,
        )
            .into_response(),
        Err(e) => e.into_response(),
    }
}

async fn delete_object(State(gw): State<Shared>, Path((bucket, key)): Path<(String, String)>, headers: HeaderMap) -> Response {
    match blocking(gw, move |g| g.delete_object(&headers, &bucket, &key)).await {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => e.into_response(),
    }
}

async fn list_objects(State(gw): State<Shared>, Path(bucket): Path<String>, headers: HeaderMap) -> Response {
    let b = bucket.clone();
    let result = blocking(gw, move |g| g.list_objects(&headers, &b)).await;
    reply(StatusCode::OK, result.map(|objects| json!({ "bucket": bucket, "objects": objects })))
}

async fn list_quarantine(State(gw): State<Shared>, headers: HeaderMap) -> Response {
    reply(StatusCode::OK, blocking(gw, move |g| g.list_quarantine(&headers)).await)
}

async fn get_ticket(State(gw): State<Shared>, Path(id): Path<String>, headers: HeaderMap) -> Response {
    reply(StatusCode::OK, blocking(gw, move |g| g.get_ticket(&headers, &id)).await)
}

async fn edit_ticket(State(gw): State<Shared>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> Response {
    let result = blocking(gw, move |g| {
        let edit: EditRequest = json_body(&body)?;
        g.edit_ticket(&headers, &id, edit)
    })
    .await;
    reply(StatusCode::OK, result)
}

async fn approve_ticket(State(gw): State<Shared>, Path(id): Path<String>, headers: HeaderMap) -> Response {
    reply(StatusCode::OK, blocking(gw, move |g| g.approve_ticket(&headers, &id)).await)
}

async fn reject_ticket(State(gw): State<Shared>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> Response {
    let result = blocking(gw, move |g| {
        let req: RejectRequest = if body.is_empty() { RejectRequest::default() } else { json_body(&body)? };
        g.reject_ticket(&headers, &id, &req.reason)
    })
    .await;
    reply(StatusCode::OK, result)
}

async fn check_policy(State(gw): State<Shared>, headers: HeaderMap, body: Bytes) -> Response {
    let result = blocking(gw, move |g| g.check_policy(&headers, |_| json_body::<PolicyCheckRequest>(&body)))
    .await;
    reply(StatusCode::OK, result)
}

async fn query_audit(State(gw): State<Shared>, headers: HeaderMap, Query(filter): Query<AuditFilter>) -> Response {
    reply(StatusCode::OK, blocking(gw, move |g| g.query_audit(&headers, &filter)).await)
}

async fn verify_audit(State(gw): State<Shared>, headers: HeaderMap) -> Response {
    reply(StatusCode::OK, blocking(gw, move |g| g.verify_audit(&headers)).await)
}

pub fn router(gateway: Arc<Gateway>) -> Router {
    let limit = gateway.max_body_bytes;
    Router::new()
        .route("/healthz", get(healthz))
        .route("/auth/login", post(login))
        .route("/ingress/fhir", post(ingest_fhir))
        .route("/ingress/dicom-meta", post(ingest_dicom))
        .route("/objects/{bucket}", get(list_objects))
        .route("/objects/{bucket}/{*key}", put(put_object).get(get_object).delete(delete_object))
        .route("/quarantine", get(list_quarantine))
        .route("/quarantine/{id}", get(get_ticket))
        .route("/quarantine/{id}/edits", post(edit_ticket))
        .route("/quarantine/{id}/approve", post(approve_ticket))
        .route("/quarantine/{id}/reject", post(reject_ticket))
        .route("/policy/check", post(check_policy))
        .route("/audit", get(query_audit))
        .route("/audit/verify", get(verify_audit))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(gateway)
}
