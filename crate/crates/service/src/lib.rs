//! HTTP front end for a simulated maintainer cluster.
//!
//! Every mutation arrives as a DID-signed request wrapped in an
//! [`ApiEnvelope`] and is relayed into the cluster's single event log, so
//! requests are applied in one total order regardless of how many arrive at
//! once.

use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use trustreg_core::commitment::EpochCommitment;
use trustreg_core::graph::GraphError;
use trustreg_core::hash::Digest;
use trustreg_core::identity::Did;
use trustreg_core::ledger::Amount;
use trustreg_core::quorum::{Cluster, Outcome, RegistryError, SignedRequest, StateRoots};
use trustreg_core::settlement::ClaimError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiEnvelope {
    pub request_id: String,
    pub body: SignedRequest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiResult {
    Ok(Outcome),
    Error(ApiError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiResponse {
    pub request_id: String,
    /// Position in the event log, if the request was logged. Logged
    /// requests consume their nonce even when the operation fails.
    pub event_index: Option<u64>,
    pub result: ApiResult,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickResponse {
    pub tick: u64,
    pub epoch: u64,
    pub committed: Option<EpochCommitment>,
    pub error: Option<ApiError>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Status {
    pub registry_id: Digest,
    pub epoch: u64,
    pub tick: u64,
    pub events: usize,
    pub roots: StateRoots,
    pub divergent: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochBalances {
    pub epoch: u64,
    pub root: Digest,
    pub balances: std::collections::BTreeMap<Did, Amount>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonceInfo {
    pub caller: String,
    pub last_nonce: u64,
}

pub type Shared = Arc<Mutex<Cluster>>;

pub fn shared(cluster: Cluster) -> Shared {
    Arc::new(Mutex::new(cluster))
}

fn lock(state: &Shared) -> MutexGuard<'_, Cluster> {
    state.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

pub fn status_code(err: &RegistryError) -> StatusCode {
    match err {
        RegistryError::StaleNonce { .. } => StatusCode::CONFLICT,
        RegistryError::BadSignature(_) | RegistryError::UnknownCaller(_) => StatusCode::UNAUTHORIZED,
        RegistryError::MaintainerOnly(_) | RegistryError::NotForMaintainers(_) => StatusCode::FORBIDDEN,
        RegistryError::PaymentMissing(_) => StatusCode::PAYMENT_REQUIRED,
        RegistryError::UnknownChallenge(_)
        | RegistryError::Graph(GraphError::UnknownIssuer(_) | GraphError::UnknownEdge(..))
        | RegistryError::Claim(ClaimError::EpochNotRevealed(_)) => StatusCode::NOT_FOUND,
        RegistryError::NoQuorum { .. } => StatusCode::SERVICE_UNAVAILABLE,
        RegistryError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

fn api_error(err: &RegistryError) -> ApiError {
    ApiError { code: err.code().to_string(), message: err.to_string() }
}

fn not_found(what: String) -> Response {
    let body = ApiError { code: "NotFound".into(), message: what };
    (StatusCode::NOT_FOUND, Json(body)).into_response()
}

/// Relays one envelope after checking that its payload belongs on this
/// endpoint.
fn submit(state: &Shared, envelope: ApiEnvelope, kinds: &[&str]) -> Response {
    let ApiEnvelope { request_id, body } = envelope;
    let kind = body.payload.kind();
    if !kinds.contains(&kind) {
        let error = ApiError {
            code: "WrongEndpoint".into(),
            message: format!("`{kind}` payloads are not accepted here; expected {}", kinds.join(" or ")),
        };
        let resp = ApiResponse { request_id, event_index: None, result: ApiResult::Error(error) };
        return (StatusCode::UNPROCESSABLE_ENTITY, Json(resp)).into_response();
    }
    let mut cluster = lock(state);
    let before = cluster.log().len();
    let outcome = cluster.relay_submit(body);
    let event_index = (cluster.log().len() > before).then_some(before as u64);
    drop(cluster);
    let (status, result) = match outcome {
        Ok(o) => (StatusCode::OK, ApiResult::Ok(o)),
        Err(e) => (status_code(&e), ApiResult::Error(api_error(&e))),
    };
    tracing::info!(%request_id, kind, status = status.as_u16(), ?event_index, "request");
    (status, Json(ApiResponse { request_id, event_index, result })).into_response()
}

fn endpoint(kinds: &'static [&'static str]) -> axum::routing::MethodRouter<Shared> {
    post(move |State(state): State<Shared>, Json(envelope): Json<ApiEnvelope>| async move {
        submit(&state, envelope, kinds)
    })
}

async fn tick(State(state): State<Shared>) -> Json<TickResponse> {
    let mut cluster = lock(&state);
    let result = cluster.tick();
    let (committed, error) = match result {
        None => (None, None),
        Some(Ok(c)) => (Some(c), None),
        Some(Err(e)) => (None, Some(api_error(&e))),
    };
    Json(TickResponse { tick: cluster.clock().tick, epoch: cluster.reference().current_epoch(), committed, error })
}

async fn commitment(State(state): State<Shared>, Path(epoch): Path<u64>) -> Response {
    match lock(&state).commitments().get(epoch) {
        Some(c) => Json(c.clone()).into_response(),
        None => not_found(format!("epoch {epoch} has no commitment")),
    }
}

async fn balances(State(state): State<Shared>, Path(epoch): Path<u64>) -> Response {
    let cluster = lock(&state);
    let reference = cluster.reference();
    match (reference.closed_epoch(epoch), reference.claims().final_root(epoch)) {
        (Some(closed), Some(root)) => {
            Json(EpochBalances { epoch, root: *root, balances: closed.final_balances.clone() }).into_response()
        }
        _ => not_found(format!("balances for epoch {epoch} are not revealed")),
    }
}

async fn nonce(State(state): State<Shared>, Path(caller): Path<String>) -> Json<NonceInfo> {
    let last_nonce = lock(&state).reference().last_nonce(&caller);
    Json(NonceInfo { caller, last_nonce })
}

async fn status(State(state): State<Shared>) -> Json<Status> {
    let cluster = lock(&state);
    let reference = cluster.reference();
    Json(Status {
        registry_id: *reference.registry_id(),
        epoch: reference.current_epoch(),
        tick: cluster.clock().tick,
        events: cluster.log().len(),
        roots: reference.roots(),
        divergent: cluster.divergent().iter().map(|m| m.as_str().to_string()).collect(),
    })
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/enroll", endpoint(&["enroll"]))
        .route("/faucet", endpoint(&["faucet"]))
        .route("/escrow", endpoint(&["escrow"]))
        .route("/register", endpoint(&["register"]))
        .route("/edge", endpoint(&["upsert_edge", "remove_edge"]))
        .route("/query", endpoint(&["path_query"]))
        .route("/challenge", endpoint(&["challenge"]))
        .route("/vote", endpoint(&["vote"]))
        .route("/topup", endpoint(&["top_up"]))
        .route("/claim", endpoint(&["claim"]))
        .route("/tick", post(tick))
        .route("/commitments/:epoch", get(commitment))
        .route("/balances/:epoch", get(balances))
        .route("/nonce/:caller", get(nonce))
        .route("/status", get(status))
        .with_state(state)
}
