//! HTTP API for conducting a live trial.
//!
//! | verb | path | purpose |
//! |------|------|---------|
//! | POST | `/trials` | create a trial, returns the first cohort |
//! | POST | `/trials/{id}/cohorts` | record the pending cohort's outcomes |
//! | GET | `/trials/{id}` | transcript, status, α and pending doses |
//! | GET | `/trials/{id}/mtd-curve?n_points=K[&alpha=A]` | current curve estimate |
//! | GET | `/trials/{id}/safety` | stopping-rule status |
//!
//! Mutations of one trial are serialized and guarded by a revision number;
//! reads are served from an immutable snapshot of the latest revision.

pub mod store;
pub mod wire;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use combo_ewoc::design::{allocate_cohort, Advance, TrialStatus};
use combo_ewoc::posterior::{posterior_quantile_gamma, GammaAxis};
use combo_ewoc::DosePair;
use parking_lot::RwLock;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::store::{Snapshot, StoredMutation, StoredTrial, TrialStore};
use crate::wire::*;

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
const MAX_CURVE_POINTS: usize = 10_001;
const DEFAULT_CURVE_POINTS: usize = 101;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("trial {0} not found")]
    NotFound(String),
    #[error("{message}")]
    Validation { message: String, fields: Vec<FieldError> },
    #[error("expected revision {expected}, trial is at {current}")]
    Conflict { expected: u64, current: u64 },
    #[error("{0}")]
    State(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    fn field(path: &str, message: impl Into<String>) -> Self {
        let message = message.into();
        ApiError::Validation {
            message: format!("{path}: {message}"),
            fields: vec![FieldError { path: path.into(), message }],
        }
    }

    /// Maps a core error raised while validating the part of a request at
    /// `path`.
    fn from_core(path: &str, e: combo_ewoc::Error) -> Self {
        use combo_ewoc::Error as E;
        match e {
            E::Domain(m) | E::Config(m) | E::Argument(m) => ApiError::field(path, m),
            E::State(m) => ApiError::State(m),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::Internal(format!("storage: {e}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let message = self.to_string();
        let (status, code, fields, current_revision) = match self {
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found", vec![], None),
            ApiError::Validation { fields, .. } => {
                (StatusCode::UNPROCESSABLE_ENTITY, "validation", fields, None)
            }
            ApiError::Conflict { current, .. } => {
                (StatusCode::CONFLICT, "revision_conflict", vec![], Some(current))
            }
            ApiError::State(_) => (StatusCode::CONFLICT, "invalid_state", vec![], None),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal", vec![], None),
        };
        let body = ErrorBody { error: code.into(), message, fields, current_revision };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct TrialSlot {
    /// Held for the whole of a mutation, including the posterior refresh.
    write: tokio::sync::Mutex<()>,
    snapshot: RwLock<Arc<Snapshot>>,
}

impl TrialSlot {
    fn new(snapshot: Snapshot) -> Arc<Self> {
        Arc::new(TrialSlot {
            write: tokio::sync::Mutex::new(()),
            snapshot: RwLock::new(Arc::new(snapshot)),
        })
    }

    fn current(&self) -> Arc<Snapshot> {
        self.snapshot.read().clone()
    }
}

struct Inner {
    store: TrialStore,
    trials: RwLock<HashMap<String, Arc<TrialSlot>>>,
    /// Creation idempotency key → trial id.
    keys: RwLock<HashMap<String, String>>,
    create: tokio::sync::Mutex<()>,
}

/// Shared service state.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// Opens `state_dir`, replaying every persisted trial.
    pub fn open(state_dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let store = TrialStore::open(state_dir)?;
        let mut trials = HashMap::new();
        let mut keys = HashMap::new();
        for stored in store.load_all()? {
            let id = stored.trial_id.clone();
            if let Some(k) = &stored.idempotency_key {
                keys.insert(k.clone(), id.clone());
            }
            let snapshot = Snapshot::replay(stored).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("trial {id}: {e}"))
            })?;
            trials.insert(id, TrialSlot::new(snapshot));
        }
        Ok(AppState {
            inner: Arc::new(Inner {
                store,
                trials: RwLock::new(trials),
                keys: RwLock::new(keys),
                create: tokio::sync::Mutex::new(()),
            }),
        })
    }

    fn slot(&self, id: &str) -> ApiResult<Arc<TrialSlot>> {
        self.inner.trials.read().get(id).cloned().ok_or_else(|| ApiError::NotFound(id.into()))
    }

    pub fn trial_count(&self) -> usize {
        self.inner.trials.read().len()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/trials", post(create_trial))
        .route("/trials/{id}", get(get_trial))
        .route("/trials/{id}/cohorts", post(record_outcomes))
        .route("/trials/{id}/mtd-curve", get(get_mtd_curve))
        .route("/trials/{id}/safety", get(get_safety))
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state_dir: PathBuf) -> std::io::Result<()> {
    let state = AppState::open(state_dir)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { String::new() } else { path };
        ApiError::Validation {
            message: format!("invalid request body: {e}"),
            fields: vec![FieldError { path, message: e.inner().to_string() }],
        }
    })
}

fn header_key(headers: &HeaderMap) -> Option<String> {
    headers.get(IDEMPOTENCY_HEADER).and_then(|v| v.to_str().ok()).map(str::to_owned)
}

fn validate_create(req: &CreateTrialRequest) -> ApiResult<()> {
    req.window.validate().map_err(|e| ApiError::from_core("window", e))?;
    req.design.validate().map_err(|e| ApiError::from_core("design", e))?;
    req.prior.validate().map_err(|e| ApiError::from_core("prior", e))?;
    req.sampler.validate().map_err(|e| ApiError::from_core("sampler", e))?;
    Ok(())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(e.to_string()))
}

fn create_response(s: &Snapshot) -> CreateTrialResponse {
    CreateTrialResponse {
        trial_id: s.stored.trial_id.clone(),
        revision: s.stored.revision,
        status: s.state.status,
        recommendation: Recommendation::first_cohort(&s.stored.window, s.state.current_alpha),
    }
}

async fn create_trial(
    State(app): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let mut req: CreateTrialRequest = parse_body(&body)?;
    if req.idempotency_key.is_none() {
        req.idempotency_key = header_key(&headers);
    }
    validate_create(&req)?;

    let _guard = app.inner.create.lock().await;
    if let Some(key) = &req.idempotency_key {
        let existing = app.inner.keys.read().get(key).cloned();
        if let Some(id) = existing {
            let snapshot = app.slot(&id)?.current();
            return Ok((StatusCode::OK, Json(create_response(&snapshot))).into_response());
        }
    }

    let id = uuid::Uuid::new_v4();
    let seed = req.seed.unwrap_or_else(|| id.as_u64_pair().0);
    let stored = StoredTrial::new(id.simple().to_string(), seed, &req);
    let snapshot = Snapshot::replay(stored).map_err(|e| ApiError::from_core("", e))?;
    app.inner.store.save(&snapshot.stored)?;
    let response = create_response(&snapshot);
    if let Some(key) = &req.idempotency_key {
        app.inner.keys.write().insert(key.clone(), response.trial_id.clone());
    }
    app.inner.trials.write().insert(response.trial_id.clone(), TrialSlot::new(snapshot));
    Ok((StatusCode::CREATED, Json(response)).into_response())
}

async fn record_outcomes(
    State(app): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let mut req: RecordOutcomesRequest = parse_body(&body)?;
    if req.idempotency_key.is_none() {
        req.idempotency_key = header_key(&headers);
    }
    let outcomes: [u8; 2] = match req.outcomes.as_slice() {
        &[a, b] => [a, b],
        other => {
            return Err(ApiError::field(
                "outcomes",
                format!("expected exactly two outcomes, got {}", other.len()),
            ))
        }
    };
    if outcomes.iter().any(|&t| t > 1) {
        return Err(ApiError::field("outcomes", "each outcome must be 0 or 1"));
    }

    let slot = app.slot(&id)?;
    let _guard = slot.write.lock().await;
    let current = slot.current();

    if let (Some(key), Some(last)) = (&req.idempotency_key, &current.stored.last_mutation) {
        if *key == last.key {
            return Ok(Json(last.response.clone()));
        }
    }
    if req.expected_revision != current.stored.revision {
        return Err(ApiError::Conflict {
            expected: req.expected_revision,
            current: current.stored.revision,
        });
    }
    if current.state.status != TrialStatus::Enrolling {
        return Err(ApiError::State(format!(
            "trial is {}; no further outcomes are accepted",
            current.state.status.as_str()
        )));
    }

    let base = current.clone();
    let (mut next, step) = blocking(move || base.apply(outcomes))
        .await?
        .map_err(|e| ApiError::from_core("outcomes", e))?;

    let (outcome, recommendation, estimate) = match step {
        Advance::Next(a) => {
            (CohortOutcome::NextCohort, Some(Recommendation::from_allocation(&next.stored.window, &a)), None)
        }
        Advance::Stopped => (CohortOutcome::StoppedForSafety, None, next.estimate()),
        Advance::Completed => (CohortOutcome::Completed, None, next.estimate()),
    };
    let draws = next.draws.as_ref().expect("refreshed");
    let response = RecordOutcomesResponse {
        trial_id: id.clone(),
        revision: next.stored.revision,
        status: next.state.status,
        outcome,
        current_alpha: next.state.current_alpha,
        recommendation,
        estimate: estimate.as_ref().map(Into::into),
        min_dose_exceedance: next.exceedance().unwrap_or(0.0),
        acceptance_rates: draws.acceptance_rates().to_vec(),
    };
    let value = serde_json::to_value(&response).map_err(|e| ApiError::Internal(e.to_string()))?;
    next.stored.last_mutation =
        req.idempotency_key.map(|key| StoredMutation { key, response: value.clone() });

    app.inner.store.save(&next.stored)?;
    *slot.snapshot.write() = Arc::new(next);
    Ok(Json(value))
}

async fn get_trial(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<TrialView>> {
    Ok(Json(app.slot(&id)?.current().view()))
}

#[derive(Debug, Deserialize)]
pub struct CurveQuery {
    pub n_points: Option<usize>,
    pub alpha: Option<f64>,
}

fn curve_response(s: &Snapshot, n_points: usize, alpha: Option<f64>) -> ApiResult<MtdCurveResponse> {
    if !(2..=MAX_CURVE_POINTS).contains(&n_points) {
        return Err(ApiError::field(
            "n_points",
            format!("must lie in 2..={MAX_CURVE_POINTS}, got {n_points}"),
        ));
    }
    let draws = s.draws.as_ref().ok_or_else(|| {
        ApiError::State("no posterior yet; record the first cohort's outcomes first".into())
    })?;
    let theta = s.stored.design.theta;
    let estimate = s.estimate().ok_or_else(|| ApiError::Internal("empty posterior".into()))?;
    let window = &s.stored.window;
    let band = |x: f64, a: f64| {
        posterior_quantile_gamma(draws, theta, GammaAxis::BgivenA, x, a)
            .map_err(|e| ApiError::from_core("", e))
    };
    let points = (0..n_points)
        .map(|i| {
            let x = i as f64 / (n_points - 1) as f64;
            let y_raw = estimate.y_at(x);
            let inside = (0.0..=1.0).contains(&y_raw);
            let dose = DosePair { x, y: y_raw.clamp(0.0, 1.0) };
            let d = Dose::new(window, dose);
            Ok(CurvePoint {
                standardized: d.standardized,
                raw: d.raw,
                inside,
                bands: GammaBands { q25: band(x, 0.25)?, q50: band(x, 0.5)?, q75: band(x, 0.75)? },
            })
        })
        .collect::<ApiResult<Vec<_>>>()?;

    let preview = match alpha {
        None => None,
        Some(a) => {
            if !(a > 0.0 && a <= 0.5) {
                return Err(ApiError::field("alpha", format!("must lie in (0, 0.5], got {a}")));
            }
            if s.state.status != TrialStatus::Enrolling {
                return Err(ApiError::State(format!(
                    "trial is {}; there is no cohort to preview",
                    s.state.status.as_str()
                )));
            }
            let alloc = allocate_cohort(&s.state.data, draws, a, s.stored.design.escalation_step_cap)
                .map_err(|e| ApiError::from_core("alpha", e))?;
            Some(Recommendation::from_allocation(window, &alloc))
        }
    };

    Ok(MtdCurveResponse {
        trial_id: s.stored.trial_id.clone(),
        revision: s.stored.revision,
        estimate: (&estimate).into(),
        points,
        preview,
    })
}

async fn get_mtd_curve(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<CurveQuery>,
) -> ApiResult<Json<MtdCurveResponse>> {
    let snapshot = app.slot(&id)?.current();
    let n = q.n_points.unwrap_or(DEFAULT_CURVE_POINTS);
    let response = blocking(move || curve_response(&snapshot, n, q.alpha)).await??;
    Ok(Json(response))
}

async fn get_safety(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SafetyResponse>> {
    let s = app.slot(&id)?.current();
    let design = &s.stored.design;
    let k = s.state.data.len();
    let exceedance = s.exceedance();
    let rule_active = k >= design.stop_n1 && k < design.n_max;
    Ok(Json(SafetyResponse {
        trial_id: id,
        revision: s.stored.revision,
        status: s.state.status,
        evaluable_patients: k,
        stop_n1: design.stop_n1,
        threshold: design.theta + design.stop_xi1,
        stop_xi2: design.stop_xi2,
        exceedance_probability: exceedance,
        rule_active,
        rule_triggered: rule_active && exceedance.is_some_and(|p| p > design.stop_xi2),
    }))
}
