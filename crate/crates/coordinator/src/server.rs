use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use rand::Rng;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::error::CoordinatorError;
use crate::session::{Session, SessionManifest};
use crate::CHECKSUM_HEADER;

const MAX_UPLOAD_BYTES: usize = 512 * 1024 * 1024;

/// Shared server state. Each session sits behind its own lock, which is the
/// single serialisation point for its submissions and aggregation.
#[derive(Clone, Default)]
pub struct Coordinator {
    sessions: Arc<Mutex<HashMap<String, Arc<Mutex<Session>>>>>,
}

impl Coordinator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create_session(&self, manifest: SessionManifest) -> Result<String, CoordinatorError> {
        let id = hex::encode(rand::rng().random::<[u8; 8]>());
        let session = Session::new(id.clone(), manifest)?;
        self.sessions
            .lock()
            .expect("session table poisoned")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    pub fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, CoordinatorError> {
        self.sessions
            .lock()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| CoordinatorError::NotFound(format!("session '{id}'")))
    }

    fn sweep_timeouts(&self) {
        let sessions: Vec<_> = self
            .sessions
            .lock()
            .expect("session table poisoned")
            .values()
            .cloned()
            .collect();
        let now = Instant::now();
        for s in sessions {
            let mut s = s.lock().expect("session poisoned");
            if s.check_timeout(now) {
                log::warn!("session {} round {} timed out", s.id(), s.current_round());
            }
        }
    }
}

impl IntoResponse for CoordinatorError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body())).into_response()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub name: String,
}

fn bearer(headers: &HeaderMap) -> Result<&str, CoordinatorError> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or(CoordinatorError::Unauthorized)
}

async fn create_session(
    State(state): State<Coordinator>,
    body: Bytes,
) -> Result<impl IntoResponse, CoordinatorError> {
    let manifest: SessionManifest = serde_json::from_slice(&body)
        .map_err(|e| CoordinatorError::BadRequest(format!("manifest: {e}")))?;
    let session_id = state.create_session(manifest)?;
    log::info!("created session {session_id}");
    Ok((StatusCode::CREATED, Json(CreatedSession { session_id })))
}

async fn register(
    State(state): State<Coordinator>,
    Path(session): Path<String>,
    body: Bytes,
) -> Result<impl IntoResponse, CoordinatorError> {
    let req: RegisterRequest = serde_json::from_slice(&body)
        .map_err(|e| CoordinatorError::BadRequest(format!("register body: {e}")))?;
    let session = state.session(&session)?;
    let reg = session
        .lock()
        .expect("session poisoned")
        .register(&req.name)?;
    Ok((StatusCode::CREATED, Json(reg)))
}

async fn submit(
    State(state): State<Coordinator>,
    Path((session, round, client_id)): Path<(String, usize, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<impl IntoResponse, CoordinatorError> {
    let token = bearer(&headers)?;
    let declared = headers
        .get(CHECKSUM_HEADER)
        .and_then(|v| v.to_str().ok())
        .ok_or_else(|| CoordinatorError::BadRequest(format!("missing {CHECKSUM_HEADER} header")))?;
    let session = state.session(&session)?;
    let outcome = {
        let mut s = session.lock().expect("session poisoned");
        s.submit(&client_id, token, round, &body, declared)
    };
    match &outcome {
        Ok(o) => log::debug!(
            "round {round}: accepted {client_id} (aggregated: {})",
            o.aggregated
        ),
        Err(e) => log::warn!("round {round}: {client_id} {e}"),
    }
    Ok((StatusCode::ACCEPTED, Json(outcome?)))
}

async fn aggregate(
    State(state): State<Coordinator>,
    Path((session, round)): Path<(String, usize)>,
    headers: HeaderMap,
) -> Result<Response, CoordinatorError> {
    let token = bearer(&headers)?;
    let session = state.session(&session)?;
    let result = {
        let mut s = session.lock().expect("session poisoned");
        s.authorize(token)?;
        s.aggregate(round)?
    };
    Ok(match result {
        None => (
            StatusCode::ACCEPTED,
            Json(serde_json::json!({ "status": "pending" })),
        )
            .into_response(),
        Some((bytes, sum)) => {
            let mut resp = (StatusCode::OK, bytes).into_response();
            let h = resp.headers_mut();
            h.insert(
                header::CONTENT_TYPE,
                HeaderValue::from_static("application/octet-stream"),
            );
            h.insert(
                CHECKSUM_HEADER,
                HeaderValue::from_str(&sum.to_hex()).expect("hex is ascii"),
            );
            resp
        }
    })
}

async fn status(
    State(state): State<Coordinator>,
    Path(session): Path<String>,
) -> Result<impl IntoResponse, CoordinatorError> {
    let session = state.session(&session)?;
    let status = session.lock().expect("session poisoned").status();
    Ok(Json(status))
}

pub fn router(state: Coordinator) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{session}/register", post(register))
        .route(
            "/v1/sessions/{session}/rounds/{round}/adapters/{client_id}",
            put(submit),
        )
        .route(
            "/v1/sessions/{session}/rounds/{round}/aggregate",
            get(aggregate),
        )
        .route("/v1/sessions/{session}/status", get(status))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

/// Serves until the listener fails. Timed-out rounds are swept once a second.
pub async fn serve(listener: TcpListener, state: Coordinator) -> std::io::Result<()> {
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(1));
        loop {
            tick.tick().await;
            sweeper.sweep_timeouts();
        }
    });
    axum::serve(listener, router(state)).await
}

/// Binds `addr` and serves in the background; returns the bound address.
pub async fn spawn(
    addr: SocketAddr,
    state: Coordinator,
) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, tokio::spawn(serve(listener, state))))
}
