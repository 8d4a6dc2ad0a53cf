use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::sync::oneshot;

use crate::error::{Error, Result};
use crate::model::MlpModel;

use super::wire::{self, ClassifyRequest, ClassifyResponse, ErrorResponse, MetaResponse};
use super::QueryLedger;

/// Deterministic fault injection for the mock server.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaultPlan {
    /// Answer the first `fail_first` classify requests with 503.
    pub fail_first: u64,
    /// Stall the next `delay_first` classify requests (after the failures)
    /// for `delay_ms` before answering.
    pub delay_first: u64,
    pub delay_ms: u64,
}

#[derive(Debug, Clone)]
pub struct MockServerConfig {
    /// Category names in class order; defaults to `"0"`, `"1"`, …
    pub labels: Option<Vec<String>>,
    pub auth_token: Option<String>,
    /// Concurrent classify requests beyond this get 503.
    pub max_in_flight: usize,
    /// Reply with a `scores` object keyed by label instead of an array.
    pub named_scores: bool,
    pub faults: FaultPlan,
}

impl Default for MockServerConfig {
    fn default() -> Self {
        Self {
            labels: None,
            auth_token: None,
            max_in_flight: 64,
            named_scores: false,
            faults: FaultPlan::default(),
        }
    }
}

struct AppState {
    model: Arc<MlpModel>,
    labels: Vec<String>,
    config: MockServerConfig,
    ledger: QueryLedger,
    requests: AtomicU64,
    in_flight: AtomicUsize,
}

/// A running mock inference server. Dropping the handle shuts it down.
pub struct MockServerHandle {
    addr: SocketAddr,
    ledger: QueryLedger,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Classify requests answered with probabilities.
    pub fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    /// Blocks until the server stops (e.g. never, for the CLI).
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MockServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

fn error_response(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ErrorResponse { error: msg.into() })).into_response()
}

/// Serves `model` over the `gem-infer-v1` protocol on `bind` (use port 0
/// for an ephemeral port).
pub fn serve_mock(model: Arc<MlpModel>, bind: &str, config: MockServerConfig) -> Result<MockServerHandle> {
    let labels = config
        .labels
        .clone()
        .unwrap_or_else(|| wire::default_labels(model.num_classes()));
    if labels.len() != model.num_classes() {
        return Err(Error::Argument(format!(
            "{} labels for a {}-class model",
            labels.len(),
            model.num_classes()
        )));
    }
    let ledger = QueryLedger::new();
    let state = Arc::new(AppState {
        model,
        labels,
        config,
        ledger: ledger.clone(),
        requests: AtomicU64::new(0),
        in_flight: AtomicUsize::new(0),
    });

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(|e| Error::Transport(format!("cannot start runtime: {e}")))?;
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind(bind))
        .map_err(|e| Error::Transport(format!("cannot bind {bind}: {e}")))?;
    let addr = listener.local_addr().map_err(|e| Error::Transport(e.to_string()))?;

    let app = Router::new()
        .route(wire::CLASSIFY_PATH, post(classify))
        .route(wire::META_PATH, get(meta))
        .with_state(state);
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            let served = axum::serve(listener, app).with_graceful_shutdown(async {
                let _ = rx.await;
            });
            if let Err(e) = served.await {
                tracing::error!(error = %e, "mock server stopped");
            }
        });
    });
    tracing::info!(%addr, protocol = wire::PROTOCOL, "mock server listening");
    Ok(MockServerHandle {
        addr,
        ledger,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

async fn meta(State(state): State<Arc<AppState>>, headers: HeaderMap) -> Response {
    if let Some(resp) = check_auth(&state, &headers) {
        return resp;
    }
    let (lo, hi) = state.model.data_range();
    Json(MetaResponse {
        input_dim: state.model.input_dim(),
        num_classes: state.model.num_classes(),
        labels: state.labels.clone(),
        data_range: [lo, hi],
    })
    .into_response()
}

fn check_auth(state: &AppState, headers: &HeaderMap) -> Option<Response> {
    let expected = state.config.auth_token.as_ref()?;
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented == Some(expected.as_str()) {
        None
    } else {
        Some(error_response(
            StatusCode::UNAUTHORIZED,
            "missing or invalid bearer token",
        ))
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn classify(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    if let Some(resp) = check_auth(&state, &headers) {
        return resp;
    }
    let active = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    let _guard = InFlight(&state.in_flight);
    if active > state.config.max_in_flight {
        return error_response(StatusCode::SERVICE_UNAVAILABLE, "server overloaded");
    }

    let n = state.requests.fetch_add(1, Ordering::SeqCst);
    let faults = &state.config.faults;
    if n < faults.fail_first {
        return error_response(StatusCode::SERVICE_UNAVAILABLE, "injected fault");
    }
    if n < faults.fail_first + faults.delay_first {
        tokio::time::sleep(Duration::from_millis(faults.delay_ms)).await;
    }

    let req: ClassifyRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    if req.features.len() != state.model.input_dim() {
        return error_response(
            StatusCode::BAD_REQUEST,
            format!(
                "expected {} features, got {}",
                state.model.input_dim(),
                req.features.len()
            ),
        );
    }
    let out = match state.model.forward(&req.features) {
        Ok(out) => out,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, e.to_string()),
    };
    state.ledger.record(1);
    tracing::info!(count = state.ledger.total(), "classify");

    let probs = out.probs.into_vec();
    let resp = if state.config.named_scores {
        ClassifyResponse {
            scores: Some(state.labels.iter().cloned().zip(probs).collect()),
            ..Default::default()
        }
    } else {
        ClassifyResponse {
            probabilities: Some(probs),
            labels: Some(state.labels.clone()),
            scores: None,
        }
    };
    Json(resp).into_response()
}
