use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use mexkit_core::ResponsePolicy;
use serde::{Deserialize, Serialize};
use tokio::sync::{oneshot, OnceCell};

use super::protocol::*;
use crate::error::{MexError, Result};
use crate::oracle::{Meter, Oracle};

fn default_rate() -> f64 {
    100.0
}

/// One API key: the policy its responses are degraded with and its request
/// rate (requests per second, with bursts up to `burst`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountConfig {
    pub key: String,
    #[serde(default)]
    pub policy: ResponsePolicy,
    #[serde(default = "default_rate")]
    pub rate_limit: f64,
    #[serde(default)]
    pub burst: Option<f64>,
}

impl AccountConfig {
    pub fn new(key: &str, policy: ResponsePolicy) -> Self {
        Self {
            key: key.to_string(),
            policy,
            rate_limit: default_rate(),
            burst: None,
        }
    }
}

struct Account {
    cfg: AccountConfig,
    tokens: f64,
    last: Instant,
    spent: usize,
}

impl Account {
    fn capacity(&self) -> f64 {
        self.cfg.burst.unwrap_or(self.cfg.rate_limit).max(1.0)
    }

    /// Takes one token, or returns the wait until one is available.
    fn admit(&mut self, now: Instant) -> std::result::Result<(), f64> {
        let elapsed = now.saturating_duration_since(self.last).as_secs_f64();
        self.last = now;
        self.tokens = (self.tokens + elapsed * self.cfg.rate_limit).min(self.capacity());
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            Ok(())
        } else {
            Err((1.0 - self.tokens) / self.cfg.rate_limit)
        }
    }
}

type Reply = (StatusCode, String);

struct AppState {
    oracle: Arc<Oracle>,
    accounts: Mutex<HashMap<String, Account>>,
    idempotent: Mutex<HashMap<(String, String), Arc<OnceCell<Reply>>>>,
}

fn error_reply(status: StatusCode, code: &str, message: String, retry_after: Option<f64>) -> Reply {
    let body = ErrorBody {
        error: ErrorDetail {
            code: code.to_string(),
            message,
            retry_after,
            requested: None,
            remaining: None,
        },
    };
    (status, serde_json::to_string(&body).expect("error bodies serialize"))
}

fn into_response((status, body): Reply) -> Response {
    let mut resp = (status, [(header::CONTENT_TYPE, "application/json")], body.clone()).into_response();
    if status == StatusCode::TOO_MANY_REQUESTS {
        if let Ok(b) = serde_json::from_str::<ErrorBody>(&body) {
            if let Some(s) = b.error.retry_after {
                let secs = s.ceil().max(1.0) as u64;
                resp.headers_mut().insert(header::RETRY_AFTER, secs.into());
            }
        }
    }
    resp
}

fn predict_blocking(state: &AppState, key: &str, policy: &ResponsePolicy, inputs: &[Vec<f64>]) -> Reply {
    let d = match state.oracle.input_len() {
        Ok(d) => d,
        Err(e) => return error_reply(StatusCode::SERVICE_UNAVAILABLE, "model_not_loaded", e.to_string(), None),
    };
    if let Some(i) = inputs.iter().position(|x| x.len() != d) {
        return error_reply(
            StatusCode::BAD_REQUEST,
            "invalid_input",
            format!("input {i} has {} features, expected {d}", inputs[i].len()),
            None,
        );
    }
    let flat: Vec<f64> = inputs.iter().flatten().copied().collect();
    let records = match state.oracle.query(&flat, policy, Meter::Attack) {
        Ok(r) => r,
        Err(e) => {
            return match e {
                MexError::BudgetExhausted { requested, remaining } => {
                    let (status, body) =
                        error_reply(StatusCode::PAYMENT_REQUIRED, "budget_exhausted", e.to_string(), None);
                    let mut b: ErrorBody = serde_json::from_str(&body).expect("own body");
                    b.error.requested = Some(requested);
                    b.error.remaining = Some(remaining);
                    (status, serde_json::to_string(&b).expect("error bodies serialize"))
                }
                MexError::InvalidInput { .. } => {
                    error_reply(StatusCode::BAD_REQUEST, "invalid_input", e.to_string(), None)
                }
                MexError::ModelNotLoaded => {
                    error_reply(StatusCode::SERVICE_UNAVAILABLE, "model_not_loaded", e.to_string(), None)
                }
                other => error_reply(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string(), None),
            }
        }
    };
    let billed = records.iter().filter(|r| r.cost > 0.0).count();
    if let Some(a) = state.accounts.lock().expect("accounts lock").get_mut(key) {
        a.spent += billed;
    }
    let body = PredictResponse {
        policy: policy.clone(),
        classes: state.oracle.classes().unwrap_or(0),
        predictions: records.iter().map(|r| to_predictions(&r.response)).collect(),
        billing: Billing {
            cost: records.iter().map(|r| r.cost).sum(),
            remaining: state.oracle.remaining(Meter::Attack),
        },
        records: records
            .into_iter()
            .map(|r| RecordMeta {
                input_id: r.input_id,
                round: r.round,
                timestamp: r.timestamp,
                cost: r.cost,
            })
            .collect(),
    };
    (StatusCode::OK, serde_json::to_string(&body).expect("responses serialize"))
}

async fn predict(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    into_response(handle(state, headers, body).await)
}

async fn handle(state: Arc<AppState>, headers: HeaderMap, body: Bytes) -> Reply {
    match headers.get(VERSION_HEADER).and_then(|v| v.to_str().ok()) {
        Some(API_VERSION) => {}
        other => {
            return error_reply(
                StatusCode::BAD_REQUEST,
                "bad_request",
                format!("unsupported {VERSION_HEADER}: {other:?}, expected {API_VERSION}"),
                None,
            )
        }
    }
    let req: PredictRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_reply(StatusCode::BAD_REQUEST, "bad_request", e.to_string(), None),
    };
    let policy = {
        let mut accounts = state.accounts.lock().expect("accounts lock");
        let Some(account) = accounts.get_mut(&req.key) else {
            return error_reply(StatusCode::UNAUTHORIZED, "unauthorized", "unknown API key".into(), None);
        };
        if let Err(wait) = account.admit(Instant::now()) {
            return error_reply(
                StatusCode::TOO_MANY_REQUESTS,
                "rate_limited",
                format!("rate limit of {} requests/s exceeded", account.cfg.rate_limit),
                Some(wait),
            );
        }
        account.cfg.policy.clone()
    };
    let run = {
        let state = Arc::clone(&state);
        let key = req.key.clone();
        move || predict_blocking(&state, &key, &policy, &req.inputs)
    };
    match req.idempotency_token.clone() {
        None => tokio::task::spawn_blocking(run).await.unwrap_or_else(|e| {
            error_reply(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), None)
        }),
        Some(token) => {
            let cell = Arc::clone(
                state
                    .idempotent
                    .lock()
                    .expect("idempotency lock")
                    .entry((req.key.clone(), token))
                    .or_default(),
            );
            cell.get_or_init(|| async move {
                tokio::task::spawn_blocking(run).await.unwrap_or_else(|e| {
                    error_reply(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), None)
                })
            })
            .await
            .clone()
        }
    }
}

/// A running gateway. Dropping it stops the server.
pub struct ServerHandle {
    addr: SocketAddr,
    state: Arc<AppState>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Queries billed to `key` so far.
    pub fn account_spent(&self, key: &str) -> Option<usize> {
        self.state.accounts.lock().expect("accounts lock").get(key).map(|a| a.spent)
    }

    /// Blocks until the server stops (it only stops when shut down).
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
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

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Starts the gateway on a background thread. Use port 0 for an ephemeral
/// port and read it back from [`ServerHandle::addr`].
pub fn serve(oracle: Arc<Oracle>, addr: &str, accounts: Vec<AccountConfig>) -> Result<ServerHandle> {
    let bind_err = |reason: String| MexError::BindFailure {
        addr: addr.to_string(),
        reason,
    };
    let mut table = HashMap::new();
    for cfg in accounts {
        if !(cfg.rate_limit > 0.0) {
            return Err(MexError::Config(format!("account {}: rate limit must be positive", cfg.key)));
        }
        cfg.policy.validate()?;
        let account = Account {
            tokens: cfg.burst.unwrap_or(cfg.rate_limit).max(1.0),
            last: Instant::now(),
            spent: 0,
            cfg,
        };
        table.insert(account.cfg.key.clone(), account);
    }
    let state = Arc::new(AppState {
        oracle,
        accounts: Mutex::new(table),
        idempotent: Mutex::new(HashMap::new()),
    });
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(|e| bind_err(e.to_string()))?;
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind(addr))
        .map_err(|e| bind_err(e.to_string()))?;
    let local = listener.local_addr().map_err(|e| bind_err(e.to_string()))?;
    let app = Router::new().route(ROUTE, post(predict)).with_state(Arc::clone(&state));
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = rx.await;
                })
                .await;
        });
    });
    Ok(ServerHandle {
        addr: local,
        state,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
