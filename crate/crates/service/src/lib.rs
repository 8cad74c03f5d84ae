//! HTTP front end: upload a CSV into a session, bind a column mapping, then
//! POST analysis parameters to `/sessions/{id}/{analysis}`.

pub mod config;
pub mod error;
pub mod store;

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use msm_core::analysis::{self, AnalysisKind, Mapping, ModelKind};
use msm_core::data::parse_csv;
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use config::Config;
pub use error::ApiError;
use store::{Binding, Store};

/// Rows returned as the upload preview.
pub const PREVIEW_ROWS: usize = 20;

#[derive(Debug)]
pub struct AppState {
    pub config: Config,
    pub store: Store,
}

impl AppState {
    pub fn new(config: Config) -> Arc<AppState> {
        let store = Store::new(config.session_ttl);
        Arc::new(AppState { config, store })
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST, Method::DELETE])
        .allow_headers(Any);
    let cors = match state
        .config
        .cors_origin
        .as_deref()
        .and_then(|o| HeaderValue::from_str(o).ok())
    {
        Some(origin) => cors.allow_origin(AllowOrigin::exact(origin)),
        None => cors.allow_origin(Any),
    };
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info).delete(delete_session))
        .route("/sessions/{id}/bind", post(bind))
        .route("/sessions/{id}/markov/{which}", post(markov_analysis))
        .route("/sessions/{id}/{analysis}", post(analysis))
        .layer(DefaultBodyLimit::max(state.config.upload_limit))
        .layer(cors)
        .with_state(state)
}

/// Periodically drops idle sessions. Needs a running Tokio runtime.
pub fn spawn_eviction(state: Arc<AppState>) -> tokio::task::JoinHandle<()> {
    let period = (state.config.session_ttl / 4).clamp(
        std::time::Duration::from_secs(1),
        std::time::Duration::from_secs(60),
    );
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            let n = state.store.evict_expired();
            if n > 0 {
                tracing::info!(evicted = n, "expired sessions removed");
            }
        }
    })
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok", "version": env!("CARGO_PKG_VERSION")}))
}

fn multipart_error(e: axum::extract::multipart::MultipartError) -> ApiError {
    let status = e.status();
    let code = if status == StatusCode::PAYLOAD_TOO_LARGE {
        "PayloadTooLarge"
    } else {
        "InvalidMultipart"
    };
    ApiError::new(status, code, e.body_text())
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    mut form: Multipart,
) -> ApiResult<Json<Value>> {
    let mut file: Option<Bytes> = None;
    let mut kind: Option<String> = None;
    let mut delimiter: Option<u8> = None;
    while let Some(field) = form.next_field().await.map_err(multipart_error)? {
        match field.name().unwrap_or_default() {
            "file" => file = Some(field.bytes().await.map_err(multipart_error)?),
            "kind" => kind = Some(field.text().await.map_err(multipart_error)?),
            "delimiter" => {
                let d = field.text().await.map_err(multipart_error)?;
                delimiter = match d.as_str() {
                    "," => Some(b','),
                    ";" => Some(b';'),
                    "" => None,
                    other => {
                        return Err(ApiError::new(
                            StatusCode::BAD_REQUEST,
                            "InvalidDelimiter",
                            format!("delimiter must be `,` or `;`, got `{other}`"),
                        ))
                    }
                };
            }
            _ => {}
        }
    }
    let kind: ModelKind = kind
        .ok_or_else(|| {
            ApiError::new(
                StatusCode::BAD_REQUEST,
                "MissingField",
                "multipart field `kind` is required",
            )
        })?
        .trim()
        .parse()
        .map_err(|e: msm_core::Error| {
            ApiError::new(StatusCode::BAD_REQUEST, "InvalidKind", e.to_string())
        })?;
    let file = file.ok_or_else(|| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "MissingField",
            "multipart field `file` is required",
        )
    })?;
    let dataset = tokio::task::spawn_blocking(move || parse_csv(&file, delimiter))
        .await
        .map_err(|e| {
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string())
        })??;
    let body = json!({
        "columns": dataset.columns(),
        "n_rows": dataset.n_rows(),
        "preview": dataset.preview(PREVIEW_ROWS),
        "kind": kind,
    });
    let id = app.store.insert(kind, dataset);
    let mut body = body;
    body["session_id"] = json!(id);
    Ok(Json(body))
}

async fn session_info(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<Value>> {
    let s = app.store.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    Ok(Json(json!({
        "session_id": id,
        "kind": s.kind,
        "columns": s.dataset.columns(),
        "n_rows": s.dataset.n_rows(),
        "preview": s.dataset.preview(PREVIEW_ROWS),
        "mapping": s.binding.as_ref().map(|b| &b.mapping),
        "validation_report": s.binding.as_ref().map(|b| &b.report),
    })))
}

async fn delete_session(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<StatusCode> {
    if app.store.remove(&id) {
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(ApiError::not_found(&id))
    }
}

fn parse_body(body: &Bytes) -> ApiResult<Value> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(json!({}));
    }
    let v: Value = serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "InvalidJson", e.to_string()))?;
    if v.is_object() {
        Ok(v)
    } else {
        Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "InvalidJson",
            "request body must be a JSON object",
        ))
    }
}

async fn bind(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let session = app.store.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let mut body = parse_body(&body)?;
    let obj = body.as_object_mut().expect("object");
    let declared = obj
        .entry("kind")
        .or_insert_with(|| json!(session.kind))
        .clone();
    if declared != json!(session.kind) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "IncompatibleMapping",
            format!(
                "session holds {} data; mapping kind is {declared}",
                session.kind
            ),
        ));
    }
    let mapping = Mapping::from_json(body)?;
    let dataset = session.dataset.clone();
    let (mapping, bound, report) = tokio::task::spawn_blocking(move || {
        analysis::bind(&dataset, &mapping).map(|(bound, report)| (mapping, bound, report))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))??;
    let out = json!({"ok": true, "validation_report": report});
    if !app.store.set_binding(
        &id,
        Binding {
            mapping,
            bound,
            report,
        },
    ) {
        return Err(ApiError::not_found(&id));
    }
    Ok(Json(out))
}

async fn markov_analysis(
    State(app): State<Arc<AppState>>,
    Path((id, which)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    run_analysis(app, id, &format!("markov/{which}"), body).await
}

async fn analysis(
    State(app): State<Arc<AppState>>,
    Path((id, name)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    run_analysis(app, id, &name, body).await
}

async fn run_analysis(
    app: Arc<AppState>,
    id: String,
    name: &str,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let kind = AnalysisKind::ALL
        .into_iter()
        .find(|k| k.endpoint() == name)
        .ok_or_else(|| {
            ApiError::new(
                StatusCode::NOT_FOUND,
                "UnknownAnalysis",
                format!("no analysis `{name}`"),
            )
        })?;
    let session = app.store.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let binding = session.binding.ok_or_else(|| {
        ApiError::new(
            StatusCode::CONFLICT,
            "NotBound",
            "bind a column mapping before running analyses",
        )
    })?;
    let params = parse_body(&body)?;
    let seed = rand::random::<u32>() as u64;
    let task =
        tokio::task::spawn_blocking(move || analysis::run(kind, &binding.bound, &params, seed));
    match tokio::time::timeout(app.config.timeout, task).await {
        Err(_) => Err(ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "Timeout",
            format!("analysis exceeded {} s", app.config.timeout.as_secs()),
        )),
        Ok(Err(e)) => Err(ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "Internal",
            e.to_string(),
        )),
        Ok(Ok(r)) => Ok(Json(r?)),
    }
}
