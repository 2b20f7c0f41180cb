//! HTTP API over a loaded model.
//!
//! `GET /api/health`, `GET /api/model`, `POST /api/classify` (raw netpbm body
//! or a multipart file field), `POST /api/speak` (`{"digit": d}`, answers
//! `audio/wav`) and, when a static directory is configured, the UI at `/`.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{json, Value};
use signdigit_core::imaging::{decode_netpbm, preprocess, HsvThreshold, INPUT_SIDE};
use signdigit_core::model_io::load_model;
use signdigit_core::nn::{NetworkSpec, Parameters, NUM_CLASSES};
use signdigit_core::speech::{
    digit_to_english, speak_digit, translate, wav_encode, SpeechError, Synthesizer, Translator,
};
use signdigit_core::train::predict;
use tower_http::services::ServeDir;

use crate::backends;
use crate::config::ServiceConfig;

/// Everything a request needs. Never mutated after startup.
pub struct AppState {
    pub spec: NetworkSpec,
    pub params: Parameters,
    pub skin: HsvThreshold,
    pub translator: Arc<dyn Translator>,
    pub tts: Arc<dyn Synthesizer>,
}

impl AppState {
    pub fn new(spec: NetworkSpec, params: Parameters, cfg: &ServiceConfig) -> anyhow::Result<Self> {
        if spec.input != [1, INPUT_SIDE, INPUT_SIDE] {
            anyhow::bail!(
                "model expects input {:?}, the preprocessor produces [1, {INPUT_SIDE}, {INPUT_SIDE}]",
                spec.input
            );
        }
        if spec.num_classes()? != NUM_CLASSES {
            anyhow::bail!(
                "model has {} outputs, expected {NUM_CLASSES}",
                spec.num_classes()?
            );
        }
        Ok(Self {
            spec,
            params,
            skin: cfg.skin,
            translator: backends::translator(cfg),
            tts: backends::synthesizer(cfg),
        })
    }

    pub fn load(cfg: &ServiceConfig) -> anyhow::Result<Self> {
        let file = std::fs::File::open(&cfg.model)
            .with_context(|| format!("cannot open model {}", cfg.model.display()))?;
        let (spec, params) = load_model(std::io::BufReader::new(file))
            .with_context(|| format!("cannot load model {}", cfg.model.display()))?;
        Self::new(spec, params, cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ClassifyResponse {
    pub digit: usize,
    pub probabilities: Vec<f64>,
    pub confidence: f64,
    pub english: String,
    pub bangla_text: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<SpeechError> for ApiError {
    fn from(e: SpeechError) -> Self {
        let status = match e {
            SpeechError::OutOfRange(_) | SpeechError::UnknownWord(_) => StatusCode::BAD_REQUEST,
            SpeechError::BackendUnreachable(_) | SpeechError::UndecodableAudio(_) => {
                StatusCode::SERVICE_UNAVAILABLE
            }
            SpeechError::MissingDigitHint | SpeechError::InvalidClip(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        Self::new(status, e.to_string())
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

pub fn router(state: Arc<AppState>, cfg: &ServiceConfig) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/model", get(model_info))
        .route("/api/classify", post(classify))
        .route("/api/speak", post(speak))
        .layer(DefaultBodyLimit::max(cfg.max_body_bytes))
        .with_state(state);
    match &cfg.static_dir {
        Some(dir) => {
            api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true))
        }
        None => api.fallback(not_found),
    }
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not found")
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn model_info(State(st): State<Arc<AppState>>) -> Result<Json<Value>, ApiError> {
    let count = st.spec.parameter_count().map_err(internal)?;
    Ok(Json(json!({
        "input": st.spec.input,
        "layers": st.spec.layers,
        "parameter_count": count,
        "classes": NUM_CLASSES,
    })))
}

async fn image_bytes(req: Request) -> Result<Bytes, Response> {
    let multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|ct| ct.starts_with("multipart/form-data"));
    if !multipart {
        return Bytes::from_request(req, &())
            .await
            .map_err(IntoResponse::into_response);
    }
    let mut form = Multipart::from_request(req, &())
        .await
        .map_err(IntoResponse::into_response)?;
    // first field carrying a file, or named "file" / "image"
    while let Some(field) = form
        .next_field()
        .await
        .map_err(IntoResponse::into_response)?
    {
        let wanted =
            field.file_name().is_some() || matches!(field.name(), Some("file") | Some("image"));
        if wanted {
            return field.bytes().await.map_err(IntoResponse::into_response);
        }
    }
    Err(ApiError::bad_request("multipart body has no file field").into_response())
}

async fn classify(State(st): State<Arc<AppState>>, req: Request) -> Response {
    let bytes = match image_bytes(req).await {
        Ok(b) => b,
        Err(resp) => return resp,
    };
    if bytes.is_empty() {
        return ApiError::bad_request("empty request body").into_response();
    }
    let result = tokio::task::spawn_blocking(move || -> Result<ClassifyResponse, ApiError> {
        let raster = decode_netpbm(&bytes)
            .map_err(|e| ApiError::bad_request(format!("undecodable image: {e}")))?;
        let image = preprocess(&raster, &st.skin);
        let (digit, probs) = predict(&st.spec, &st.params, &image).map_err(internal)?;
        let english = digit_to_english(digit as i64)?;
        let bangla_text = translate(english, st.translator.as_ref())?;
        let probabilities = probs.into_data();
        Ok(ClassifyResponse {
            digit,
            confidence: probabilities[digit],
            probabilities,
            english: english.to_string(),
            bangla_text,
        })
    })
    .await;
    match result {
        Ok(Ok(body)) => Json(body).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => internal(e).into_response(),
    }
}

async fn speak(State(st): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let value: Value = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("body is not JSON: {e}")))?;
    let digit = value
        .get("digit")
        .and_then(Value::as_i64)
        .ok_or_else(|| ApiError::bad_request("expected {\"digit\": <integer 0-9>}"))?;
    digit_to_english(digit)?;
    let clip = tokio::task::spawn_blocking(move || {
        speak_digit(digit, st.translator.as_ref(), st.tts.as_ref())
    })
    .await
    .map_err(internal)??
    .1;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], wav_encode(&clip)).into_response())
}

/// Loads the model and serves until Ctrl-C.
pub async fn serve(cfg: ServiceConfig) -> anyhow::Result<()> {
    cfg.validate()?;
    let state = Arc::new(AppState::load(&cfg)?);
    if let Some(dir) = &cfg.static_dir {
        if !Path::new(dir).is_dir() {
            anyhow::bail!("static directory {} does not exist", dir.display());
        }
    }
    let addr: SocketAddr = format!("{}:{}", cfg.host, cfg.port)
        .parse()
        .with_context(|| format!("bad listen address {}:{}", cfg.host, cfg.port))?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("cannot listen on {addr}"))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, &cfg))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
