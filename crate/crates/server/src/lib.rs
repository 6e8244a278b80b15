//! HTTP/JSON front end. Every operation is a POST whose body is a
//! [`Job`]; the pipeline itself runs on the blocking pool.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ptco_core::api::{self, ErrorBody, ErrorDetail, Health, Job, JobOptions};
use ptco_core::config::RunConfig;
use ptco_core::llmgateway::{ChatProvider, ScriptedProvider, Transcript};
use ptco_core::pipeline::{self, PipelineError};
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

#[derive(Clone)]
pub struct AppState {
    config: Arc<RunConfig>,
}

impl AppState {
    pub fn new(config: RunConfig) -> Self {
        AppState { config: Arc::new(config) }
    }
}

/// Configuration and provider resolved for one job.
struct Ctx {
    config: RunConfig,
    transcript: Option<PathBuf>,
}

impl Ctx {
    fn resolve(state: &AppState, options: JobOptions) -> Result<Ctx, PipelineError> {
        let config = match &options.config {
            Some(path) => RunConfig::load(path)?,
            None => (*state.config).clone(),
        };
        let transcript = options
            .provider
            .as_deref()
            .map(api::scripted_transcript)
            .transpose()
            .map_err(PipelineError::Input)?;
        Ok(Ctx { config, transcript })
    }

    fn chat(&self) -> Result<Arc<dyn ChatProvider>, PipelineError> {
        match &self.transcript {
            Some(path) => {
                let t = Transcript::load(path)
                    .map_err(|e| PipelineError::Input(format!("transcript {}: {e}", path.display())))?;
                Ok(Arc::new(ScriptedProvider::new(t)))
            }
            None => Ok(self.config.chat_provider()?),
        }
    }
}

fn error_response(status: StatusCode, kind: &str, message: String) -> Response {
    let body = ErrorBody { error: ErrorDetail { kind: kind.to_string(), message } };
    (status, Json(body)).into_response()
}

fn pipeline_error(e: PipelineError) -> Response {
    let status = if e.is_input_error() {
        tracing::debug!(kind = e.kind(), "rejected: {e}");
        StatusCode::BAD_REQUEST
    } else {
        tracing::error!(kind = e.kind(), "failed: {e}");
        StatusCode::INTERNAL_SERVER_ERROR
    };
    error_response(status, e.kind(), e.to_string())
}

type Body<T> = Result<Json<Job<T>>, JsonRejection>;

async fn run_job<Req, Resp>(state: AppState, body: Body<Req>, op: fn(Req, Ctx) -> Result<Resp, PipelineError>) -> Response
where
    Req: Send + 'static,
    Resp: Serialize + Send + 'static,
{
    let Json(job) = match body {
        Ok(b) => b,
        Err(rej) => return error_response(StatusCode::BAD_REQUEST, "input", rej.body_text()),
    };
    let outcome = tokio::task::spawn_blocking(move || {
        let ctx = Ctx::resolve(&state, job.options)?;
        op(job.request, ctx)
    })
    .await;
    match outcome {
        Ok(Ok(v)) => Json(v).into_response(),
        Ok(Err(e)) => pipeline_error(e),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

async fn health() -> Json<Health> {
    Json(Health { status: "ok".into(), version: env!("CARGO_PKG_VERSION").into() })
}

async fn mine(State(s): State<AppState>, body: Body<pipeline::MineRequest>) -> Response {
    run_job(s, body, |r, c| pipeline::mine(&r, &c.config)).await
}

async fn build_kb(State(s): State<AppState>, body: Body<pipeline::BuildKbRequest>) -> Response {
    run_job(s, body, |r, c| {
        let embedder = c.config.embedder()?;
        pipeline::build_kb(&r, &c.config, embedder.as_ref())
    })
    .await
}

async fn learn(State(s): State<AppState>, body: Body<pipeline::LearnRequest>) -> Response {
    run_job(s, body, |r, c| pipeline::learn(&r, &c.config, c.chat()?)).await
}

async fn identify(State(s): State<AppState>, body: Body<pipeline::IdentifyRequest>) -> Response {
    run_job(s, body, |r, c| pipeline::identify(&r, &c.config, c.chat()?)).await
}

async fn update(State(s): State<AppState>, body: Body<pipeline::UpdateRequestFiles>) -> Response {
    run_job(s, body, |r, c| {
        let validator = c.config.validator()?;
        let embedder = c.config.embedder()?;
        pipeline::update(&r, &c.config, c.chat()?, validator, embedder.as_ref())
    })
    .await
}

async fn evaluate(State(s): State<AppState>, body: Body<pipeline::EvaluateRequest>) -> Response {
    run_job(s, body, |r, _| pipeline::evaluate(&r)).await
}

async fn not_found() -> Response {
    error_response(StatusCode::NOT_FOUND, "not_found", "no such route".into())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route(api::HEALTH, get(health))
        .route(api::MINE, post(mine))
        .route(api::BUILD_KB, post(build_kb))
        .route(api::LEARN, post(learn))
        .route(api::IDENTIFY, post(identify))
        .route(api::UPDATE, post(update))
        .route(api::EVALUATE, post(evaluate))
        .fallback(not_found)
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Binds `addr` and serves in the background.
pub async fn spawn(addr: SocketAddr, state: AppState) -> std::io::Result<(SocketAddr, JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    tracing::info!("listening on {local}");
    Ok((local, tokio::spawn(serve(listener, state))))
}
