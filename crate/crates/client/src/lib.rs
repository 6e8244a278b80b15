//! Typed async client for the service.

use ptco_core::api::{self, ErrorBody, Health, Job, JobOptions};
use ptco_core::metrics::MetricsReport;
use ptco_core::pipeline::{
    BuildKbRequest, BuildKbSummary, EvaluateRequest, IdentifyRequest, IdentifySummary, LearnRequest, LearnSummary,
    MineRequest, MineSummary, UpdateRequestFiles, UpdateSummary,
};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{message}")]
    Api { status: u16, kind: String, message: String },
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
}

impl ClientError {
    /// True when the server rejected the request as the caller's fault.
    pub fn is_input_error(&self) -> bool {
        matches!(self, ClientError::Api { status, .. } if (400..500).contains(status))
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
    options: JobOptions,
}

impl Client {
    pub fn new(base_url: &str) -> Self {
        Client { base: base_url.trim_end_matches('/').to_string(), http: reqwest::Client::new(), options: JobOptions::default() }
    }

    /// Overrides sent with every job.
    pub fn with_options(mut self, options: JobOptions) -> Self {
        self.options = options;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        let resp = self.http.get(format!("{}{}", self.base, api::HEALTH)).send().await?;
        decode(resp).await
    }

    async fn call<Req: Serialize, Resp: DeserializeOwned>(&self, route: &str, request: Req) -> Result<Resp, ClientError> {
        let job = Job::new(request, self.options.clone());
        let resp = self.http.post(format!("{}{route}", self.base)).json(&job).send().await?;
        decode(resp).await
    }

    pub async fn mine(&self, req: MineRequest) -> Result<MineSummary, ClientError> {
        self.call(api::MINE, req).await
    }

    pub async fn build_kb(&self, req: BuildKbRequest) -> Result<BuildKbSummary, ClientError> {
        self.call(api::BUILD_KB, req).await
    }

    pub async fn learn(&self, req: LearnRequest) -> Result<LearnSummary, ClientError> {
        self.call(api::LEARN, req).await
    }

    pub async fn identify(&self, req: IdentifyRequest) -> Result<IdentifySummary, ClientError> {
        self.call(api::IDENTIFY, req).await
    }

    pub async fn update(&self, req: UpdateRequestFiles) -> Result<UpdateSummary, ClientError> {
        self.call(api::UPDATE, req).await
    }

    pub async fn evaluate(&self, req: EvaluateRequest) -> Result<MetricsReport, ClientError> {
        self.call(api::EVALUATE, req).await
    }
}

async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp.json().await?);
    }
    let text = resp.text().await?;
    let (kind, message) = match serde_json::from_str::<ErrorBody>(&text) {
        Ok(b) => (b.error.kind, b.error.message),
        Err(_) => ("http".to_string(), format!("{status}: {text}")),
    };
    Err(ClientError::Api { status: status.as_u16(), kind, message })
}
