//! Wire types shared by the HTTP service and its clients.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub const HEALTH: &str = "/health";
pub const MINE: &str = "/v1/mine";
pub const BUILD_KB: &str = "/v1/kb/build";
pub const LEARN: &str = "/v1/experiences/learn";
pub const IDENTIFY: &str = "/v1/identify";
pub const UPDATE: &str = "/v1/update";
pub const EVALUATE: &str = "/v1/evaluate";

/// Per-request overrides of the server's run configuration.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct JobOptions {
    /// TOML config file read by the server instead of its own.
    pub config: Option<PathBuf>,
    /// Chat provider spec; only `scripted:<transcript file>` is accepted.
    pub provider: Option<String>,
}

/// A request body: the operation's fields plus optional overrides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job<T> {
    #[serde(flatten)]
    pub request: T,
    #[serde(default)]
    pub options: JobOptions,
}

impl<T> Job<T> {
    pub fn new(request: T, options: JobOptions) -> Self {
        Job { request, options }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

pub const SCRIPTED_PREFIX: &str = "scripted:";

/// Parses a provider spec into the transcript path it names.
pub fn scripted_transcript(spec: &str) -> Result<PathBuf, String> {
    match spec.strip_prefix(SCRIPTED_PREFIX) {
        Some(path) if !path.is_empty() => Ok(PathBuf::from(path)),
        _ => Err(format!("unsupported provider {spec:?}; expected scripted:<transcript file>")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::BuildKbRequest;

    #[test]
    fn job_flattens_request_fields() {
        let job = Job::new(
            BuildKbRequest { pairs: "p.jsonl".into(), out: "kb".into() },
            JobOptions { config: None, provider: Some("scripted:t.json".into()) },
        );
        let v = serde_json::to_value(&job).unwrap();
        assert_eq!(v["pairs"], "p.jsonl");
        assert_eq!(v["options"]["provider"], "scripted:t.json");
        let back: Job<BuildKbRequest> = serde_json::from_str(r#"{"pairs":"a","out":"b"}"#).unwrap();
        assert_eq!(back.options, JobOptions::default());
    }

    #[test]
    fn provider_spec_parsing() {
        assert_eq!(scripted_transcript("scripted:x/y.json").unwrap(), PathBuf::from("x/y.json"));
        assert!(scripted_transcript("scripted:").is_err());
        assert!(scripted_transcript("openai").is_err());
    }
}
