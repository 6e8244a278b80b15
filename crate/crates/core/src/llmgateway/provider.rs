use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::memory::{ChatTurn, Role};
use super::SamplingParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    /// Identifies the conversation; scripted providers key their replies on it.
    pub run_key: String,
    pub messages: Vec<ChatTurn>,
    pub params: SamplingParams,
}

impl ChatRequest {
    pub fn last_human(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::Human)
            .map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProviderError {
    #[error("provider timed out: {0}")]
    Timeout(String),
    #[error("provider rejected the request: {0}")]
    Rejection(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("scripted transcript has no reply left for run {0}")]
    ScriptExhausted(String),
}

pub trait ChatProvider: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

/// Chat-completions endpoint (`choices[0].message.content`).
pub struct RemoteChatProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl RemoteChatProvider {
    pub const API_KEY_VAR: &'static str = "PTCO_CHAT_API_KEY";

    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, timeout: Duration) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Rejection(e.to_string()))?;
        Ok(RemoteChatProvider {
            client,
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var(Self::API_KEY_VAR).ok(),
        })
    }

    /// Request body on the wire.
    pub fn payload(&self, request: &ChatRequest) -> serde_json::Value {
        let messages: Vec<_> = request
            .messages
            .iter()
            .map(|m| json!({"role": m.role.wire_name(), "content": m.content}))
            .collect();
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.params.temperature,
            "top_p": request.params.top_p,
            "frequency_penalty": request.params.frequency_penalty,
            "presence_penalty": request.params.presence_penalty,
        })
    }
}

/// Pulls `choices[0].message.content` out of a chat-completions reply.
pub fn parse_chat_reply(body: &serde_json::Value) -> Result<String, ProviderError> {
    body.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| ProviderError::Malformed("missing choices[0].message.content".into()))
}

impl ChatProvider for RemoteChatProvider {
    fn id(&self) -> String {
        format!("remote:{}", self.model)
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let mut req = self.client.post(&self.endpoint).json(&self.payload(request));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ProviderError::Timeout(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(ProviderError::Timeout(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(ProviderError::Rejection(format!("HTTP {status}: {body}")));
        }
        let body: serde_json::Value = resp.json().map_err(|e| ProviderError::Malformed(e.to_string()))?;
        parse_chat_reply(&body)
    }
}

/// A canned reply, or a scripted failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Text(String),
    Timeout { timeout: String },
    Reject { reject: String },
    Malformed { malformed: String },
}

impl ScriptedReply {
    fn into_result(self) -> Result<String, ProviderError> {
        match self {
            ScriptedReply::Text(t) => Ok(t),
            ScriptedReply::Timeout { timeout } => Err(ProviderError::Timeout(timeout)),
            ScriptedReply::Reject { reject } => Err(ProviderError::Rejection(reject)),
            ScriptedReply::Malformed { malformed } => Err(ProviderError::Malformed(malformed)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplyRule {
    /// Prefix of the run key; empty matches every run.
    #[serde(default)]
    pub run: String,
    /// Substring of the latest human message.
    pub when: String,
    pub reply: String,
}

/// Transcript file for [`ScriptedProvider`].
///
/// `runs` maps a run key to a FIFO of replies; a key ending in `*` matches
/// every run key with that prefix (longest prefix wins). Runs without a queue
/// fall back to the first matching `rules` entry, then to `shared`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Transcript {
    pub runs: BTreeMap<String, Vec<ScriptedReply>>,
    pub rules: Vec<ReplyRule>,
    pub shared: Vec<ScriptedReply>,
}

impl Transcript {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        crate::fsutil::read_json(path)
    }
}

/// Deterministic provider replaying a [`Transcript`].
#[derive(Debug)]
pub struct ScriptedProvider {
    queues: Mutex<HashMap<String, VecDeque<ScriptedReply>>>,
    shared: Mutex<VecDeque<ScriptedReply>>,
    rules: Vec<ReplyRule>,
    calls: Mutex<Vec<ChatRequest>>,
}

impl ScriptedProvider {
    pub fn new(transcript: Transcript) -> Self {
        ScriptedProvider {
            queues: Mutex::new(
                transcript
                    .runs
                    .into_iter()
                    .map(|(k, v)| (k, v.into_iter().collect()))
                    .collect(),
            ),
            shared: Mutex::new(transcript.shared.into_iter().collect()),
            rules: transcript.rules,
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Provider that answers every run from one FIFO.
    pub fn from_replies<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedProvider::new(Transcript {
            shared: replies.into_iter().map(|r| ScriptedReply::Text(r.into())).collect(),
            ..Transcript::default()
        })
    }

    pub fn calls(&self) -> Vec<ChatRequest> {
        self.calls.lock().expect("call log poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().expect("call log poisoned").len()
    }

    fn queue_key(&self, queues: &HashMap<String, VecDeque<ScriptedReply>>, run: &str) -> Option<String> {
        if queues.contains_key(run) {
            return Some(run.to_string());
        }
        queues
            .keys()
            .filter_map(|k| k.strip_suffix('*').filter(|p| run.starts_with(p)).map(|p| (p.len(), k)))
            .max_by_key(|(len, _)| *len)
            .map(|(_, k)| k.clone())
    }
}

impl ChatProvider for ScriptedProvider {
    fn id(&self) -> String {
        "scripted".to_string()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        self.calls.lock().expect("call log poisoned").push(request.clone());

        let mut queues = self.queues.lock().expect("queue lock poisoned");
        if let Some(key) = self.queue_key(&queues, &request.run_key) {
            let queue = queues.get_mut(&key).expect("key was just found");
            return match queue.pop_front() {
                Some(r) => r.into_result(),
                None => Err(ProviderError::ScriptExhausted(request.run_key.clone())),
            };
        }
        drop(queues);

        let human = request.last_human();
        if let Some(rule) = self
            .rules
            .iter()
            .find(|r| request.run_key.starts_with(&r.run) && human.contains(&r.when)) {
            return Ok(rule.reply.clone());
        }
        match self.shared.lock().expect("queue lock poisoned").pop_front() {
            Some(r) => r.into_result(),
            None => Err(ProviderError::ScriptExhausted(request.run_key.clone())),
        }
    }
}
