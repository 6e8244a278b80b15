//! Chat access for every LLM call: window memory, fixed sampling parameters,
//! bounded retries, and an audit trail of raw requests and replies.

mod audit;
mod memory;
mod provider;

use std::sync::{Arc, OnceLock};
use std::thread;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub use audit::{AuditRecord, AuditTrail};
pub use memory::{ChatTurn, ConversationMemory, Role};
pub use provider::{
    parse_chat_reply, ChatProvider, ChatRequest, ProviderError, RemoteChatProvider, ReplyRule,
    ScriptedProvider, ScriptedReply, Transcript,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.0,
            top_p: 1.0,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.top_p) || self.top_p == 0.0 {
            return Err(format!("top_p must be in (0, 1], got {}", self.top_p));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("provider timed out after {attempts} attempts: {last}")]
    ProviderTimeout { attempts: u32, last: String },
    #[error("provider rejected the request: {0}")]
    ProviderRejection(String),
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("prompt must be a non-empty human turn")]
    InvalidPrompt,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("reply contains no code")]
pub struct EmptyReply;

/// Retry policy for timeouts: `max_attempts` tries with exponential backoff.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

/// Shared handle used by all sessions. Memory stays with the caller.
#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    params: SamplingParams,
    retry: RetryPolicy,
    audit: Option<Arc<AuditTrail>>,
}

impl Gateway {
    pub fn new(provider: Arc<dyn ChatProvider>, params: SamplingParams) -> Self {
        Gateway {
            provider,
            params,
            retry: RetryPolicy::default(),
            audit: None,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_audit(mut self, audit: Arc<AuditTrail>) -> Self {
        self.audit = Some(audit);
        self
    }

    pub fn provider(&self) -> &Arc<dyn ChatProvider> {
        &self.provider
    }

    pub fn params(&self) -> SamplingParams {
        self.params
    }

    fn audit(&self, run: &str, event: &str, payload: serde_json::Value) {
        if let Some(a) = &self.audit {
            a.record(run, event, payload);
        }
    }

    /// Sends `prompt` with the memory's window, records the exchange in
    /// memory, and returns the assistant turn.
    pub fn send(
        &self,
        run_key: &str,
        memory: &mut ConversationMemory,
        prompt: ChatTurn,
    ) -> Result<ChatTurn, GatewayError> {
        if prompt.role != Role::Human || prompt.content.is_empty() {
            return Err(GatewayError::InvalidPrompt);
        }
        let request = ChatRequest {
            run_key: run_key.to_string(),
            messages: memory.outbound(&prompt),
            params: self.params,
        };

        let mut attempt = 0u32;
        let reply = loop {
            attempt += 1;
            self.audit(run_key, "request", json!({"attempt": attempt, "messages": request.messages, "params": request.params}));
            match self.provider.complete(&request) {
                Ok(text) => break text,
                Err(ProviderError::Timeout(msg)) => {
                    self.audit(run_key, "timeout", json!({"attempt": attempt, "message": msg}));
                    if attempt >= self.retry.max_attempts {
                        return Err(GatewayError::ProviderTimeout {
                            attempts: attempt,
                            last: msg,
                        });
                    }
                    let delay = self.retry.base_delay * 2u32.saturating_pow(attempt - 1);
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                }
                Err(e) => {
                    self.audit(run_key, "error", json!({"attempt": attempt, "message": e.to_string()}));
                    return Err(match e {
                        ProviderError::Malformed(m) => GatewayError::MalformedResponse(m),
                        other => GatewayError::ProviderRejection(other.to_string()),
                    });
                }
            }
        };
        if reply.trim().is_empty() {
            self.audit(run_key, "error", json!({"attempt": attempt, "message": "empty reply"}));
            return Err(GatewayError::MalformedResponse("empty reply".into()));
        }
        self.audit(run_key, "response", json!({"attempt": attempt, "content": reply}));

        let reply = ChatTurn::assistant(reply);
        memory.record(prompt, reply.clone());
        Ok(reply)
    }
}

fn fence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```[^\n`]*\n(.*?)```").unwrap())
}

/// Content of the first fenced code block, or the whole reply when it has none.
pub fn extract_code_block(reply: &str) -> Result<String, EmptyReply> {
    let code = match fence_re().captures(reply) {
        Some(c) => c[1].trim_start_matches(['\n', '\r']).trim_end().to_string(),
        None => reply.trim().to_string(),
    };
    if code.is_empty() {
        Err(EmptyReply)
    } else {
        Ok(code)
    }
}
