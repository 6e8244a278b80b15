//! TOML run configuration. Relative paths resolve against the file's
//! directory; API keys come only from the environment.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::changemining::PairingConfig;
use crate::knowledgebase::{BlockSpec, EmbeddingProvider, HashingEmbedder, RemoteEmbedder};
use crate::llmgateway::{ChatProvider, RemoteChatProvider, SamplingParams, ScriptedProvider, Transcript};
use crate::validation::{
    CommandAdapter, CommandAdapterConfig, CoverageFormat, CoverageMode, ScriptedValidator, ValidationAdapter,
    ValidatorScript,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatSection {
    /// Chat-completions URL. Unset means a provider must be given explicitly.
    pub endpoint: Option<String>,
    pub model: String,
    pub timeout_secs: Option<u64>,
    /// Scripted transcript used instead of a remote endpoint.
    pub transcript: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    /// Embeddings URL. Unset selects the built-in hashing embedder.
    pub endpoint: Option<String>,
    pub model: String,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySection {
    pub window: usize,
}

impl Default for MemorySection {
    fn default() -> Self {
        MemorySection { window: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KbSection {
    pub path: Option<PathBuf>,
    pub block_size: usize,
    pub overlap: usize,
    pub k: usize,
    pub max_in_flight: usize,
}

impl Default for KbSection {
    fn default() -> Self {
        KbSection { path: None, block_size: 50, overlap: 0, k: 1, max_in_flight: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdateSection {
    pub max_iterations: usize,
    pub zero_shot: bool,
    pub prompt_budget: usize,
    /// Repository the validator checks out; needed by command adapters.
    pub repo: Option<PathBuf>,
    pub workspace_root: Option<PathBuf>,
}

impl Default for UpdateSection {
    fn default() -> Self {
        UpdateSection {
            max_iterations: 8,
            zero_shot: false,
            prompt_budget: crate::updater::DEFAULT_PROMPT_BUDGET,
            repo: None,
            workspace_root: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    #[default]
    Maven,
    Command,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterSection {
    pub kind: AdapterKind,
    pub script: Option<PathBuf>,
    pub compile_cmd: Option<String>,
    pub test_cmd: Option<String>,
    pub coverage_cmd: Option<String>,
    pub coverage_format: Option<String>,
    pub report_path: Option<String>,
    pub junit_dir: Option<String>,
    pub diagnostic_pattern: Option<String>,
    pub timeout_secs: u64,
    pub coverage_mode: CoverageMode,
}

impl Default for AdapterSection {
    fn default() -> Self {
        AdapterSection {
            kind: AdapterKind::Maven,
            script: None,
            compile_cmd: None,
            test_cmd: None,
            coverage_cmd: None,
            coverage_format: None,
            report_path: None,
            junit_dir: None,
            diagnostic_pattern: None,
            timeout_secs: 300,
            coverage_mode: CoverageMode::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub concurrency: usize,
    pub retry_attempts: u32,
    pub retry_base_delay_ms: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { concurrency: 4, retry_attempts: 3, retry_base_delay_ms: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifySection {
    pub experiences: Option<PathBuf>,
    pub learn_rounds: usize,
    pub learn_examples: usize,
}

impl Default for IdentifySection {
    fn default() -> Self {
        IdentifySection { experiences: None, learn_rounds: 2, learn_examples: crate::identifier::DEFAULT_LEARN_EXAMPLES }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub chat: ChatSection,
    pub embedding: EmbeddingSection,
    pub sampling: SamplingParams,
    pub memory: MemorySection,
    pub kb: KbSection,
    pub update: UpdateSection,
    pub adapter: AdapterSection,
    pub run: RunSection,
    pub identify: IdentifySection,
    pub mining: PairingConfig,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p.as_mut() {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg = RunConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.chat.transcript);
        resolve(base, &mut self.kb.path);
        resolve(base, &mut self.update.repo);
        resolve(base, &mut self.update.workspace_root);
        resolve(base, &mut self.adapter.script);
        resolve(base, &mut self.identify.experiences);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.update.max_iterations == 0 {
            return Err(ConfigError::Invalid("update.max_iterations must be at least 1".into()));
        }
        if self.kb.k == 0 {
            return Err(ConfigError::Invalid("kb.k must be at least 1".into()));
        }
        if self.run.concurrency == 0 {
            return Err(ConfigError::Invalid("run.concurrency must be at least 1".into()));
        }
        if self.run.retry_attempts == 0 {
            return Err(ConfigError::Invalid("run.retry_attempts must be at least 1".into()));
        }
        self.sampling.validate().map_err(ConfigError::Invalid)?;
        self.block_spec()?;
        if let Some(f) = &self.adapter.coverage_format {
            f.parse::<CoverageFormat>().map_err(ConfigError::Invalid)?;
        }
        Ok(())
    }

    pub fn block_spec(&self) -> Result<BlockSpec, ConfigError> {
        BlockSpec::new(self.kb.block_size, self.kb.overlap).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn retry_policy(&self) -> crate::llmgateway::RetryPolicy {
        crate::llmgateway::RetryPolicy {
            max_attempts: self.run.retry_attempts,
            base_delay: Duration::from_millis(self.run.retry_base_delay_ms),
        }
    }

    /// Chat provider from `[chat]`: a transcript when given, else the endpoint.
    pub fn chat_provider(&self) -> Result<Arc<dyn ChatProvider>, ConfigError> {
        if let Some(path) = &self.chat.transcript {
            let t = Transcript::load(path).map_err(|e| ConfigError::Invalid(format!("chat transcript {}: {e}", path.display())))?;
            return Ok(Arc::new(ScriptedProvider::new(t)));
        }
        let Some(endpoint) = &self.chat.endpoint else {
            return Err(ConfigError::Invalid("no chat provider: set chat.endpoint or chat.transcript".into()));
        };
        let timeout = Duration::from_secs(self.chat.timeout_secs.unwrap_or(120));
        let p = RemoteChatProvider::new(endpoint.clone(), self.chat.model.clone(), timeout)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(Arc::new(p))
    }

    pub fn embedder(&self) -> Result<Arc<dyn EmbeddingProvider>, ConfigError> {
        match &self.embedding.endpoint {
            None => Ok(Arc::new(HashingEmbedder::default())),
            Some(endpoint) => {
                let timeout = Duration::from_secs(self.embedding.timeout_secs.unwrap_or(60));
                let e = RemoteEmbedder::new(endpoint.clone(), self.embedding.model.clone(), timeout)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(Arc::new(e))
            }
        }
    }

    pub fn command_adapter_config(&self) -> Result<CommandAdapterConfig, ConfigError> {
        let a = &self.adapter;
        let mut c = CommandAdapterConfig::maven();
        if a.kind == AdapterKind::Command && (a.compile_cmd.is_none() || a.test_cmd.is_none()) {
            return Err(ConfigError::Invalid("adapter.kind = \"command\" needs compile_cmd and test_cmd".into()));
        }
        if let Some(v) = &a.compile_cmd {
            c.compile = v.clone();
        }
        if let Some(v) = &a.test_cmd {
            c.test = v.clone();
        }
        if a.coverage_cmd.is_some() || a.kind == AdapterKind::Command {
            c.coverage = a.coverage_cmd.clone();
        }
        if let Some(v) = &a.coverage_format {
            c.report_format = v.parse().map_err(ConfigError::Invalid)?;
        }
        if let Some(v) = &a.report_path {
            c.report_path = v.clone();
        }
        if a.junit_dir.is_some() || a.kind == AdapterKind::Command {
            c.junit_dir = a.junit_dir.clone();
        }
        if let Some(v) = &a.diagnostic_pattern {
            c.diagnostic_pattern = v.clone();
        }
        c.test_root = self.mining.test_root.clone();
        c.extension = self.mining.extensions.first().cloned().unwrap_or_else(|| "java".into());
        c.timeout_secs = a.timeout_secs;
        c.coverage_mode = a.coverage_mode;
        Ok(c)
    }

    pub fn validator(&self) -> Result<Arc<dyn ValidationAdapter>, ConfigError> {
        match self.adapter.kind {
            AdapterKind::Scripted => {
                let path = self
                    .adapter
                    .script
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("adapter.kind = \"scripted\" needs adapter.script".into()))?;
                let mut script = ValidatorScript::load(path)
                    .map_err(|e| ConfigError::Invalid(format!("validator script {}: {e}", path.display())))?;
                script.coverage_mode = self.adapter.coverage_mode;
                Ok(Arc::new(ScriptedValidator::new(script)))
            }
            AdapterKind::Maven | AdapterKind::Command => {
                let a = CommandAdapter::new(self.command_adapter_config()?).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(Arc::new(a))
            }
        }
    }
}
