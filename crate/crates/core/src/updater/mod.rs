//! The repair loop: prompt with a retrieved example, validate the candidate,
//! feed the highest-priority failure back, stop on success or at the cutoff.

mod prompt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::changemining::ChangePair;
use crate::knowledgebase::KnowledgeEntry;
use crate::llmgateway::{extract_code_block, ChatTurn, ConversationMemory, Gateway, GatewayError};
use crate::validation::{QualityLevel, ValidationAdapter, ValidationContext, ValidationError, ValidationReport};

pub(crate) use prompt::{diff_or_marker, fit_diff, test_method_label};
#[cfg(test)]
pub(crate) use prompt::NO_PROD_CHANGE;
pub use prompt::{
    render_feedback_prompt, render_update_prompt, SampleDiffs, SourceSnippet, DEFAULT_PROMPT_BUDGET,
    UPDATE_SYSTEM_PROMPT,
};

pub const DEFAULT_MAX_ITERATIONS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeedbackKind {
    None,
    CompileError,
    TestFailure,
    CoverageGap,
}

impl FeedbackKind {
    pub fn for_level(level: QualityLevel) -> Self {
        match level {
            QualityLevel::CompilationFailure => FeedbackKind::CompileError,
            QualityLevel::TestFailure => FeedbackKind::TestFailure,
            QualityLevel::CoverageFailure => FeedbackKind::CoverageGap,
            QualityLevel::SatisfiesAll => FeedbackKind::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub prompt: String,
    pub reply: String,
    pub candidate_test: String,
    pub validation: ValidationReport,
    pub feedback_kind: FeedbackKind,
    pub feedback_prompt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SessionOutcome {
    Success,
    Exhausted,
}

/// The example an update prompt was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedSample {
    pub entry_id: String,
    pub score: f64,
    pub prod_diff_text: String,
    pub test_diff_text: String,
}

impl RetrievedSample {
    pub fn from_entry(entry: &KnowledgeEntry, score: f64) -> Self {
        RetrievedSample {
            entry_id: entry.entry_id.clone(),
            score,
            prod_diff_text: entry.prod_diff_text.clone(),
            test_diff_text: entry.test_diff_text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateSession {
    pub sample_id: String,
    pub pair: ChangePair,
    pub retrieved_sample: Option<RetrievedSample>,
    pub system_prompt: String,
    pub iterations: Vec<IterationRecord>,
    pub outcome: SessionOutcome,
    pub final_test: Option<String>,
    pub max_iterations: usize,
}

impl UpdateSession {
    /// Highest level reached by any iteration.
    pub fn best_level(&self) -> QualityLevel {
        self.iterations
            .iter()
            .map(|i| i.validation.level)
            .max()
            .unwrap_or(QualityLevel::CompilationFailure)
    }

    pub fn feedback_kinds(&self) -> Vec<FeedbackKind> {
        self.iterations.iter().map(|i| i.feedback_kind).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UpdateOptions {
    pub max_iterations: usize,
    pub window: usize,
    pub prompt_budget: usize,
}

impl Default for UpdateOptions {
    fn default() -> Self {
        UpdateOptions {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            window: ConversationMemory::DEFAULT_WINDOW,
            prompt_budget: DEFAULT_PROMPT_BUDGET,
        }
    }
}

#[derive(Debug, Error)]
pub enum UpdateError {
    #[error("max_iterations must be at least 1")]
    InvalidOptions,
    #[error("validator setup failed: {0}")]
    ValidatorSetup(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Validation(ValidationError),
}

impl From<ValidationError> for UpdateError {
    fn from(e: ValidationError) -> Self {
        match e {
            ValidationError::Setup(m) => UpdateError::ValidatorSetup(m),
            ValidationError::WorkspaceCorrupt(m) => UpdateError::ValidatorSetup(format!("workspace corrupt: {m}")),
            other => UpdateError::Validation(other),
        }
    }
}

/// Everything one session needs besides the shared gateway and validator.
pub struct UpdateRequest<'a> {
    pub pair: &'a ChangePair,
    pub sample: Option<RetrievedSample>,
    pub context: ValidationContext,
    pub source: Option<SourceSnippet>,
}

/// Runs one repair session for `request.pair`.
pub fn update(
    request: UpdateRequest<'_>,
    gateway: &Gateway,
    validator: &dyn ValidationAdapter,
    options: UpdateOptions,
) -> Result<UpdateSession, UpdateError> {
    if options.max_iterations == 0 {
        return Err(UpdateError::InvalidOptions);
    }
    let UpdateRequest { pair, sample, context, source } = request;
    validator.preflight(&context, pair.test_new.as_deref())?;

    let (system, first_prompt) = render_update_prompt(
        &pair.prod_old,
        &pair.prod_new,
        &pair.test_old,
        sample.as_ref().map(|s| SampleDiffs {
            prod_diff_text: &s.prod_diff_text,
            test_diff_text: &s.test_diff_text,
        }),
        options.prompt_budget,
    );
    let mut memory = ConversationMemory::new(options.window, Some(system.clone()));
    let mut iterations = Vec::with_capacity(options.max_iterations);
    let mut prompt = first_prompt;
    let mut final_test = None;

    for iteration in 1..=options.max_iterations {
        let reply = gateway.send(&context.run_key, &mut memory, ChatTurn::human(prompt.clone()))?;
        let (candidate, validation) = match extract_code_block(&reply.content) {
            Ok(code) => {
                let report = validator.validate(&context, &code)?;
                (code, report)
            }
            Err(e) => (String::new(), ValidationReport::compile_failed(vec![e.to_string()])),
        };
        let feedback_kind = FeedbackKind::for_level(validation.level);
        let feedback_prompt = render_feedback_prompt(feedback_kind, &validation, source.as_ref());
        let done = feedback_kind == FeedbackKind::None;
        if done {
            final_test = Some(candidate.clone());
        }
        iterations.push(IterationRecord {
            iteration,
            prompt: std::mem::take(&mut prompt),
            reply: reply.content,
            candidate_test: candidate,
            validation,
            feedback_kind,
            feedback_prompt: feedback_prompt.clone(),
        });
        if done {
            break;
        }
        prompt = feedback_prompt;
    }

    Ok(UpdateSession {
        sample_id: pair.sample_id(),
        pair: pair.clone(),
        retrieved_sample: sample,
        system_prompt: system,
        outcome: if final_test.is_some() { SessionOutcome::Success } else { SessionOutcome::Exhausted },
        iterations,
        final_test,
        max_iterations: options.max_iterations,
    })
}
