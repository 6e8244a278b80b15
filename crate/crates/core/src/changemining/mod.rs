//! Mining of production/test co-evolution samples from repository history.

mod diff;
mod git;
mod mine;
mod scanner;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diff::{
    apply_diff, compute_diff, render_diff_text, ApplyError, CodeDiff, DiffLine, Hunk, LineKind,
    DEFAULT_CONTEXT,
};
pub(crate) use diff::split_rendered_hunks;
pub use git::{FileStatus, Git};
pub use mine::{mine_change_pairs, method_units, MethodUnit, MineOutput, SourcePath};
pub use scanner::{sanitize, scan_methods, scan_snippet, signature_of, MethodSpan, ScanError};

#[derive(Debug, Error)]
pub enum MiningError {
    #[error("repository unreadable: {0}")]
    RepoUnreadable(String),
    #[error("commit not found: {0}")]
    CommitNotFound(String),
    #[error("git failed: {0}")]
    Git(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ChangeType {
    Create,
    Delete,
    Edit,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChangeMeta {
    pub version: String,
    pub module: String,
    pub package: String,
    pub class: String,
    #[serde(rename = "type")]
    pub change_type: ChangeType,
}

impl ChangeMeta {
    /// `module/package.class`, the source-file locator.
    pub fn locator(&self) -> String {
        format!("{}/{}.{}", self.module, self.package, self.class)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Positive,
    Negative,
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangePair {
    pub group: String,
    pub project: String,
    pub change_p: ChangeMeta,
    pub change_t: ChangeMeta,
    pub prod_old: String,
    pub prod_new: String,
    pub test_old: String,
    pub test_new: Option<String>,
    pub label: Label,
}

fn method_signature(class: &str, primary: &str, fallback: &str) -> String {
    let sig = signature_of(primary).or_else(|| signature_of(fallback));
    match sig {
        Some((name, arity)) => format!("{class}#{name}/{arity}"),
        None => format!("{class}#?"),
    }
}

impl ChangePair {
    /// `Class#method/arity` of the production side (post-change when present).
    pub fn prod_signature(&self) -> String {
        method_signature(&self.change_p.class, &self.prod_new, &self.prod_old)
    }

    pub fn test_signature(&self) -> String {
        method_signature(
            &self.change_t.class,
            &self.test_old,
            self.test_new.as_deref().unwrap_or_default(),
        )
    }

    /// Stable identifier built from project, commit and both method signatures.
    pub fn sample_id(&self) -> String {
        format!(
            "{}@{}:{}~{}",
            self.project,
            self.change_p.version,
            self.prod_signature(),
            self.test_signature()
        )
    }

    /// Label implied by history: the test is obsolete iff it had to change.
    pub fn historical_label(&self) -> Label {
        match &self.test_new {
            Some(t) if *t != self.test_old => Label::Positive,
            _ => Label::Negative,
        }
    }

    /// Drops the post-change test, producing an identification input.
    pub fn into_unlabeled(mut self) -> Self {
        self.test_new = None;
        self.label = Label::Unlabeled;
        self
    }

    /// Checks the label against the test snapshots.
    pub fn label_is_sound(&self) -> bool {
        match self.label {
            Label::Positive => self.test_new.as_ref().is_some_and(|t| *t != self.test_old),
            Label::Negative => self.test_new.as_ref().is_none_or(|t| *t == self.test_old),
            Label::Unlabeled => true,
        }
    }

    /// Unified diff of the production method.
    pub fn prod_diff_text(&self) -> String {
        render_diff_text(&compute_diff(&self.prod_old, &self.prod_new), DEFAULT_CONTEXT)
    }

    /// Unified diff of the test method; empty when the post-change test is absent.
    pub fn test_diff_text(&self) -> String {
        match &self.test_new {
            Some(t) => render_diff_text(&compute_diff(&self.test_old, t), DEFAULT_CONTEXT),
            None => String::new(),
        }
    }
}

/// Naming conventions used to pair production classes with their tests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairingConfig {
    pub group: String,
    /// Defaults to the repository directory name.
    pub project: Option<String>,
    pub prod_root: String,
    pub test_root: String,
    pub extensions: Vec<String>,
    /// Test class name patterns; `{}` stands for the production class name.
    pub test_name_patterns: Vec<String>,
    pub reference_fallback: bool,
}

impl Default for PairingConfig {
    fn default() -> Self {
        PairingConfig {
            group: "local".to_string(),
            project: None,
            prod_root: "src/main/java".to_string(),
            test_root: "src/test/java".to_string(),
            extensions: vec!["java".to_string()],
            test_name_patterns: vec!["{}Test".into(), "Test{}".into(), "{}Tests".into()],
            reference_fallback: true,
        }
    }
}
