//! Line-oriented code diffs.
//!
//! A [`CodeDiff`] keeps the complete edit script next to its hunks so it can be
//! rendered again with any context width. Line text always carries its own
//! terminator, which lets a file without a trailing newline round-trip exactly.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use similar::{ChangeTag, TextDiff};
use thiserror::Error;

/// Context lines used when none is specified.
pub const DEFAULT_CONTEXT: usize = 3;

const NO_NEWLINE_MARKER: &str = "\\ No newline at end of file";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineKind {
    Context,
    Removed,
    Added,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffLine {
    pub kind: LineKind,
    /// Line content including its terminator, if it had one.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub old_start: usize,
    pub old_len: usize,
    pub new_start: usize,
    pub new_len: usize,
    pub lines: Vec<DiffLine>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeDiff {
    pub old_path: String,
    pub new_path: String,
    pub hunks: Vec<Hunk>,
    pub changed_lines_new: BTreeSet<usize>,
    #[serde(skip)]
    script: Vec<DiffLine>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ApplyError {
    #[error("hunk {hunk} expects old line {line} to read {expected:?}")]
    ContextMismatch {
        hunk: usize,
        line: usize,
        expected: String,
    },
    #[error("hunk {hunk} reaches past the end of the old text")]
    OutOfRange { hunk: usize },
    #[error("hunk {hunk} overlaps the previous hunk")]
    Overlap { hunk: usize },
}

impl CodeDiff {
    pub fn is_empty(&self) -> bool {
        self.hunks.is_empty()
    }

    pub fn with_paths(mut self, old_path: impl Into<String>, new_path: impl Into<String>) -> Self {
        self.old_path = old_path.into();
        self.new_path = new_path.into();
        self
    }

    /// Hunks regrouped with `context` lines of surrounding text.
    ///
    /// A diff deserialized from JSON has no edit script; its stored hunks are
    /// returned unchanged.
    pub fn hunks_with_context(&self, context: usize) -> Vec<Hunk> {
        if self.script.is_empty() {
            return self.hunks.clone();
        }
        group_hunks(&self.script, context)
    }
}

/// Line diff of two texts with [`DEFAULT_CONTEXT`] context lines per hunk.
pub fn compute_diff(old_text: &str, new_text: &str) -> CodeDiff {
    let diff = TextDiff::configure()
        .algorithm(similar::Algorithm::Myers)
        .diff_lines(old_text, new_text);

    let mut script = Vec::new();
    let mut changed_lines_new = BTreeSet::new();
    for change in diff.iter_all_changes() {
        let kind = match change.tag() {
            ChangeTag::Equal => LineKind::Context,
            ChangeTag::Delete => LineKind::Removed,
            ChangeTag::Insert => {
                if let Some(idx) = change.new_index() {
                    changed_lines_new.insert(idx + 1);
                }
                LineKind::Added
            }
        };
        script.push(DiffLine {
            kind,
            text: change.value().to_string(),
        });
    }

    let hunks = group_hunks(&script, DEFAULT_CONTEXT);
    CodeDiff {
        old_path: String::new(),
        new_path: String::new(),
        hunks,
        changed_lines_new,
        script,
    }
}

fn group_hunks(script: &[DiffLine], context: usize) -> Vec<Hunk> {
    let changes: Vec<usize> = script
        .iter()
        .enumerate()
        .filter(|(_, l)| l.kind != LineKind::Context)
        .map(|(i, _)| i)
        .collect();
    if changes.is_empty() {
        return Vec::new();
    }

    let mut ranges: Vec<(usize, usize)> = Vec::new();
    for &c in &changes {
        let start = c.saturating_sub(context);
        let end = (c + 1 + context).min(script.len());
        match ranges.last_mut() {
            Some(last) if start <= last.1 => last.1 = end,
            _ => ranges.push((start, end)),
        }
    }

    // Line counters before each script index.
    let mut old_before = vec![0usize; script.len() + 1];
    let mut new_before = vec![0usize; script.len() + 1];
    for (i, line) in script.iter().enumerate() {
        old_before[i + 1] = old_before[i] + usize::from(line.kind != LineKind::Added);
        new_before[i + 1] = new_before[i] + usize::from(line.kind != LineKind::Removed);
    }

    ranges
        .into_iter()
        .map(|(s, e)| {
            let lines = script[s..e].to_vec();
            let old_len = old_before[e] - old_before[s];
            let new_len = new_before[e] - new_before[s];
            Hunk {
                old_start: if old_len > 0 { old_before[s] + 1 } else { old_before[s] },
                old_len,
                new_start: if new_len > 0 { new_before[s] + 1 } else { new_before[s] },
                new_len,
                lines,
            }
        })
        .collect()
}

/// Applies `diff` to `old_text`, verifying every context and removed line.
pub fn apply_diff(old_text: &str, diff: &CodeDiff) -> Result<String, ApplyError> {
    let old: Vec<&str> = old_text.split_inclusive('\n').collect();
    let mut out = String::with_capacity(old_text.len());
    let mut cursor = 0usize;

    for (h, hunk) in diff.hunks.iter().enumerate() {
        let target = if hunk.old_len > 0 {
            hunk.old_start - 1
        } else {
            hunk.old_start
        };
        if target < cursor {
            return Err(ApplyError::Overlap { hunk: h });
        }
        if target > old.len() {
            return Err(ApplyError::OutOfRange { hunk: h });
        }
        for line in &old[cursor..target] {
            out.push_str(line);
        }
        cursor = target;

        for line in &hunk.lines {
            match line.kind {
                LineKind::Added => out.push_str(&line.text),
                LineKind::Context | LineKind::Removed => {
                    let Some(actual) = old.get(cursor) else {
                        return Err(ApplyError::OutOfRange { hunk: h });
                    };
                    if *actual != line.text {
                        return Err(ApplyError::ContextMismatch {
                            hunk: h,
                            line: cursor + 1,
                            expected: line.text.clone(),
                        });
                    }
                    if line.kind == LineKind::Context {
                        out.push_str(actual);
                    }
                    cursor += 1;
                }
            }
        }
    }
    for line in &old[cursor..] {
        out.push_str(line);
    }
    Ok(out)
}

/// Unified-diff text for `diff`. An empty diff renders as the empty string.
pub fn render_diff_text(diff: &CodeDiff, context_lines: usize) -> String {
    let hunks = diff.hunks_with_context(context_lines);
    if hunks.is_empty() {
        return String::new();
    }
    let old_path = if diff.old_path.is_empty() { "a" } else { &diff.old_path };
    let new_path = if diff.new_path.is_empty() { "b" } else { &diff.new_path };

    let mut out = String::new();
    let _ = writeln!(out, "--- {old_path}");
    let _ = writeln!(out, "+++ {new_path}");
    for hunk in &hunks {
        let _ = writeln!(
            out,
            "@@ -{},{} +{},{} @@",
            hunk.old_start, hunk.old_len, hunk.new_start, hunk.new_len
        );
        for line in &hunk.lines {
            out.push(match line.kind {
                LineKind::Context => ' ',
                LineKind::Removed => '-',
                LineKind::Added => '+',
            });
            out.push_str(&line.text);
            if !line.text.ends_with('\n') {
                out.push('\n');
                out.push_str(NO_NEWLINE_MARKER);
                out.push('\n');
            }
        }
    }
    out
}

/// Splits rendered diff text into its file header and one string per hunk.
pub(crate) fn split_rendered_hunks(text: &str) -> (String, Vec<String>) {
    let mut header = String::new();
    let mut hunks: Vec<String> = Vec::new();
    for line in text.split_inclusive('\n') {
        if line.starts_with("@@") {
            hunks.push(line.to_string());
        } else if let Some(current) = hunks.last_mut() {
            current.push_str(line);
        } else {
            header.push_str(line);
        }
    }
    (header, hunks)
}
