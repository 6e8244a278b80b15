use crate::changemining::{compute_diff, render_diff_text, signature_of, split_rendered_hunks, DEFAULT_CONTEXT};
use crate::validation::{ValidationReport, TestStatus};

use super::FeedbackKind;

/// Character budget of the human update message.
pub const DEFAULT_PROMPT_BUDGET: usize = 16_000;

pub(crate) const NO_PROD_CHANGE: &str = "«no production change»";

pub const UPDATE_SYSTEM_PROMPT: &str = "You are an experienced Java developer who maintains unit tests. \
When production code changes, you update the affected test so that it compiles, passes, and exercises \
the changed production code. Reply with the complete updated test method in a single ```java code block.";

/// Unified diff of two versions of a method, or a marker when they match.
pub(crate) fn diff_or_marker(old: &str, new: &str) -> String {
    let text = render_diff_text(&compute_diff(old, new), DEFAULT_CONTEXT);
    if text.is_empty() {
        NO_PROD_CHANGE.to_string()
    } else {
        text
    }
}

/// A diff whose trailing hunks can be dropped one at a time.
#[derive(Debug, Clone)]
pub(crate) struct TrimmableDiff {
    header: String,
    hunks: Vec<String>,
    omitted: usize,
}

impl TrimmableDiff {
    pub(crate) fn new(text: &str) -> Self {
        let (header, hunks) = split_rendered_hunks(text);
        if hunks.is_empty() {
            return TrimmableDiff { header: text.to_string(), hunks, omitted: 0 };
        }
        TrimmableDiff { header, hunks, omitted: 0 }
    }

    pub(crate) fn drop_last(&mut self) -> bool {
        if self.hunks.pop().is_some() {
            self.omitted += 1;
            true
        } else {
            false
        }
    }

    pub(crate) fn render(&self) -> String {
        let mut out = self.header.clone();
        for h in &self.hunks {
            out.push_str(h);
        }
        if self.omitted > 0 {
            if !out.is_empty() && !out.ends_with('\n') {
                out.push('\n');
            }
            out.push_str(&format!("... ({} hunks omitted)\n", self.omitted));
        }
        out
    }
}

/// Drops trailing hunks of `text` until it fits in `max_chars`.
pub(crate) fn fit_diff(text: &str, max_chars: usize) -> String {
    let mut d = TrimmableDiff::new(text);
    while d.render().chars().count() > max_chars && d.drop_last() {}
    d.render()
}

fn fenced(lang: &str, body: &str) -> String {
    let body = body.trim_end_matches('\n');
    format!("```{lang}\n{body}\n```")
}

/// Retrieved example shown to the model.
#[derive(Debug, Clone, Copy)]
pub struct SampleDiffs<'a> {
    pub prod_diff_text: &'a str,
    pub test_diff_text: &'a str,
}

/// "test method `name`", or "test method" when the name cannot be read.
pub(crate) fn test_method_label(test: &str) -> String {
    match signature_of(test) {
        Some((name, _)) => format!("test method `{name}`"),
        None => "test method".to_string(),
    }
}

fn compose(prod: &TrimmableDiff, test: &str, sample: Option<(&TrimmableDiff, &TrimmableDiff)>) -> String {
    let mut s = String::new();
    if let Some((sp, st)) = sample {
        s.push_str("Here is a similar historical change and how its test was updated.\n\n");
        s.push_str("Example production change:\n");
        s.push_str(&fenced("diff", &sp.render()));
        s.push_str("\n\nExample test change:\n");
        s.push_str(&fenced("diff", &st.render()));
        s.push_str("\n\n");
    }
    s.push_str("The production method changed as follows:\n");
    s.push_str(&fenced("diff", &prod.render()));
    s.push_str(&format!("\n\nThis is the {} before the change:\n", test_method_label(test)));
    s.push_str(&fenced("java", test));
    s.push_str(
        "\n\nUpdate the test method so that it matches the new production code. \
         Reply with the complete updated test method in a single ```java code block.",
    );
    s
}

/// System and human messages of the update prompt. Without a sample the
/// example section is left out. Over-budget diffs lose whole hunks from the
/// tail: first the example test diff, then the example production diff, then
/// the production diff itself.
pub fn render_update_prompt(
    p: &str,
    p_new: &str,
    t: &str,
    sample: Option<SampleDiffs<'_>>,
    budget: usize,
) -> (String, String) {
    let mut prod = TrimmableDiff::new(&diff_or_marker(p, p_new));
    let mut sample = sample.map(|s| (TrimmableDiff::new(s.prod_diff_text), TrimmableDiff::new(s.test_diff_text)));
    loop {
        let text = compose(&prod, t, sample.as_ref().map(|(a, b)| (a, b)));
        if text.chars().count() <= budget {
            return (UPDATE_SYSTEM_PROMPT.to_string(), text);
        }
        let dropped = match sample.as_mut() {
            Some((sp, st)) => st.drop_last() || sp.drop_last() || prod.drop_last(),
            None => prod.drop_last(),
        };
        if !dropped {
            return (UPDATE_SYSTEM_PROMPT.to_string(), text);
        }
    }
}

/// Production source around uncovered lines. `first_line` is the line
/// number of the first line of `text` in the coverage report's numbering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSnippet {
    pub text: String,
    pub first_line: usize,
}

const SNIPPET_CONTEXT: usize = 2;

pub fn render_feedback_prompt(kind: FeedbackKind, report: &ValidationReport, source: Option<&SourceSnippet>) -> String {
    let mut s = String::new();
    match kind {
        FeedbackKind::None => {}
        FeedbackKind::CompileError => {
            s.push_str("The updated test does not compile. Compiler output:\n");
            for d in &report.compile_diagnostics {
                s.push_str(d);
                s.push('\n');
            }
            s.push_str("\nFix the compilation errors.");
        }
        FeedbackKind::TestFailure => {
            s.push_str("The updated test compiles but does not pass:\n");
            for t in report.failing_tests() {
                let status = if t.status == TestStatus::Error { "error" } else { "failure" };
                s.push_str(&format!("- {} ({status}): {}\n", t.name, t.message));
            }
            s.push_str("\nFix the test so that it passes against the new production code.");
        }
        FeedbackKind::CoverageGap => {
            let lines = report.uncovered_lines();
            let numbers: Vec<String> = lines.iter().map(|l| l.line.to_string()).collect();
            s.push_str("The updated test passes but does not execute these changed production lines: ");
            s.push_str(&numbers.join(", "));
            s.push('\n');
            if let Some(src) = source {
                let src_lines: Vec<&str> = src.text.lines().collect();
                let wanted: Vec<usize> = lines
                    .iter()
                    .filter_map(|l| l.line.checked_sub(src.first_line))
                    .filter(|&i| i < src_lines.len())
                    .collect();
                if !wanted.is_empty() {
                    s.push_str("\nProduction code (uncovered lines marked with >):\n```java\n");
                    let mut shown = vec![false; src_lines.len()];
                    for &i in &wanted {
                        let lo = i.saturating_sub(SNIPPET_CONTEXT);
                        let hi = (i + SNIPPET_CONTEXT).min(src_lines.len() - 1);
                        shown[lo..=hi].iter_mut().for_each(|b| *b = true);
                    }
                    let mut gap = false;
                    for (i, line) in src_lines.iter().enumerate() {
                        if !shown[i] {
                            gap = true;
                            continue;
                        }
                        if gap {
                            s.push_str("  ...\n");
                            gap = false;
                        }
                        let mark = if wanted.contains(&i) { '>' } else { ' ' };
                        s.push_str(&format!("{mark} {line}\n"));
                    }
                    s.push_str("```\n");
                }
            }
            s.push_str("\nExtend the test so that it exercises the changed lines.");
        }
    }
    if kind != FeedbackKind::None {
        s.push_str(" Reply with the complete updated test method in a single ```java code block.");
    }
    s
}
