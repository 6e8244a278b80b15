//! Obsolete-test identification with learned experience rules.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::changemining::{ChangePair, Label};
use crate::llmgateway::{ChatTurn, ConversationMemory, Gateway, GatewayError};
use crate::updater::{diff_or_marker, fit_diff, test_method_label};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExperienceKind {
    AbstractionLevel,
    ParameterIndependence,
    ConsistencyProduction,
}

impl ExperienceKind {
    pub const ALL: [ExperienceKind; 3] = [
        ExperienceKind::AbstractionLevel,
        ExperienceKind::ParameterIndependence,
        ExperienceKind::ConsistencyProduction,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ExperienceKind::AbstractionLevel => "AL",
            ExperienceKind::ParameterIndependence => "PI",
            ExperienceKind::ConsistencyProduction => "CP",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ExperienceKind::AbstractionLevel => "Abstraction level",
            ExperienceKind::ParameterIndependence => "Parameter independence",
            ExperienceKind::ConsistencyProduction => "Consistency with production changes",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        ExperienceKind::ALL.into_iter().find(|k| k.tag().eq_ignore_ascii_case(tag))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Experience {
    pub experience_id: String,
    pub kind: ExperienceKind,
    pub statement: String,
    pub round: usize,
}

pub const EXPERIENCES_FILE: &str = "experiences.json";

pub fn save_experiences(path: &Path, experiences: &[Experience]) -> std::io::Result<()> {
    crate::fsutil::write_json(path, &experiences)
}

pub fn load_experiences(path: &Path) -> std::io::Result<Vec<Experience>> {
    crate::fsutil::read_json(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Obsolete,
    NotObsolete,
}

impl Decision {
    pub fn is_obsolete(self) -> bool {
        self == Decision::Obsolete
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentificationVerdict {
    pub decision: Decision,
    pub explanation: String,
    pub rendered_prompt: String,
    pub raw_reply: String,
}

#[derive(Debug, Error)]
pub enum IdentifyError {
    #[error("need at least 2 positive and 2 negative samples, got {positive} and {negative}")]
    InsufficientSamples { positive: usize, negative: usize },
    #[error("no experiences given")]
    NoExperiences,
    #[error("reply lacks experiences of kind {0:?}")]
    IncompleteExperiences(Vec<ExperienceKind>),
    #[error("reply does not end with a verdict line: {reply:?}")]
    UnparseableVerdict { reply: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub const IDENTIFY_SYSTEM_PROMPT: &str = "You are an expert in software testing who reviews whether unit tests \
must change when the production code they exercise changes. Judge carefully and follow the required output format.";

const LEARN_SYSTEM_PROMPT: &str = "You are an expert in software testing. You study historical production and \
test changes and distil general rules that tell when a test becomes obsolete after a production change.";

const VERDICT_INSTRUCTION: &str = "End your reply with a final line that is exactly `VERDICT: YES` if the test must \
be updated, or `VERDICT: NO` if it does not.";

const REPROMPT: &str = "Your reply did not end with the required final line. Answer again and end with a final line \
that is exactly `VERDICT: YES` or `VERDICT: NO`.";

/// Per-diff character cap inside learning prompts.
const LEARN_DIFF_CHARS: usize = 1_500;
/// Samples shown per learning round.
pub const DEFAULT_LEARN_EXAMPLES: usize = 12;

fn fenced(lang: &str, body: &str) -> String {
    format!("```{lang}\n{}\n```", body.trim_end_matches('\n'))
}

/// System and human messages of the identification prompt.
pub fn render_identification_prompt(p: &str, p_new: &str, t: &str, experiences: &[Experience]) -> (String, String) {
    let mut s = String::new();
    s.push_str("The production method changed as follows:\n");
    s.push_str(&fenced("diff", &diff_or_marker(p, p_new)));
    s.push_str(&format!("\n\nThe {} that exercises it:\n", test_method_label(t)));
    s.push_str(&fenced("java", t));
    s.push_str("\n\nUse these experiences when judging:\n");
    for (i, e) in experiences.iter().enumerate() {
        let _ = writeln!(s, "{}. [{}] {}", i + 1, e.kind.title(), e.statement);
    }
    s.push_str("\nDoes the test have to be updated because of this production change? Explain briefly. ");
    s.push_str(VERDICT_INSTRUCTION);
    (IDENTIFY_SYSTEM_PROMPT.to_string(), s)
}

fn verdict_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^VERDICT:\s*(YES|NO)$").unwrap())
}

/// Decision from the final non-empty line, plus the text before it.
pub fn parse_verdict(reply: &str) -> Option<(Decision, String)> {
    let lines: Vec<&str> = reply.lines().collect();
    let last = lines.iter().rposition(|l| !l.trim().is_empty())?;
    let caps = verdict_re().captures(lines[last].trim())?;
    let decision = if caps[1].eq_ignore_ascii_case("yes") { Decision::Obsolete } else { Decision::NotObsolete };
    Some((decision, lines[..last].join("\n").trim().to_string()))
}

/// Judges whether `t` is obsolete after `p` became `p_new`. An unparseable
/// reply gets one reprompt in the same conversation.
pub fn identify(
    p: &str,
    p_new: &str,
    t: &str,
    experiences: &[Experience],
    gateway: &Gateway,
    run_key: &str,
    window: usize,
) -> Result<IdentificationVerdict, IdentifyError> {
    if experiences.is_empty() {
        return Err(IdentifyError::NoExperiences);
    }
    let (system, human) = render_identification_prompt(p, p_new, t, experiences);
    let mut memory = ConversationMemory::new(window, Some(system));
    let mut reply = gateway.send(run_key, &mut memory, ChatTurn::human(human.clone()))?;
    if parse_verdict(&reply.content).is_none() {
        reply = gateway.send(run_key, &mut memory, ChatTurn::human(REPROMPT))?;
    }
    match parse_verdict(&reply.content) {
        Some((decision, explanation)) => Ok(IdentificationVerdict {
            decision,
            explanation,
            rendered_prompt: human,
            raw_reply: reply.content,
        }),
        None => Err(IdentifyError::UnparseableVerdict { reply: reply.content }),
    }
}

/// Convenience wrapper over [`identify`] for a mined pair.
pub fn identify_pair(
    pair: &ChangePair,
    experiences: &[Experience],
    gateway: &Gateway,
    window: usize,
) -> Result<IdentificationVerdict, IdentifyError> {
    let run_key = format!("identify:{}", pair.sample_id());
    identify(&pair.prod_old, &pair.prod_new, &pair.test_old, experiences, gateway, &run_key, window)
}

fn tagged_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*(?:[-*]|\d+[.)])?\s*\**\s*(AL|PI|CP)\s*\**\s*[:\-]\s*(.*)$").unwrap())
}

/// Experiences from lines tagged `AL:`, `PI:` or `CP:`. Untagged lines that
/// follow a tagged line continue its statement until a blank line.
pub fn parse_experiences(reply: &str, round: usize) -> Vec<Experience> {
    let mut found: Vec<(ExperienceKind, String)> = Vec::new();
    let mut open = false;
    for line in reply.lines() {
        if let Some(c) = tagged_line_re().captures(line) {
            let kind = ExperienceKind::from_tag(&c[1]).expect("regex only admits known tags");
            found.push((kind, c[2].trim().to_string()));
            open = true;
        } else if line.trim().is_empty() {
            open = false;
        } else if open {
            let last = &mut found.last_mut().expect("open implies an entry").1;
            if !last.is_empty() {
                last.push(' ');
            }
            last.push_str(line.trim());
        }
    }
    let mut counts = [0usize; 3];
    found
        .into_iter()
        .filter(|(_, s)| !s.is_empty())
        .map(|(kind, statement)| {
            let idx = ExperienceKind::ALL.iter().position(|k| *k == kind).unwrap();
            counts[idx] += 1;
            Experience {
                experience_id: format!("{}-{}", kind.tag(), counts[idx]),
                kind,
                statement,
                round,
            }
        })
        .collect()
}

fn missing_kinds(experiences: &[Experience]) -> Vec<ExperienceKind> {
    ExperienceKind::ALL
        .into_iter()
        .filter(|k| !experiences.iter().any(|e| e.kind == *k))
        .collect()
}

/// Alternates positive and negative samples, up to `limit` in total.
fn learning_examples(pairs: &[ChangePair], limit: usize) -> Vec<&ChangePair> {
    let pos: Vec<_> = pairs.iter().filter(|p| p.label == Label::Positive).collect();
    let neg: Vec<_> = pairs.iter().filter(|p| p.label == Label::Negative).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while out.len() < limit && (i < pos.len() || i < neg.len()) {
        for side in [&pos, &neg] {
            if let Some(p) = side.get(i) {
                if out.len() < limit {
                    out.push(*p);
                }
            }
        }
        i += 1;
    }
    out
}

fn render_examples(examples: &[&ChangePair]) -> String {
    let mut s = String::new();
    for (i, p) in examples.iter().enumerate() {
        let updated = if p.label == Label::Positive { "YES" } else { "NO" };
        let _ = write!(
            s,
            "Sample {}:\nProduction change:\n{}\nTest before the change:\n{}\nTest had to be updated: {updated}\n\n",
            i + 1,
            fenced("diff", &fit_diff(&diff_or_marker(&p.prod_old, &p.prod_new), LEARN_DIFF_CHARS)),
            fenced("java", &p.test_old),
        );
    }
    s
}

const RULE_FORMAT: &str = "Write one rule per line, each starting with its tag: `AL:` for the abstraction level of \
the production change, `PI:` for whether the test depends on the changed parameters, and `CP:` for consistency \
between the production change and what the test exercises. Give at least one rule per tag.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnOutput {
    pub experiences: Vec<Experience>,
    /// Experience set after each round.
    pub rounds: Vec<Vec<Experience>>,
}

#[derive(Debug, Clone, Copy)]
pub struct LearnOptions {
    pub max_rounds: usize,
    pub examples: usize,
    pub window: usize,
}

impl Default for LearnOptions {
    fn default() -> Self {
        LearnOptions {
            max_rounds: 2,
            examples: DEFAULT_LEARN_EXAMPLES,
            window: ConversationMemory::DEFAULT_WINDOW,
        }
    }
}

/// Distils experience rules from labelled training pairs. Each round after
/// the first shows the current rules and asks for a revised set; kinds the
/// revision leaves out keep their previous statements.
pub fn learn_experience(pairs: &[ChangePair], gateway: &Gateway, options: LearnOptions) -> Result<LearnOutput, IdentifyError> {
    let positive = pairs.iter().filter(|p| p.label == Label::Positive).count();
    let negative = pairs.iter().filter(|p| p.label == Label::Negative).count();
    if positive < 2 || negative < 2 {
        return Err(IdentifyError::InsufficientSamples { positive, negative });
    }
    let examples = learning_examples(pairs, options.examples.max(4));
    let examples_text = render_examples(&examples);
    let mut memory = ConversationMemory::new(options.window, Some(LEARN_SYSTEM_PROMPT.to_string()));
    let mut rounds: Vec<Vec<Experience>> = Vec::new();

    for round in 1..=options.max_rounds.max(1) {
        let prompt = match rounds.last() {
            None => format!(
                "{examples_text}Derive general rules that decide whether a test must be updated after a production change. {RULE_FORMAT}"
            ),
            Some(current) => {
                let mut s = String::from("These are the current rules:\n");
                for e in current {
                    let _ = writeln!(s, "{}: {}", e.kind.tag(), e.statement);
                }
                let _ = write!(
                    s,
                    "\nCheck them against the samples again and revise them so that they classify every sample correctly. {RULE_FORMAT}"
                );
                s
            }
        };
        let reply = gateway.send("learn", &mut memory, ChatTurn::human(prompt))?;
        let parsed = parse_experiences(&reply.content, round);
        let next = match rounds.last() {
            None => {
                let missing = missing_kinds(&parsed);
                if !missing.is_empty() {
                    return Err(IdentifyError::IncompleteExperiences(missing));
                }
                parsed
            }
            Some(prev) => {
                let mut merged = parsed;
                for kind in missing_kinds(&merged) {
                    merged.extend(prev.iter().filter(|e| e.kind == kind).cloned());
                }
                merged.sort_by_key(|e| ExperienceKind::ALL.iter().position(|k| *k == e.kind));
                merged
            }
        };
        rounds.push(next);
    }
    Ok(LearnOutput {
        experiences: rounds.last().cloned().unwrap_or_default(),
        rounds,
    })
}
