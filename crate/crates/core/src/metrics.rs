//! Classification metrics for identification and gate rates for updating.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::validation::QualityLevel;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("confusion counts are all zero")]
    EmptyCounts,
    #[error("no sessions to score")]
    EmptySessionList,
    #[error("no update session for correctly identified sample {0}")]
    MissingSession(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Tallies `(predicted_positive, actually_positive)` outcomes.
    pub fn tally(outcomes: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = ConfusionCounts::default();
        for (predicted, actual) in outcomes {
            match (predicted, actual) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }
}

/// Ratios; `None` marks a 0/0 cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: Option<f64>,
    pub precision_pos: Option<f64>,
    pub recall_pos: Option<f64>,
    pub f1_pos: Option<f64>,
    pub precision_neg: Option<f64>,
    pub recall_neg: Option<f64>,
    pub f1_neg: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn f1(p: Option<f64>, r: Option<f64>) -> Option<f64> {
    let (p, r) = (p?, r?);
    (p + r > 0.0).then(|| 2.0 * p * r / (p + r))
}

pub fn classification_metrics(c: ConfusionCounts) -> Result<ClassificationMetrics, MetricsError> {
    if c.total() == 0 {
        return Err(MetricsError::EmptyCounts);
    }
    let precision_pos = ratio(c.tp, c.tp + c.fp);
    let recall_pos = ratio(c.tp, c.tp + c.fn_);
    let precision_neg = ratio(c.tn, c.tn + c.fn_);
    let recall_neg = ratio(c.tn, c.tn + c.fp);
    Ok(ClassificationMetrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision_pos,
        recall_pos,
        f1_pos: f1(precision_pos, recall_pos),
        precision_neg,
        recall_neg,
        f1_neg: f1(precision_neg, recall_neg),
    })
}

/// Compile success rate, test pass rate and update coverage rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRates {
    pub csr: f64,
    pub tps: f64,
    pub ucr: f64,
    pub sessions: usize,
}

/// Rates over each session's best level.
pub fn update_metrics(best_levels: &[QualityLevel]) -> Result<UpdateRates, MetricsError> {
    if best_levels.is_empty() {
        return Err(MetricsError::EmptySessionList);
    }
    let n = best_levels.len() as f64;
    let at_least = |gate: QualityLevel| best_levels.iter().filter(|l| **l >= gate).count() as f64 / n;
    Ok(UpdateRates {
        csr: at_least(QualityLevel::TestFailure),
        tps: at_least(QualityLevel::CoverageFailure),
        ucr: at_least(QualityLevel::SatisfiesAll),
        sessions: best_levels.len(),
    })
}

/// Outcome of the update phase for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "best_level", rename_all = "UPPERCASE")]
pub enum SessionStatus {
    Ran(QualityLevel),
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedSample {
    pub sample_id: String,
    pub actual_positive: bool,
    pub predicted_obsolete: bool,
}

/// Share of ground-truth positives that were identified and then updated to
/// full satisfaction. `None` when there are no positives.
pub fn two_phase_accuracy(
    samples: &[JudgedSample],
    sessions: &HashMap<String, SessionStatus>,
) -> Result<Option<f64>, MetricsError> {
    let mut positives = 0u64;
    let mut hits = 0u64;
    for s in samples.iter().filter(|s| s.actual_positive) {
        positives += 1;
        if !s.predicted_obsolete {
            continue;
        }
        match sessions.get(&s.sample_id) {
            None => return Err(MetricsError::MissingSession(s.sample_id.clone())),
            Some(SessionStatus::Ran(QualityLevel::SatisfiesAll)) => hits += 1,
            Some(_) => {}
        }
    }
    Ok(ratio(hits, positives))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectRow {
    pub project: String,
    pub sessions: usize,
    pub skipped: usize,
    pub csr: Option<f64>,
    pub tps: Option<f64>,
    pub ucr: Option<f64>,
}

/// One row per project in name order, then a macro-average row over the
/// projects that have scored sessions.
pub fn per_project_rows<'a>(sessions: impl IntoIterator<Item = (&'a str, SessionStatus)>) -> Vec<ProjectRow> {
    let mut by_project: BTreeMap<&str, (Vec<QualityLevel>, usize)> = BTreeMap::new();
    for (project, status) in sessions {
        let slot = by_project.entry(project).or_default();
        match status {
            SessionStatus::Ran(level) => slot.0.push(level),
            SessionStatus::Skipped => slot.1 += 1,
        }
    }
    let mut rows: Vec<ProjectRow> = by_project
        .into_iter()
        .map(|(project, (levels, skipped))| {
            let rates = update_metrics(&levels).ok();
            ProjectRow {
                project: project.to_string(),
                sessions: levels.len(),
                skipped,
                csr: rates.map(|r| r.csr),
                tps: rates.map(|r| r.tps),
                ucr: rates.map(|r| r.ucr),
            }
        })
        .collect();
    let scored: Vec<&ProjectRow> = rows.iter().filter(|r| r.sessions > 0).collect();
    let mean = |f: fn(&ProjectRow) -> Option<f64>| {
        let vals: Vec<f64> = scored.iter().filter_map(|r| f(r)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let avg = ProjectRow {
        project: "macro-average".to_string(),
        sessions: rows.iter().map(|r| r.sessions).sum(),
        skipped: rows.iter().map(|r| r.skipped).sum(),
        csr: mean(|r| r.csr),
        tps: mean(|r| r.tps),
        ucr: mean(|r| r.ucr),
    };
    if !rows.is_empty() {
        rows.push(avg);
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: Option<ConfusionCounts>,
    pub classification: Option<ClassificationMetrics>,
    pub update: Option<UpdateRates>,
    pub skipped_sessions: usize,
    pub two_phase_accuracy: Option<f64>,
    pub per_project: Vec<ProjectRow>,
}

pub fn format_ratio(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{:.2}%", x * 100.0),
        None => "n/a".to_string(),
    }
}

fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            let pad = w - c.chars().count();
            if i == 0 {
                let _ = write!(s, "{c}{}", " ".repeat(pad));
            } else {
                let _ = write!(s, "  {}{c}", " ".repeat(pad));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(headers.to_vec());
    out.push_str(&line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect()));
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

impl MetricsReport {
    /// Aligned plain-text rendering.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        if let (Some(c), Some(m)) = (self.counts, self.classification) {
            out.push_str("Identification\n");
            let _ = writeln!(out, "TP={} FP={} TN={} FN={}", c.tp, c.fp, c.tn, c.fn_);
            out.push_str(&table(
                &["class", "precision", "recall", "f1"],
                &[
                    vec!["obsolete".into(), format_ratio(m.precision_pos), format_ratio(m.recall_pos), format_ratio(m.f1_pos)],
                    vec!["not obsolete".into(), format_ratio(m.precision_neg), format_ratio(m.recall_neg), format_ratio(m.f1_neg)],
                ],
            ));
            let _ = writeln!(out, "accuracy {}\n", format_ratio(m.accuracy));
        }
        if !self.per_project.is_empty() {
            out.push_str("Update\n");
            let rows: Vec<Vec<String>> = self
                .per_project
                .iter()
                .map(|r| {
                    vec![
                        r.project.clone(),
                        r.sessions.to_string(),
                        r.skipped.to_string(),
                        format_ratio(r.csr),
                        format_ratio(r.tps),
                        format_ratio(r.ucr),
                    ]
                })
                .collect();
            out.push_str(&table(&["project", "sessions", "skipped", "CSR", "TPS", "UCR"], &rows));
            out.push('\n');
        }
        let _ = writeln!(out, "two-phase accuracy {}", format_ratio(self.two_phase_accuracy));
        out
    }
}
