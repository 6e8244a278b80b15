//! Line-coverage reports (JaCoCo-style XML and LCOV) and the coverage gate.

use std::collections::{BTreeMap, BTreeSet};

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Covered flag per file and 1-based line.
pub type LineCoverage = BTreeMap<String, BTreeMap<usize, bool>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CoverageFormat {
    XmlLineReport,
    LcovText,
}

impl std::str::FromStr for CoverageFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "xml" | "jacoco" | "xml_line_report" => Ok(CoverageFormat::XmlLineReport),
            "lcov" | "lcov_text" => Ok(CoverageFormat::LcovText),
            other => Err(format!("unknown coverage format {other:?} (expected xml or lcov)")),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("malformed coverage report at byte {offset}: {message}")]
pub struct MalformedReport {
    pub offset: usize,
    pub message: String,
}

fn malformed(offset: usize, message: impl Into<String>) -> MalformedReport {
    MalformedReport {
        offset,
        message: message.into(),
    }
}

pub fn parse_coverage_report(bytes: &[u8], format: CoverageFormat) -> Result<LineCoverage, MalformedReport> {
    match format {
        CoverageFormat::XmlLineReport => parse_xml(bytes),
        CoverageFormat::LcovText => parse_lcov(bytes),
    }
}

fn attr(e: &BytesStart<'_>, name: &[u8], offset: usize) -> Result<Option<String>, MalformedReport> {
    for a in e.attributes() {
        let a = a.map_err(|err| malformed(offset, err.to_string()))?;
        if a.key.as_ref() == name {
            let v = a
                .unescape_value()
                .map_err(|err| malformed(offset, err.to_string()))?;
            return Ok(Some(v.into_owned()));
        }
    }
    Ok(None)
}

fn parse_xml(bytes: &[u8]) -> Result<LineCoverage, MalformedReport> {
    let mut reader = Reader::from_reader(bytes);
    reader.config_mut().trim_text(true);
    let mut buf = Vec::new();
    let mut out = LineCoverage::new();
    let mut package = String::new();
    let mut source: Option<String> = None;
    let mut depth_open = 0usize;

    loop {
        let offset = reader.buffer_position() as usize;
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| malformed(offset, e.to_string()))?;
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let empty = matches!(event, Event::Empty(_));
                if !empty {
                    depth_open += 1;
                }
                match e.name().as_ref() {
                    b"package" if !empty => {
                        package = attr(e, b"name", offset)?.unwrap_or_default();
                    }
                    b"sourcefile" if !empty => {
                        let name = attr(e, b"name", offset)?
                            .ok_or_else(|| malformed(offset, "sourcefile without name"))?;
                        source = Some(if package.is_empty() {
                            name
                        } else {
                            format!("{package}/{name}")
                        });
                    }
                    b"line" => {
                        let Some(file) = &source else {
                            return Err(malformed(offset, "line element outside a sourcefile"));
                        };
                        let nr = attr(e, b"nr", offset)?
                            .ok_or_else(|| malformed(offset, "line without nr"))?;
                        let ci = attr(e, b"ci", offset)?
                            .ok_or_else(|| malformed(offset, "line without ci"))?;
                        let nr: usize = nr
                            .parse()
                            .map_err(|_| malformed(offset, format!("bad line number {nr:?}")))?;
                        let ci: u64 = ci
                            .parse()
                            .map_err(|_| malformed(offset, format!("bad ci count {ci:?}")))?;
                        let slot = out.entry(file.clone()).or_default().entry(nr).or_insert(false);
                        *slot |= ci > 0;
                    }
                    _ => {}
                }
            }
            Event::End(ref e) => {
                depth_open = depth_open
                    .checked_sub(1)
                    .ok_or_else(|| malformed(offset, "unbalanced end tag"))?;
                match e.name().as_ref() {
                    b"sourcefile" => source = None,
                    b"package" => package.clear(),
                    _ => {}
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if depth_open != 0 {
        return Err(malformed(bytes.len(), "unexpected end of document"));
    }
    Ok(out)
}

fn parse_lcov(bytes: &[u8]) -> Result<LineCoverage, MalformedReport> {
    let text = std::str::from_utf8(bytes).map_err(|e| malformed(e.valid_up_to(), "report is not UTF-8"))?;
    let mut out = LineCoverage::new();
    let mut file: Option<String> = None;
    let mut offset = 0usize;

    for raw in text.split_inclusive('\n') {
        let line = raw.trim();
        if let Some(path) = line.strip_prefix("SF:") {
            file = Some(path.to_string());
            out.entry(path.to_string()).or_default();
        } else if let Some(rest) = line.strip_prefix("DA:") {
            let Some(f) = &file else {
                return Err(malformed(offset, "DA record outside a SF section"));
            };
            let mut parts = rest.split(',');
            let nr = parts
                .next()
                .and_then(|n| n.trim().parse::<usize>().ok())
                .ok_or_else(|| malformed(offset, format!("bad DA record {line:?}")))?;
            let count = parts
                .next()
                .and_then(|c| c.trim().parse::<i64>().ok())
                .ok_or_else(|| malformed(offset, format!("bad DA record {line:?}")))?;
            let slot = out.entry(f.clone()).or_default().entry(nr).or_insert(false);
            *slot |= count > 0;
        } else if line == "end_of_record" {
            file = None;
        }
        offset += raw.len();
    }
    Ok(out)
}

/// A file/line location, with paths relative to a source root.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LineRef {
    pub file: String,
    pub line: usize,
}

impl LineRef {
    pub fn new(file: impl Into<String>, line: usize) -> Self {
        LineRef {
            file: file.into(),
            line,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoverageMode {
    /// Every required line must be covered.
    #[default]
    All,
    /// At least one required line must be covered.
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CoverageVerdict {
    Covered,
    Gap(Vec<LineRef>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub per_line: LineCoverage,
    pub required_lines: BTreeSet<LineRef>,
    pub verdict: CoverageVerdict,
}

fn paths_match(a: &str, b: &str) -> bool {
    a == b || a.ends_with(&format!("/{b}")) || b.ends_with(&format!("/{a}"))
}

/// Covered flag of `at`; report paths match when one is a path suffix of the other.
pub fn is_covered(per_line: &LineCoverage, at: &LineRef) -> bool {
    per_line
        .iter()
        .filter(|(file, _)| paths_match(file, &at.file))
        .any(|(_, lines)| lines.get(&at.line).copied().unwrap_or(false))
}

impl CoverageRecord {
    pub fn evaluate(per_line: LineCoverage, required_lines: BTreeSet<LineRef>, mode: CoverageMode) -> Self {
        let uncovered: Vec<LineRef> = required_lines
            .iter()
            .filter(|r| !is_covered(&per_line, r))
            .cloned()
            .collect();
        let ok = match mode {
            CoverageMode::All => uncovered.is_empty(),
            CoverageMode::Any => required_lines.is_empty() || uncovered.len() < required_lines.len(),
        };
        let verdict = if ok {
            CoverageVerdict::Covered
        } else {
            CoverageVerdict::Gap(uncovered)
        };
        CoverageRecord {
            per_line,
            required_lines,
            verdict,
        }
    }

    pub fn is_covered(&self) -> bool {
        self.verdict == CoverageVerdict::Covered
    }
}

/// True for lines that can carry a statement: not blank, not only a comment,
/// and not only braces or other closing punctuation.
pub fn is_executable_line(line: &str) -> bool {
    let t = line.trim();
    if t.is_empty() {
        return false;
    }
    if t.starts_with("//") || t.starts_with("/*") || t.starts_with('*') {
        return false;
    }
    !t.chars().all(|c| matches!(c, '{' | '}' | '(' | ')' | ';' | ',') || c.is_whitespace())
}
