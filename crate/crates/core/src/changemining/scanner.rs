//! Brace/signature scanner for Java-like sources.
//!
//! Comments and literal contents are blanked out first so braces inside them
//! never count. Methods are identified by name and parameter arity.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodSpan {
    pub name: String,
    pub arity: usize,
    /// Simple name of the enclosing class (empty for bare snippets).
    pub class: String,
    /// 1-based line of the first header token (annotations included).
    pub start_line: usize,
    /// Byte range of the method in the scanned source.
    pub span: std::ops::Range<usize>,
    /// Method source with the header's indentation removed from every line.
    pub text: String,
}

impl MethodSpan {
    pub fn key(&self) -> (String, usize) {
        (self.name.clone(), self.arity)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScanError {
    #[error("unterminated comment starting at line {0}")]
    UnterminatedComment(usize),
    #[error("unterminated literal starting at line {0}")]
    UnterminatedLiteral(usize),
    #[error("unbalanced closing brace at line {0}")]
    UnexpectedClose(usize),
    #[error("{0} unclosed brace(s) at end of input")]
    Unclosed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScopeKind {
    Class,
    /// A class declared inside a method body; its members are not collected.
    LocalClass,
    Method,
    Other,
}

struct Scope {
    kind: ScopeKind,
    class_name: String,
    start: usize,
    method: Option<(String, usize)>,
}

const KEYWORDS: &[&str] = &[
    "if", "for", "while", "switch", "catch", "synchronized", "try", "else", "do", "return",
    "new", "throw", "case", "finally", "assert",
];

fn class_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(?:class|interface|enum|record)\s+([A-Za-z_$][\w$]*)").unwrap())
}

fn method_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"([A-Za-z_$][\w$]*)\s*\(((?:[^()]|\([^()]*\))*)\)\s*(?:throws\s+[\w$.,\s<>]+)?$",
        )
        .unwrap()
    })
}

/// Source with comments and literal contents replaced by spaces. Newlines and
/// byte offsets are preserved.
pub fn sanitize(source: &str) -> Result<String, ScanError> {
    let bytes = source.as_bytes();
    let mut out = bytes.to_vec();
    let mut line = 1usize;
    let mut i = 0usize;

    let blank = |out: &mut Vec<u8>, from: usize, to: usize| {
        for b in &mut out[from..to] {
            if *b != b'\n' {
                *b = b' ';
            }
        }
    };

    while i < bytes.len() {
        match bytes[i] {
            b'\n' => {
                line += 1;
                i += 1;
            }
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                let end = bytes[i..]
                    .iter()
                    .position(|&b| b == b'\n')
                    .map_or(bytes.len(), |p| i + p);
                blank(&mut out, i, end);
                i = end;
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                let start_line = line;
                let rest = &source[i + 2..];
                let Some(p) = rest.find("*/") else {
                    return Err(ScanError::UnterminatedComment(start_line));
                };
                let end = i + 2 + p + 2;
                line += source[i..end].matches('\n').count();
                blank(&mut out, i, end);
                i = end;
            }
            b'"' if source[i..].starts_with("\"\"\"") => {
                let start_line = line;
                let Some(p) = source[i + 3..].find("\"\"\"") else {
                    return Err(ScanError::UnterminatedLiteral(start_line));
                };
                let end = i + 3 + p + 3;
                line += source[i..end].matches('\n').count();
                blank(&mut out, i + 1, end - 1);
                i = end;
            }
            q @ (b'"' | b'\'') => {
                let start_line = line;
                let mut j = i + 1;
                loop {
                    match bytes.get(j) {
                        None | Some(b'\n') => return Err(ScanError::UnterminatedLiteral(start_line)),
                        Some(b'\\') => j += 2,
                        Some(&b) if b == q => break,
                        Some(_) => j += 1,
                    }
                }
                blank(&mut out, i + 1, j);
                i = j + 1;
            }
            _ => i += 1,
        }
    }
    // Only ASCII bytes inside literals/comments were touched wholesale, and
    // every multi-byte sequence was either kept or fully blanked.
    Ok(String::from_utf8(out).expect("sanitizing keeps UTF-8 validity"))
}

fn arity(params: &str) -> usize {
    if params.trim().is_empty() {
        return 0;
    }
    let mut depth = 0i32;
    let mut count = 1;
    for c in params.chars() {
        match c {
            '<' | '(' | '[' => depth += 1,
            '>' | ')' | ']' => depth -= 1,
            ',' if depth == 0 => count += 1,
            _ => {}
        }
    }
    count
}

fn classify(header: &str, parent: Option<&Scope>, top_is_class: bool) -> (ScopeKind, String, Option<(String, usize)>) {
    let parent_kind = parent.map(|p| p.kind);
    let in_class = match parent_kind {
        Some(ScopeKind::Class) => true,
        None => top_is_class,
        _ => false,
    };
    let parent_class = parent.map(|p| p.class_name.clone()).unwrap_or_default();

    if let Some(c) = class_re().captures(header) {
        if !header.contains("new ") {
            let kind = if in_class || parent_kind.is_none() {
                ScopeKind::Class
            } else {
                ScopeKind::LocalClass
            };
            return (kind, c[1].to_string(), None);
        }
    }
    if in_class && !header.contains('=') && !header.split_whitespace().any(|w| w == "new") {
        if let Some(c) = method_re().captures(header) {
            let name = &c[1];
            if !KEYWORDS.contains(&name) {
                return (
                    ScopeKind::Method,
                    parent_class,
                    Some((name.to_string(), arity(&c[2]))),
                );
            }
        }
    }
    (ScopeKind::Other, parent_class, None)
}

fn scan(source: &str, top_is_class: bool) -> Result<Vec<MethodSpan>, ScanError> {
    let clean = sanitize(source)?;
    let bytes = clean.as_bytes();
    let mut stack: Vec<Scope> = Vec::new();
    let mut methods = Vec::new();
    let mut seg_start = 0usize;
    let mut paren = 0i32;
    let mut line = 1usize;

    for (i, &b) in bytes.iter().enumerate() {
        match b {
            b'\n' => line += 1,
            b'(' => paren += 1,
            b')' => paren -= 1,
            b';' if paren <= 0 => seg_start = i + 1,
            b'{' if paren <= 0 => {
                let header_region = &clean[seg_start..i];
                let lead = header_region.len() - header_region.trim_start().len();
                let start = seg_start + lead;
                let (kind, class_name, method) =
                    classify(header_region.trim(), stack.last(), top_is_class);
                stack.push(Scope {
                    kind,
                    class_name,
                    start,
                    method,
                });
                seg_start = i + 1;
            }
            b'}' if paren <= 0 => {
                let Some(scope) = stack.pop() else {
                    return Err(ScanError::UnexpectedClose(line));
                };
                if let (ScopeKind::Method, Some((name, arity))) = (scope.kind, scope.method) {
                    methods.push(MethodSpan {
                        name,
                        arity,
                        class: scope.class_name,
                        start_line: 1 + source[..scope.start].matches('\n').count(),
                        span: scope.start..i + 1,
                        text: method_text(source, scope.start, i),
                    });
                }
                seg_start = i + 1;
            }
            _ => {}
        }
    }
    if !stack.is_empty() {
        return Err(ScanError::Unclosed(stack.len()));
    }
    methods.sort_by_key(|m| m.start_line);
    Ok(methods)
}

/// Source of a method from its header to the closing brace plus a newline,
/// with the header's indentation removed from every line.
fn method_text(source: &str, start: usize, end: usize) -> String {
    let line_start = source[..start].rfind('\n').map_or(0, |p| p + 1);
    let indent = &source[line_start..start];
    let mut text: String = if indent.chars().all(|c| c == ' ' || c == '\t') {
        source[line_start..=end]
            .split_inclusive('\n')
            .map(|l| l.strip_prefix(indent).unwrap_or_else(|| l.trim_start_matches([' ', '\t'])))
            .collect()
    } else {
        source[start..=end].to_string()
    };
    text.push('\n');
    text
}

/// Methods with bodies declared in class scopes of a compilation unit.
pub fn scan_methods(source: &str) -> Result<Vec<MethodSpan>, ScanError> {
    scan(source, false)
}

/// Methods of a bare member snippet (no enclosing class declaration).
pub fn scan_snippet(snippet: &str) -> Result<Vec<MethodSpan>, ScanError> {
    scan(snippet, true)
}

/// Name and arity of the first method in a snippet.
pub fn signature_of(snippet: &str) -> Option<(String, usize)> {
    scan_snippet(snippet).ok()?.into_iter().next().map(|m| m.key())
}
