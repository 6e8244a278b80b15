use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::coverage::{parse_coverage_report, CoverageFormat, CoverageMode, CoverageRecord, LineCoverage, LineRef};
use super::{TestResult, TestStatus, ValidationAdapter, ValidationContext, ValidationError, ValidationReport};

/// One scripted validation result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedOutcome {
    /// `"pass"` (all required lines covered) or `"no_coverage"`.
    Keyword(String),
    CompileError { compile_error: Vec<String> },
    TestFailure { test_failure: Vec<String> },
    CoveredLines { covered_lines: Vec<(String, usize)> },
    CoverageReport { coverage_report: ReportSpec },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSpec {
    pub format: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatorRule {
    /// Prefix of the run key; empty matches every run.
    #[serde(default)]
    pub run: String,
    /// Substring of the candidate test.
    pub when: String,
    pub outcome: ScriptedOutcome,
}

/// Outcomes keyed like chat transcripts: exact run key, then `prefix*`,
/// then the first rule matching the candidate, then the shared queue.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidatorScript {
    pub runs: BTreeMap<String, Vec<ScriptedOutcome>>,
    pub rules: Vec<ValidatorRule>,
    pub shared: Vec<ScriptedOutcome>,
    pub coverage_mode: CoverageMode,
}

impl ValidatorScript {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        crate::fsutil::read_json(path)
    }
}

/// Deterministic adapter that needs no toolchain.
#[derive(Debug)]
pub struct ScriptedValidator {
    queues: Mutex<HashMap<String, VecDeque<ScriptedOutcome>>>,
    shared: Mutex<VecDeque<ScriptedOutcome>>,
    rules: Vec<ValidatorRule>,
    mode: CoverageMode,
}

impl ScriptedValidator {
    pub fn new(script: ValidatorScript) -> Self {
        ScriptedValidator {
            queues: Mutex::new(script.runs.into_iter().map(|(k, v)| (k, v.into())).collect()),
            shared: Mutex::new(script.shared.into()),
            rules: script.rules,
            mode: script.coverage_mode,
        }
    }

    /// Validator that always reports full success.
    pub fn always_pass() -> Self {
        ScriptedValidator::new(ValidatorScript {
            rules: vec![ValidatorRule { run: String::new(), when: String::new(), outcome: ScriptedOutcome::Keyword("pass".into()) }],
            ..ValidatorScript::default()
        })
    }

    fn next(&self, run: &str, candidate: &str) -> Result<ScriptedOutcome, ValidationError> {
        let mut queues = self.queues.lock().expect("validator queue poisoned");
        let key = if queues.contains_key(run) {
            Some(run.to_string())
        } else {
            queues
                .keys()
                .filter_map(|k| k.strip_suffix('*').filter(|p| run.starts_with(p)).map(|p| (p.len(), k)))
                .max_by_key(|(len, _)| *len)
                .map(|(_, k)| k.clone())
        };
        if let Some(key) = key {
            return queues
                .get_mut(&key)
                .and_then(VecDeque::pop_front)
                .ok_or_else(|| ValidationError::Script(format!("no outcome left for run {run}")));
        }
        drop(queues);
        if let Some(rule) = self.rules.iter().find(|r| run.starts_with(&r.run) && candidate.contains(&r.when)) {
            return Ok(rule.outcome.clone());
        }
        self.shared
            .lock()
            .expect("validator queue poisoned")
            .pop_front()
            .ok_or_else(|| ValidationError::Script(format!("no outcome left for run {run}")))
    }

    fn report(&self, ctx: &ValidationContext, outcome: ScriptedOutcome) -> Result<ValidationReport, ValidationError> {
        let test_name = ctx.target.display_name();
        let passing = || {
            vec![TestResult {
                name: test_name.clone(),
                status: TestStatus::Pass,
                message: String::new(),
            }]
        };
        let mode = self.mode;
        let required = ctx.required_lines.clone();
        let record = move |per_line: LineCoverage| Ok(CoverageRecord::evaluate(per_line, required, mode));
        match outcome {
            ScriptedOutcome::Keyword(k) => match k.as_str() {
                "pass" => {
                    let mut per_line = LineCoverage::new();
                    for r in &ctx.required_lines {
                        per_line.entry(r.file.clone()).or_default().insert(r.line, true);
                    }
                    ValidationReport::after_tests(passing(), || record(per_line))
                }
                "no_coverage" => ValidationReport::after_tests(passing(), || record(LineCoverage::new())),
                other => Err(ValidationError::Script(format!("unknown outcome keyword {other:?}"))),
            },
            ScriptedOutcome::CompileError { compile_error } => Ok(ValidationReport::compile_failed(compile_error)),
            ScriptedOutcome::TestFailure { test_failure } => {
                let results = test_failure
                    .into_iter()
                    .map(|message| TestResult {
                        name: test_name.clone(),
                        status: TestStatus::Fail,
                        message,
                    })
                    .collect();
                ValidationReport::after_tests(results, || unreachable!("failing tests skip coverage"))
            }
            ScriptedOutcome::CoveredLines { covered_lines } => {
                let mut per_line = LineCoverage::new();
                for r in &ctx.required_lines {
                    per_line.entry(r.file.clone()).or_default().insert(r.line, false);
                }
                let covered: BTreeSet<LineRef> = covered_lines.into_iter().map(|(f, l)| LineRef::new(f, l)).collect();
                for r in covered {
                    per_line.entry(r.file).or_default().insert(r.line, true);
                }
                ValidationReport::after_tests(passing(), || record(per_line))
            }
            ScriptedOutcome::CoverageReport { coverage_report } => {
                let format: CoverageFormat = coverage_report.format.parse().map_err(ValidationError::Script)?;
                let per_line = parse_coverage_report(coverage_report.content.as_bytes(), format)?;
                ValidationReport::after_tests(passing(), || record(per_line))
            }
        }
    }
}

impl ValidationAdapter for ScriptedValidator {
    fn validate(&self, ctx: &ValidationContext, candidate_test: &str) -> Result<ValidationReport, ValidationError> {
        let outcome = self.next(&ctx.run_key, candidate_test)?;
        self.report(ctx, outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validation::{QualityLevel, TestTarget};
    use serde_json::json;

    fn ctx(run: &str) -> ValidationContext {
        ValidationContext {
            run_key: run.into(),
            workspace: None,
            target: TestTarget {
                module: String::new(),
                package: "p".into(),
                class: "ATest".into(),
                method: "t".into(),
                arity: 0,
            },
            required_lines: [LineRef::new("p/A.java", 3), LineRef::new("p/A.java", 4)].into(),
        }
    }

    #[test]
    fn scripted_ladder() {
        let script: ValidatorScript = serde_json::from_value(json!({
            "runs": {"update:s*": [
                {"compile_error": ["cannot find symbol"]},
                {"test_failure": ["a must be less than b"]},
                {"covered_lines": [["p/A.java", 3]]},
                "pass"
            ]}
        }))
        .unwrap();
        let v = ScriptedValidator::new(script);
        let levels: Vec<_> = (0..4).map(|_| v.validate(&ctx("update:s1"), "x").unwrap()).collect();
        assert_eq!(levels[0].level, QualityLevel::CompilationFailure);
        assert_eq!(levels[1].level, QualityLevel::TestFailure);
        assert_eq!(levels[2].level, QualityLevel::CoverageFailure);
        assert_eq!(levels[2].uncovered_lines(), &[LineRef::new("p/A.java", 4)]);
        assert_eq!(levels[3].level, QualityLevel::SatisfiesAll);
        assert!(v.validate(&ctx("update:s1"), "x").is_err());
    }

    #[test]
    fn rules_match_candidate_text() {
        let v = ScriptedValidator::new(ValidatorScript {
            rules: vec![ValidatorRule {
                run: String::new(),
                when: "uniformCdf(0.5)".into(),
                outcome: ScriptedOutcome::CompileError { compile_error: vec!["arity".into()] },
            }],
            shared: vec![ScriptedOutcome::Keyword("no_coverage".into())],
            ..ValidatorScript::default()
        });
        assert_eq!(v.validate(&ctx("r"), "uniformCdf(0.5)").unwrap().level, QualityLevel::CompilationFailure);
        assert_eq!(v.validate(&ctx("r"), "other").unwrap().level, QualityLevel::CoverageFailure);
    }
}
