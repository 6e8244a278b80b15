//! Dynamic validation of candidate tests: compile, run, then check coverage
//! of the changed production lines. Stages stop at the first failure.

mod command;
mod coverage;
mod scripted;
mod workspace;

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use command::{CommandAdapter, CommandAdapterConfig};
pub use coverage::{
    is_covered, is_executable_line, parse_coverage_report, CoverageFormat, CoverageMode,
    CoverageRecord, CoverageVerdict, LineCoverage, LineRef, MalformedReport,
};
pub use scripted::{ReportSpec, ScriptedOutcome, ScriptedValidator, ValidatorRule, ValidatorScript};
pub use workspace::{prepare_workspace, splice_method};

/// Ordered quality ladder of a candidate test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QualityLevel {
    CompilationFailure,
    TestFailure,
    CoverageFailure,
    SatisfiesAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TestStatus {
    Pass,
    Fail,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    pub status: TestStatus,
    #[serde(default)]
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub level: QualityLevel,
    pub compile_diagnostics: Vec<String>,
    pub test_results: Vec<TestResult>,
    pub coverage: Option<CoverageRecord>,
    pub wall_time_ms: u64,
}

impl ValidationReport {
    pub fn compile_failed(mut diagnostics: Vec<String>) -> Self {
        if diagnostics.is_empty() {
            diagnostics.push("compilation failed without diagnostics".to_string());
        }
        ValidationReport {
            level: QualityLevel::CompilationFailure,
            compile_diagnostics: diagnostics,
            test_results: Vec::new(),
            coverage: None,
            wall_time_ms: 0,
        }
    }

    /// Report after the test stage; `coverage` is only consulted when every
    /// test passed.
    pub fn after_tests(
        test_results: Vec<TestResult>,
        coverage: impl FnOnce() -> Result<CoverageRecord, ValidationError>,
    ) -> Result<Self, ValidationError> {
        let passed = !test_results.is_empty() && test_results.iter().all(|t| t.status == TestStatus::Pass);
        if !passed {
            let mut test_results = test_results;
            if test_results.is_empty() {
                test_results.push(TestResult {
                    name: "<none>".into(),
                    status: TestStatus::Error,
                    message: "no test results were produced".into(),
                });
            }
            return Ok(ValidationReport {
                level: QualityLevel::TestFailure,
                compile_diagnostics: Vec::new(),
                test_results,
                coverage: None,
                wall_time_ms: 0,
            });
        }
        let record = coverage()?;
        let level = if record.is_covered() {
            QualityLevel::SatisfiesAll
        } else {
            QualityLevel::CoverageFailure
        };
        Ok(ValidationReport {
            level,
            compile_diagnostics: Vec::new(),
            test_results,
            coverage: Some(record),
            wall_time_ms: 0,
        })
    }

    pub fn failing_tests(&self) -> impl Iterator<Item = &TestResult> {
        self.test_results.iter().filter(|t| t.status != TestStatus::Pass)
    }

    pub fn uncovered_lines(&self) -> &[LineRef] {
        match self.coverage.as_ref().map(|c| &c.verdict) {
            Some(CoverageVerdict::Gap(lines)) => lines,
            _ => &[],
        }
    }
}

/// The test method a candidate replaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestTarget {
    pub module: String,
    pub package: String,
    pub class: String,
    pub method: String,
    pub arity: usize,
}

impl TestTarget {
    pub fn display_name(&self) -> String {
        format!("{}#{}", self.class, self.method)
    }

    /// Path of the test file relative to the workspace.
    pub fn file_path(&self, test_root: &str, extension: &str) -> PathBuf {
        let mut p = PathBuf::new();
        if !self.module.is_empty() {
            p.push(&self.module);
        }
        p.push(test_root);
        for part in self.package.split('.').filter(|s| !s.is_empty()) {
            p.push(part);
        }
        p.push(format!("{}.{extension}", self.class));
        p
    }
}

#[derive(Debug, Clone)]
pub struct ValidationContext {
    pub run_key: String,
    pub workspace: Option<PathBuf>,
    pub target: TestTarget,
    pub required_lines: BTreeSet<LineRef>,
}

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("workspace corrupt: {0}")]
    WorkspaceCorrupt(String),
    #[error("validator setup failed: {0}")]
    Setup(String),
    #[error("validation script: {0}")]
    Script(String),
    #[error(transparent)]
    Report(#[from] MalformedReport),
    #[error("validation I/O: {0}")]
    Io(#[from] std::io::Error),
}

pub trait ValidationAdapter: Send + Sync {
    fn validate(&self, ctx: &ValidationContext, candidate_test: &str) -> Result<ValidationReport, ValidationError>;

    /// Checks that the workspace builds at all before a session starts.
    fn preflight(&self, _ctx: &ValidationContext, _ground_truth: Option<&str>) -> Result<(), ValidationError> {
        Ok(())
    }

    /// Whether [`ValidationContext::workspace`] must point at a checkout.
    fn needs_workspace(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels_are_ordered() {
        assert!(QualityLevel::CompilationFailure < QualityLevel::TestFailure);
        assert!(QualityLevel::TestFailure < QualityLevel::CoverageFailure);
        assert!(QualityLevel::CoverageFailure < QualityLevel::SatisfiesAll);
    }

    #[test]
    fn compile_failure_always_has_a_diagnostic() {
        let r = ValidationReport::compile_failed(vec![]);
        assert_eq!(r.compile_diagnostics.len(), 1);
        assert!(r.test_results.is_empty() && r.coverage.is_none());
    }

    #[test]
    fn failing_tests_skip_coverage() {
        let r = ValidationReport::after_tests(
            vec![TestResult { name: "t".into(), status: TestStatus::Fail, message: "a must be less than b".into() }],
            || panic!("coverage must not run"),
        )
        .unwrap();
        assert_eq!(r.level, QualityLevel::TestFailure);
        assert!(r.coverage.is_none());
    }

    #[test]
    fn target_paths() {
        let t = TestTarget {
            module: "core".into(),
            package: "com.x".into(),
            class: "StatsTest".into(),
            method: "testCdf".into(),
            arity: 0,
        };
        assert_eq!(t.file_path("src/test/java", "java"), PathBuf::from("core/src/test/java/com/x/StatsTest.java"));
    }
}
