use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use ptco_core::testkit;
use ptco_core::validation::{
    is_covered, parse_coverage_report, CoverageFormat, CoverageMode, CoverageRecord, CoverageVerdict, LineCoverage,
    LineRef, QualityLevel, ReportSpec, ScriptedOutcome, ScriptedValidator, TestStatus, ValidationAdapter,
    ValidatorRule, ValidatorScript,
};

const STATS: &str = "com/example/stats/Stats.java";

fn one_rule(outcome: ScriptedOutcome) -> ScriptedValidator {
    ScriptedValidator::new(ValidatorScript {
        rules: vec![ValidatorRule { run: String::new(), when: String::new(), outcome }],
        ..ValidatorScript::default()
    })
}

#[test]
fn jacoco_fixture_matches_hand_reading() {
    let bytes = std::fs::read(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/jacoco.xml")).unwrap();
    let cov = parse_coverage_report(&bytes, CoverageFormat::XmlLineReport).unwrap();
    // Read off the file: lines 5, 8 and 11 have ci > 0; 6 and 9 do not.
    let expected: BTreeMap<usize, bool> = [(5, true), (6, false), (8, true), (9, false), (11, true)].into();
    assert_eq!(cov.keys().collect::<Vec<_>>(), vec![STATS]);
    assert_eq!(cov[STATS], expected);
}

#[test]
fn lcov_counts_decide_coverage() {
    let lcov = b"TN:\nSF:src/main/java/com/example/stats/Stats.java\nDA:12,0\nDA:13,4\nend_of_record\n";
    let cov = parse_coverage_report(lcov, CoverageFormat::LcovText).unwrap();
    assert!(!is_covered(&cov, &LineRef::new(STATS, 12)));
    assert!(is_covered(&cov, &LineRef::new(STATS, 13)));
}

#[test]
fn truncated_xml_is_malformed_with_offset() {
    let err = parse_coverage_report(b"<report><package name=\"p\"><sourcefile", CoverageFormat::XmlLineReport).unwrap_err();
    assert!(err.offset > 0);
}

#[test]
fn passing_candidate_covering_nothing_has_the_changed_lines_as_gap() {
    let pair = testkit::motivating_pair();
    let changed: BTreeSet<LineRef> = [LineRef::new(STATS, 6), LineRef::new(STATS, 9)].into();
    let xml = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/jacoco.xml")).unwrap();
    let v = one_rule(ScriptedOutcome::CoverageReport { coverage_report: ReportSpec { format: "xml".into(), content: xml } });
    let report = v.validate(&testkit::context_for(&pair, "u", changed.clone()), "test").unwrap();
    assert_eq!(report.level, QualityLevel::CoverageFailure);
    assert_eq!(report.uncovered_lines(), changed.into_iter().collect::<Vec<_>>().as_slice());
    assert!(report.test_results.iter().all(|t| t.status == TestStatus::Pass));
}

#[test]
fn failing_test_carries_its_message() {
    let pair = testkit::motivating_pair();
    let v = one_rule(ScriptedOutcome::TestFailure { test_failure: vec!["a must be less than b".into()] });
    let report = v.validate(&testkit::context_for(&pair, "u", BTreeSet::new()), "test").unwrap();
    assert_eq!(report.level, QualityLevel::TestFailure);
    assert_eq!(report.failing_tests().next().unwrap().message, "a must be less than b");
    assert!(report.coverage.is_none());
}

#[test]
fn compile_failure_skips_later_stages() {
    let pair = testkit::motivating_pair();
    let v = one_rule(ScriptedOutcome::CompileError { compile_error: vec![] });
    let report = v.validate(&testkit::context_for(&pair, "u", BTreeSet::new()), "x").unwrap();
    assert_eq!(report.level, QualityLevel::CompilationFailure);
    assert!(!report.compile_diagnostics.is_empty());
    assert!(report.test_results.is_empty() && report.coverage.is_none());
}

fn coverage_map() -> impl Strategy<Value = LineCoverage> {
    prop::collection::btree_map(
        prop::sample::select(vec!["p/A.java".to_string(), "p/B.java".to_string()]),
        prop::collection::btree_map(1usize..20, any::<bool>(), 0..15),
        0..3,
    )
}

fn required() -> impl Strategy<Value = BTreeSet<LineRef>> {
    prop::collection::btree_set(
        (prop::sample::select(vec!["p/A.java", "p/B.java"]), 1usize..20).prop_map(|(f, l)| LineRef::new(f, l)),
        0..8,
    )
}

proptest! {
    #[test]
    fn verdict_is_a_function_of_map_and_required_lines(per_line in coverage_map(), req in required()) {
        let record = CoverageRecord::evaluate(per_line.clone(), req.clone(), CoverageMode::All);
        let all_covered = req.iter().all(|r| per_line.get(&r.file).and_then(|m| m.get(&r.line)).copied().unwrap_or(false));
        prop_assert_eq!(record.verdict == CoverageVerdict::Covered, all_covered);
        if let CoverageVerdict::Gap(gap) = &record.verdict {
            let expected: Vec<LineRef> = req.iter().filter(|r| !per_line.get(&r.file).and_then(|m| m.get(&r.line)).copied().unwrap_or(false)).cloned().collect();
            prop_assert_eq!(gap, &expected);
        }
        // Recomputing from the stored map reproduces the stored verdict.
        let again = CoverageRecord::evaluate(record.per_line.clone(), record.required_lines.clone(), CoverageMode::All);
        prop_assert_eq!(again.verdict, record.verdict);
    }
}
