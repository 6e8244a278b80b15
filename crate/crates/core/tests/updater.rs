use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use proptest::prelude::*;
use ptco_core::llmgateway::{Gateway, SamplingParams, ScriptedProvider, Transcript};
use ptco_core::testkit;
use ptco_core::updater::{
    render_feedback_prompt, render_update_prompt, update, FeedbackKind, SampleDiffs, SessionOutcome, UpdateError,
    UpdateOptions, UpdateRequest, UpdateSession,
};
use ptco_core::validation::{
    LineRef, QualityLevel, ScriptedOutcome, ScriptedValidator, ValidationReport, ValidatorRule, ValidatorScript,
};
use serde_json::json;

fn assert_golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("PTCO_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "golden file {name} differs");
}

const GOOD: &str = "@Test\npublic void testUniformCdf() {\n    assertEquals(0.5, Stats.uniformCdf(0.5, 0.0, 1.0), 1e-9);\n}";
const BAD: &str = "@Test\npublic void testUniformCdf() {\n    broken(\n}";

fn reply(code: &str) -> String {
    format!("```java\n{code}\n```")
}

fn required() -> BTreeSet<LineRef> {
    [LineRef::new("com/example/stats/Stats.java", 2), LineRef::new("com/example/stats/Stats.java", 3)].into()
}

/// Validator that fails compilation for BAD and passes GOOD.
fn validator() -> ScriptedValidator {
    ScriptedValidator::new(ValidatorScript {
        rules: vec![
            ValidatorRule {
                run: String::new(),
                when: "broken(".into(),
                outcome: ScriptedOutcome::CompileError { compile_error: vec!["StatsTest.java:3: error: illegal start of expression".into()] },
            },
            ValidatorRule { run: String::new(), when: "uniformCdf(0.5, 0.0, 1.0)".into(), outcome: ScriptedOutcome::Keyword("pass".into()) },
        ],
        ..ValidatorScript::default()
    })
}

fn run(replies: Vec<String>, max_iterations: usize) -> Result<UpdateSession, UpdateError> {
    let provider = Arc::new(ScriptedProvider::from_replies(replies));
    let gateway = Gateway::new(provider, SamplingParams::default());
    let pair = testkit::motivating_pair();
    let request = UpdateRequest {
        pair: &pair,
        sample: None,
        context: testkit::context_for(&pair, "update:p", required()),
        source: None,
    };
    update(request, &gateway, &validator(), UpdateOptions { max_iterations, ..UpdateOptions::default() })
}

#[test]
fn case_study_replays_four_iterations() {
    let session = testkit::run_case_study().unwrap();
    assert_eq!(session.outcome, SessionOutcome::Success);
    assert_eq!(
        session.feedback_kinds(),
        vec![FeedbackKind::CompileError, FeedbackKind::CompileError, FeedbackKind::TestFailure, FeedbackKind::None]
    );
    let it = &session.iterations;
    assert!(it[0].feedback_prompt.contains(testkit::CASE_STUDY_DIAGNOSTICS[0]));
    assert!(it[1].feedback_prompt.contains("incompatible types: possible lossy conversion from double to int"));
    assert!(it[2].feedback_prompt.contains("a must be less than b"));
    assert_eq!(session.final_test.as_deref(), Some(testkit::CASE_STUDY_CANDIDATES[3]));
    assert!(it[0].prompt.contains("Example production change:"));
    let mut golden = serde_json::to_string_pretty(&session).unwrap();
    golden.push('\n');
    assert_golden("case_study_session.json", &golden);
}

#[test]
fn first_try_success_takes_one_iteration() {
    let s = run(vec![reply(GOOD)], 8).unwrap();
    assert_eq!(s.iterations.len(), 1);
    assert_eq!(s.feedback_kinds(), vec![FeedbackKind::None]);
    assert!(s.iterations[0].feedback_prompt.is_empty());
}

#[test]
fn never_valid_exhausts_at_eight() {
    let s = run(vec![reply(BAD); 8], 8).unwrap();
    assert_eq!(s.outcome, SessionOutcome::Exhausted);
    assert_eq!(s.iterations.len(), 8);
    assert!(s.final_test.is_none());
    assert_eq!(s.best_level(), QualityLevel::CompilationFailure);
}

#[test]
fn reply_without_code_counts_as_compile_failure() {
    let s = run(vec!["   ".into(), "```\n```".into(), reply(GOOD)], 8);
    // A blank reply is a malformed provider response, not a candidate.
    assert!(matches!(s, Err(UpdateError::Gateway(_))));
    let s = run(vec!["```java\n```".into(), reply(GOOD)], 8).unwrap();
    assert_eq!(s.feedback_kinds(), vec![FeedbackKind::CompileError, FeedbackKind::None]);
    assert!(s.iterations[0].feedback_prompt.contains("reply contains no code"));
}

#[test]
fn zero_iterations_are_rejected() {
    assert!(matches!(run(vec![], 0), Err(UpdateError::InvalidOptions)));
}

proptest! {
    #[test]
    fn sessions_stop_at_first_success_or_the_cutoff(k in 1usize..=10, max in 1usize..=10) {
        let replies: Vec<String> = (1..=max).map(|i| reply(if i == k { GOOD } else { BAD })).collect();
        let s = run(replies, max).unwrap();
        prop_assert!(!s.iterations.is_empty() && s.iterations.len() <= max);
        if k <= max {
            prop_assert_eq!(s.outcome, SessionOutcome::Success);
            prop_assert_eq!(s.iterations.len(), k);
            prop_assert_eq!(s.iterations.last().unwrap().validation.level, QualityLevel::SatisfiesAll);
        } else {
            prop_assert_eq!(s.outcome, SessionOutcome::Exhausted);
            prop_assert_eq!(s.iterations.len(), max);
        }
        for it in &s.iterations {
            prop_assert_eq!(it.feedback_kind == FeedbackKind::None, it.validation.level == QualityLevel::SatisfiesAll);
            if it.feedback_kind == FeedbackKind::CompileError {
                prop_assert!(it.validation.compile_diagnostics.iter().any(|d| it.feedback_prompt.contains(d.as_str())));
            }
        }
    }

    #[test]
    fn truncated_prompts_keep_whole_lines(budget in 300usize..4000, hunks in 1usize..60) {
        let big: String = (0..hunks).map(|i| format!("@@ -{i},1 +{i},1 @@\n-old value {i}\n+new value {i}\n")).collect();
        let p = testkit::motivating_pair();
        let (_, human) = render_update_prompt(
            &p.prod_old, &p.prod_new, &p.test_old,
            Some(SampleDiffs { prod_diff_text: &big, test_diff_text: &big }),
            budget,
        );
        let prod_diff = p.prod_diff_text();
        for line in human.lines() {
            if let Some(rest) = line.strip_prefix(['-', '+']) {
                let whole = big.lines().chain(prod_diff.lines()).any(|l| l.len() > 1 && &l[1..] == rest);
                prop_assert!(whole || line.starts_with("---") || line.starts_with("+++"), "cut line: {line:?}");
            }
        }
    }
}

#[test]
fn sample_section_carries_both_diffs_and_the_original_test() {
    let p = testkit::motivating_pair();
    let ex = testkit::capitalize_pair();
    let (prod_diff, test_diff) = (ex.prod_diff_text(), ex.test_diff_text());
    let (_, human) = render_update_prompt(
        &p.prod_old,
        &p.prod_new,
        &p.test_old,
        Some(SampleDiffs { prod_diff_text: &prod_diff, test_diff_text: &test_diff }),
        16_000,
    );
    assert!(human.contains(prod_diff.trim_end()));
    assert!(human.contains(test_diff.trim_end()));
    assert!(human.contains(p.prod_diff_text().trim_end()));
    assert!(human.contains(p.test_old.trim_end()));
    let (_, zero_shot) = render_update_prompt(&p.prod_old, &p.prod_new, &p.test_old, None, 16_000);
    assert!(!zero_shot.contains("Example"));
    assert!(!zero_shot.contains(test_diff.trim_end()));
}

#[test]
fn feedback_prompts_carry_validator_output() {
    let r = ValidationReport::compile_failed(vec!["incompatible types: double cannot be converted to int".into()]);
    assert!(render_feedback_prompt(FeedbackKind::CompileError, &r, None)
        .contains("incompatible types: double cannot be converted to int"));
    let s = testkit::run_case_study().unwrap();
    let third = &s.iterations[2];
    assert!(third.feedback_prompt.contains(&third.validation.test_results[0].name));
}

#[test]
fn coverage_gap_is_fed_back_and_never_succeeds() {
    let provider: Transcript = serde_json::from_value(json!({"shared": vec![reply(GOOD); 8]})).unwrap();
    let gateway = Gateway::new(Arc::new(ScriptedProvider::new(provider)), SamplingParams::default());
    let v = ScriptedValidator::new(ValidatorScript {
        rules: vec![ValidatorRule { run: String::new(), when: String::new(), outcome: ScriptedOutcome::Keyword("no_coverage".into()) }],
        ..ValidatorScript::default()
    });
    let pair = testkit::motivating_pair();
    let req = UpdateRequest { pair: &pair, sample: None, context: testkit::context_for(&pair, "u", required()), source: None };
    let s = update(req, &gateway, &v, UpdateOptions::default()).unwrap();
    assert_eq!(s.outcome, SessionOutcome::Exhausted);
    assert_eq!(s.best_level(), QualityLevel::CoverageFailure);
    assert!(s.iterations[0].feedback_prompt.contains("lines: 2, 3"));
}
