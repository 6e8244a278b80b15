use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use ptco_core::identifier::{identify_pair, Experience, ExperienceKind};
use ptco_core::llmgateway::{
    extract_code_block, AuditTrail, ChatTurn, ConversationMemory, Gateway, RetryPolicy, Role, SamplingParams,
    ScriptedProvider, ScriptedReply, Transcript,
};
use ptco_core::testkit;
use ptco_core::validation::{LineRef, QualityLevel, ScriptedValidator, ValidationAdapter, ValidatorScript};
use serde_json::json;

proptest! {
    #[test]
    fn outbound_payload_respects_the_window(window in 0usize..6, exchanges in 0usize..12) {
        let provider = Arc::new(ScriptedProvider::from_replies((0..=exchanges).map(|i| format!("reply {i}"))));
        let gateway = Gateway::new(provider.clone(), SamplingParams::default());
        let mut memory = ConversationMemory::new(window, Some("system".into()));
        for i in 0..=exchanges {
            gateway.send("run", &mut memory, ChatTurn::human(format!("prompt {i}"))).unwrap();
        }
        for call in provider.calls() {
            let history = call.messages.len() - 2;
            prop_assert!(history <= 2 * window);
            prop_assert_eq!(call.messages[0].role, Role::System);
            prop_assert_eq!(call.messages.last().unwrap().role, Role::Human);
        }
        let last = provider.calls().pop().unwrap();
        prop_assert_eq!(last.messages.len(), 2 + 2 * window.min(exchanges));
    }
}

#[test]
fn sampling_defaults_are_deterministic() {
    let p = SamplingParams::default();
    assert_eq!((p.temperature, p.top_p, p.frequency_penalty, p.presence_penalty), (0.0, 1.0, 0.0, 0.0));
}

#[test]
fn timeouts_are_retried_up_to_three_attempts() {
    let transcript = Transcript {
        shared: vec![
            ScriptedReply::Timeout { timeout: "slow".into() },
            ScriptedReply::Timeout { timeout: "slow".into() },
            ScriptedReply::Text("ok".into()),
        ],
        ..Transcript::default()
    };
    let provider = Arc::new(ScriptedProvider::new(transcript));
    let gateway = Gateway::new(provider.clone(), SamplingParams::default())
        .with_retry(RetryPolicy { max_attempts: 3, base_delay: std::time::Duration::ZERO });
    let mut memory = ConversationMemory::new(3, None);
    assert_eq!(gateway.send("r", &mut memory, ChatTurn::human("hi")).unwrap().content, "ok");
    assert_eq!(provider.call_count(), 3);
}

#[test]
fn case_study_reply_extracts_to_a_compiling_test() {
    let reply = format!("The lower bound must come first.\n\n```java\n{}\n```", testkit::CASE_STUDY_CANDIDATES[3]);
    let code = extract_code_block(&reply).unwrap();
    let script: ValidatorScript = serde_json::from_value(json!({ "rules": testkit::case_study_validator_rules() })).unwrap();
    let validator = ScriptedValidator::new(script);
    let pair = testkit::motivating_pair();
    let required: BTreeSet<LineRef> = [LineRef::new("com/example/stats/Stats.java", 2)].into();
    let report = validator.validate(&testkit::context_for(&pair, "update:x", required), &code).unwrap();
    assert!(report.compile_diagnostics.is_empty());
    assert_eq!(report.level, QualityLevel::SatisfiesAll);
}

fn audit_of_identification() -> Vec<u8> {
    let transcript: Transcript = serde_json::from_value(testkit::pipeline_transcript()).unwrap();
    let audit = Arc::new(AuditTrail::new());
    let gateway = Gateway::new(Arc::new(ScriptedProvider::new(transcript)), SamplingParams::default()).with_audit(audit.clone());
    let experiences = vec![Experience {
        experience_id: "AL-1".into(),
        kind: ExperienceKind::AbstractionLevel,
        statement: "Signature changes break callers.".into(),
        round: 1,
    }];
    for pair in [testkit::motivating_pair(), testkit::capitalize_pair()] {
        identify_pair(&pair, &experiences, &gateway, 3).unwrap();
    }
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("audit.jsonl");
    audit.flush_to(&path).unwrap();
    std::fs::read(path).unwrap()
}

#[test]
fn scripted_runs_produce_identical_audit_logs() {
    let a = audit_of_identification();
    assert!(!a.is_empty());
    assert_eq!(a, audit_of_identification());
}
