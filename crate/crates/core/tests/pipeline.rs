use std::fs;
use std::path::Path;

use ptco_core::changemining::{ChangePair, Label};
use ptco_core::config::RunConfig;
use ptco_core::fsutil;
use ptco_core::identifier::Decision;
use ptco_core::metrics::SessionStatus;
use ptco_core::pipeline::{self, BuildKbRequest, EvaluateRequest, IdentifyRequest, MineRequest, UpdateRequestFiles, VerdictRecord};
use ptco_core::testkit;
use ptco_core::validation::QualityLevel;

fn run_all(root: &Path) -> pipeline::UpdateSummary {
    let repo = root.join("repo");
    testkit::create_fixture_repo(&repo).unwrap();
    testkit::write_pipeline_scripts(root).unwrap();
    let config = RunConfig::load(&root.join("run.toml")).unwrap();
    let provider = config.chat_provider().unwrap();
    let embedder = config.embedder().unwrap();

    let mined = pipeline::mine(
        &MineRequest {
            repo: repo.clone(),
            from: testkit::BASE_TAG.into(),
            to: "HEAD".into(),
            out: root.join("pairs.jsonl"),
            ..Default::default()
        },
        &config,
    )
    .unwrap();
    assert_eq!((mined.pairs, mined.positive, mined.negative), (4, 2, 2));

    pipeline::build_kb(
        &BuildKbRequest { pairs: root.join("pairs.jsonl"), out: root.join("kb") },
        &config,
        embedder.as_ref(),
    )
    .unwrap();

    let ident = pipeline::identify(
        &IdentifyRequest {
            pairs: root.join("pairs.jsonl"),
            experiences: root.join("experiences.json"),
            out: root.join("verdicts.jsonl"),
            learn_from: Some(root.join("pairs.jsonl")),
        },
        &config,
        provider.clone(),
    )
    .unwrap();
    assert!(ident.failures.is_empty(), "{:?}", ident.failures);
    assert_eq!((ident.verdicts, ident.obsolete), (4, 3));

    let summary = pipeline::update(
        &UpdateRequestFiles { input: root.join("verdicts.jsonl"), out_dir: root.join("sessions"), kb: Some(root.join("kb")) },
        &config,
        provider,
        config.validator().unwrap(),
        embedder.as_ref(),
    )
    .unwrap();

    pipeline::evaluate(&EvaluateRequest {
        verdicts: Some(root.join("verdicts.jsonl")),
        sessions: Some(root.join("sessions")),
        ground_truth: None,
        out_dir: root.join("metrics"),
    })
    .unwrap();
    summary
}

#[test]
fn fixture_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = run_all(tmp.path());

    let levels: Vec<_> = summary.sessions.iter().map(|s| (s.id.contains("Stats#mean"), s.status)).collect();
    assert_eq!(levels.len(), 3);
    for (is_mean, status) in levels {
        let expected = if is_mean { QualityLevel::CoverageFailure } else { QualityLevel::SatisfiesAll };
        assert_eq!(status, SessionStatus::Ran(expected));
    }
    assert_eq!(summary.csr, Some(1.0));
    assert!((summary.ucr.unwrap() - 2.0 / 3.0).abs() < 1e-12);

    let verdicts: Vec<VerdictRecord> = fsutil::read_jsonl(&tmp.path().join("verdicts.jsonl")).unwrap();
    let fp = verdicts.iter().filter(|v| v.decision == Decision::Obsolete && v.pair.label == Label::Negative).count();
    assert_eq!(fp, 1);

    let uniform = summary.sessions.iter().find(|s| s.id.contains("uniformCdf")).unwrap();
    assert_eq!(uniform.iterations, 4);

    let metrics = fs::read_to_string(tmp.path().join("metrics/metrics.txt")).unwrap();
    assert!(metrics.contains("precision"), "{metrics}");
    assert!(tmp.path().join("experiences.round-2.json").is_file());
}

#[test]
fn pipeline_outputs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_all(a.path());
    run_all(b.path());
    for file in ["pairs.jsonl", "verdicts.jsonl", "experiences.json", "sessions/summary.json", "metrics/metrics.json"] {
        assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap(), "{file}");
    }
}

#[test]
fn unlabeled_mining_drops_post_change_tests() {
    let tmp = tempfile::tempdir().unwrap();
    let repo = tmp.path().join("repo");
    testkit::create_fixture_repo(&repo).unwrap();
    let config = RunConfig::default();
    pipeline::mine(
        &MineRequest {
            repo,
            from: testkit::BASE_TAG.into(),
            to: "HEAD".into(),
            out: tmp.path().join("u.jsonl"),
            unlabeled: true,
            ..Default::default()
        },
        &config,
    )
    .unwrap();
    let pairs: Vec<ChangePair> = fsutil::read_jsonl(&tmp.path().join("u.jsonl")).unwrap();
    assert!(pairs.iter().all(|p| p.test_new.is_none() && p.label == Label::Unlabeled));
}

#[test]
fn missing_inputs_are_input_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let err = pipeline::evaluate(&EvaluateRequest { out_dir: tmp.path().into(), ..Default::default() }).unwrap_err();
    assert!(err.is_input_error());
    let err = pipeline::build_kb(
        &BuildKbRequest { pairs: tmp.path().join("none.jsonl"), out: tmp.path().join("kb") },
        &RunConfig::default(),
        RunConfig::default().embedder().unwrap().as_ref(),
    )
    .unwrap_err();
    assert!(err.is_input_error());
}
