use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use ptco_core::testkit;

fn ptco(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptco")).current_dir(root).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_str(&ok(out)).unwrap()
}

fn fixture() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    testkit::create_fixture_repo(&tmp.path().join("repo")).unwrap();
    testkit::write_pipeline_scripts(tmp.path()).unwrap();
    tmp
}

#[test]
fn every_phase_through_the_embedded_server() {
    let tmp = fixture();
    let root = tmp.path();
    let cfg = ["--config", "run.toml"];

    let mined = json(&ptco(root, &[&cfg[..], &["mine", "--repo", "repo", "--from", testkit::BASE_TAG, "--out", "pairs.jsonl"]].concat()));
    assert_eq!((mined["pairs"].as_u64(), mined["positive"].as_u64()), (Some(4), Some(2)));

    let kb = json(&ptco(root, &[&cfg[..], &["build-kb", "--pairs", "pairs.jsonl", "--out", "kb"]].concat()));
    assert_eq!(kb["count"], 2);

    let ident = json(&ptco(
        root,
        &[&cfg[..], &["identify", "--pairs", "pairs.jsonl", "--experiences", "exp.json", "--out", "verdicts.jsonl", "--experience-learn"]].concat(),
    ));
    assert_eq!((ident["verdicts"].as_u64(), ident["obsolete"].as_u64()), (Some(4), Some(3)));
    assert!(root.join("exp.json").is_file());

    let upd = json(&ptco(root, &[&cfg[..], &["update", "--input", "verdicts.jsonl", "--out-dir", "sessions", "--kb", "kb"]].concat()));
    assert_eq!(upd["sessions"].as_array().unwrap().len(), 3);

    let text = ok(&ptco(root, &["evaluate", "--verdicts", "verdicts.jsonl", "--sessions", "sessions", "--out-dir", "metrics"]));
    assert!(text.contains("accuracy"), "{text}");
    assert!(root.join("metrics/metrics.json").is_file());
}

#[test]
fn learn_experience_writes_rounds() {
    let tmp = fixture();
    let root = tmp.path();
    ok(&ptco(root, &["--config", "run.toml", "mine", "--repo", "repo", "--from", testkit::BASE_TAG, "--out", "pairs.jsonl"]));
    // The provider flag stands in for the transcript named by the config.
    let out = json(&ptco(root, &["--provider", "scripted:transcript.json", "learn-experience", "--pairs", "pairs.jsonl", "--out", "exp.json"]));
    assert_eq!(out["rounds"], 2);
    assert!(root.join("exp.round-1.json").is_file() && root.join("exp.round-2.json").is_file());
}

#[test]
fn input_errors_exit_with_two() {
    let tmp = fixture();
    let root = tmp.path();
    let cases: [&[&str]; 5] = [
        &["mine", "--repo", "no-such-repo", "--from", "a", "--out", "p.jsonl"],
        &["--config", "run.toml", "identify", "--pairs", "p.jsonl", "--experiences", "none.json", "--out", "v.jsonl"],
        &["evaluate", "--out-dir", "m"],
        &["--config", "missing.toml", "build-kb", "--pairs", "p", "--out", "kb"],
        &["--provider", "openai", "build-kb", "--pairs", "p", "--out", "kb"],
    ];
    for args in cases {
        let out = ptco(root, args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "), "{args:?}");
    }
    assert_eq!(ptco(root, &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn empty_corpus_builds_with_a_warning() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("pairs.jsonl"), "").unwrap();
    let out = ptco(tmp.path(), &["build-kb", "--pairs", "pairs.jsonl", "--out", "kb"]);
    assert_eq!(json(&out)["count"], 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn remote_server_mode() {
    let tmp = fixture();
    let root = tmp.path();
    let mut server = Command::new(env!("CARGO_BIN_EXE_ptco"))
        .args(["serve", "--bind", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").unwrap().to_string();

    let out = ptco(root, &["--server", &url, "--config", "run.toml", "mine", "--repo", "repo", "--from", testkit::BASE_TAG, "--out", "pairs.jsonl"]);
    let mined = json(&out);
    server.kill().unwrap();
    let _ = server.wait();
    assert_eq!(mined["pairs"], 4);
    assert!(root.join("pairs.jsonl").is_file());
}
