//! Deterministic fixtures: a small Java repository with known change pairs
//! and scripted transcripts for every phase.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use serde_json::{json, Value};

use crate::changemining::{ChangeMeta, ChangePair, ChangeType, Label};
use crate::llmgateway::{Gateway, SamplingParams, ScriptedProvider, Transcript};
use crate::updater::{self, RetrievedSample, UpdateError, UpdateOptions, UpdateRequest, UpdateSession};
use crate::validation::{LineRef, ScriptedValidator, TestTarget, ValidationContext, ValidatorScript};

pub const BASE_TAG: &str = "fixture-base";

pub const STATS_PATH: &str = "src/main/java/com/example/stats/Stats.java";
pub const STATS_TEST_PATH: &str = "src/test/java/com/example/stats/StatsTest.java";
pub const TEXT_PATH: &str = "src/main/java/com/example/text/Text.java";
pub const TEXT_TEST_PATH: &str = "src/test/java/com/example/text/TextTest.java";

pub const STATS_V0: &str = r#"package com.example.stats;

public class Stats {

    public static double UniformCdf(double x) {
        if (x < 0.0) {
            return 0.0;
        }
        return Math.min(x, 1.0);
    }

    public static double mean(double[] xs) {
        double sum = 0.0;
        for (double x : xs) {
            sum += x;
        }
        return sum / xs.length;
    }
}
"#;

pub const STATS_V1: &str = r#"package com.example.stats;

public class Stats {

    public static double uniformCdf(double x, double a, double b) {
        if (a >= b) {
            throw new IllegalArgumentException("a must be less than b");
        }
        if (x < a) {
            return 0.0;
        }
        return Math.min((x - a) / (b - a), 1.0);
    }

    public static double mean(double[] xs) {
        double sum = 0.0;
        for (double x : xs) {
            sum += x;
        }
        return sum / xs.length;
    }
}
"#;

pub const STATS_V2: &str = r#"package com.example.stats;

public class Stats {

    public static double uniformCdf(double x, double a, double b) {
        if (a >= b) {
            throw new IllegalArgumentException("a must be less than b");
        }
        if (x < a) {
            return 0.0;
        }
        return Math.min((x - a) / (b - a), 1.0);
    }

    public static double mean(double[] xs) {
        if (xs.length == 0) {
            return 0.0;
        }
        double sum = 0.0;
        for (double x : xs) {
            sum += x;
        }
        return sum / xs.length;
    }
}
"#;

pub const STATS_TEST_V0: &str = r#"package com.example.stats;

import static org.junit.Assert.assertEquals;

import org.junit.Test;

public class StatsTest {

    @Test
    public void testUniformCdf() {
        assertEquals(0.5, Stats.UniformCdf(0.5), 1e-9);
    }

    @Test
    public void testMean() {
        assertEquals(2.0, Stats.mean(new double[] {1.0, 2.0, 3.0}), 1e-9);
    }
}
"#;

pub const STATS_TEST_V1: &str = r#"package com.example.stats;

import static org.junit.Assert.assertEquals;

import org.junit.Test;

public class StatsTest {

    @Test
    public void testUniformCdf() {
        assertEquals(0.5, Stats.uniformCdf(0.5, 0.0, 1.0), 1e-9);
    }

    @Test
    public void testMean() {
        assertEquals(2.0, Stats.mean(new double[] {1.0, 2.0, 3.0}), 1e-9);
    }
}
"#;

pub const TEXT_V0: &str = r#"package com.example.text;

public class Text {

    public static String capitalize(String s) {
        if (s.isEmpty()) {
            return s;
        }
        return Character.toUpperCase(s.charAt(0)) + s.substring(1);
    }

    public static String reverse(String s) {
        String out = "";
        for (int i = s.length() - 1; i >= 0; i--) {
            out += s.charAt(i);
        }
        return out;
    }
}
"#;

pub const TEXT_V1: &str = r#"package com.example.text;

public class Text {

    public static String capitalize(String s, boolean lowerRest) {
        if (s.isEmpty()) {
            return s;
        }
        String rest = s.substring(1);
        if (lowerRest) {
            rest = rest.toLowerCase();
        }
        return Character.toUpperCase(s.charAt(0)) + rest;
    }

    public static String reverse(String s) {
        String out = "";
        for (int i = s.length() - 1; i >= 0; i--) {
            out += s.charAt(i);
        }
        return out;
    }
}
"#;

pub const TEXT_V2: &str = r#"package com.example.text;

public class Text {

    public static String capitalize(String s, boolean lowerRest) {
        if (s.isEmpty()) {
            return s;
        }
        String rest = s.substring(1);
        if (lowerRest) {
            rest = rest.toLowerCase();
        }
        return Character.toUpperCase(s.charAt(0)) + rest;
    }

    public static String reverse(String s) {
        return new StringBuilder(s).reverse().toString();
    }
}
"#;

pub const TEXT_TEST_V0: &str = r#"package com.example.text;

import static org.junit.Assert.assertEquals;

import org.junit.Test;

public class TextTest {

    @Test
    public void testCapitalize() {
        assertEquals("Hello", Text.capitalize("hello"));
    }

    @Test
    public void testReverse() {
        assertEquals("cba", Text.reverse("abc"));
    }
}
"#;

pub const TEXT_TEST_V1: &str = r#"package com.example.text;

import static org.junit.Assert.assertEquals;

import org.junit.Test;

public class TextTest {

    @Test
    public void testCapitalize() {
        assertEquals("Hello", Text.capitalize("hELLO", true));
    }

    @Test
    public void testReverse() {
        assertEquals("cba", Text.reverse("abc"));
    }
}
"#;

fn git(dir: &Path, args: &[&str], seq: u32) -> io::Result<()> {
    let date = format!("2024-01-01T00:{:02}:00Z", seq);
    let out = Command::new("git")
        .arg("-C")
        .arg(dir)
        .args(["-c", "commit.gpgsign=false", "-c", "core.autocrlf=false", "-c", "init.defaultBranch=main"])
        .args(args)
        .env("GIT_AUTHOR_NAME", "Fixture")
        .env("GIT_AUTHOR_EMAIL", "fixture@example.com")
        .env("GIT_COMMITTER_NAME", "Fixture")
        .env("GIT_COMMITTER_EMAIL", "fixture@example.com")
        .env("GIT_AUTHOR_DATE", &date)
        .env("GIT_COMMITTER_DATE", &date)
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .env("HOME", dir)
        .output()?;
    if !out.status.success() {
        return Err(io::Error::other(format!(
            "git {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )));
    }
    Ok(())
}

fn write(dir: &Path, rel: &str, text: &str) -> io::Result<()> {
    let path = dir.join(rel);
    fs::create_dir_all(path.parent().expect("relative path has a parent"))?;
    fs::write(path, text)
}

/// Creates an empty repository in `dir`.
pub fn init_repo(dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    git(dir, &["init", "-q"], 0)
}

/// Writes `files` and commits them with a date fixed by `seq`.
pub fn commit(dir: &Path, files: &[(&str, &str)], message: &str, seq: u32) -> io::Result<()> {
    for (rel, text) in files {
        write(dir, rel, text)?;
    }
    git(dir, &["add", "-A"], seq)?;
    git(dir, &["commit", "-q", "-m", message], seq)
}

/// Builds the fixture repository in `dir` (created if missing). Commit ids
/// are identical on every run.
///
/// After the tagged base commit come five commits: a case-changing rename
/// with new parameters and an updated test (positive), a README edit, a body
/// change to `mean` (negative), a new parameter on `capitalize` with an
/// updated test (positive) and a body change to `reverse` (negative).
pub fn create_fixture_repo(dir: &Path) -> io::Result<()> {
    init_repo(dir)?;
    commit(
        dir,
        &[
            ("README.md", "# fixture\n"),
            (STATS_PATH, STATS_V0),
            (STATS_TEST_PATH, STATS_TEST_V0),
            (TEXT_PATH, TEXT_V0),
            (TEXT_TEST_PATH, TEXT_TEST_V0),
        ],
        "Initial import",
        0,
    )?;
    git(dir, &["tag", BASE_TAG], 0)?;
    commit(dir, &[(STATS_PATH, STATS_V1), (STATS_TEST_PATH, STATS_TEST_V1)], "Bound the uniform CDF", 1)?;
    commit(dir, &[("README.md", "# fixture\n\nStatistics and text helpers.\n")], "Describe the project", 2)?;
    commit(dir, &[(STATS_PATH, STATS_V2)], "Guard mean against empty input", 3)?;
    commit(dir, &[(TEXT_PATH, TEXT_V1), (TEXT_TEST_PATH, TEXT_TEST_V1)], "Optionally lower the rest", 4)?;
    commit(dir, &[(TEXT_PATH, TEXT_V2)], "Reverse with a builder", 5)?;
    Ok(())
}

/// Test method replies of the four-iteration uniform CDF repair.
pub const CASE_STUDY_CANDIDATES: [&str; 4] = [
    "@Test\npublic void testUniformCdf() {\n    assertEquals(0.5, Stats.uniformCdf(0.5), 1e-9);\n}",
    "@Test\npublic void testUniformCdf() {\n    int p = Stats.uniformCdf(0.5, 0.0, 1.0);\n    assertEquals(0, p);\n}",
    "@Test\npublic void testUniformCdf() {\n    assertEquals(0.5, Stats.uniformCdf(0.5, 1.0, 0.0), 1e-9);\n}",
    "@Test\npublic void testUniformCdf() {\n    assertEquals(0.5, Stats.uniformCdf(0.5, 0.0, 1.0), 1e-9);\n}",
];

pub const CASE_STUDY_DIAGNOSTICS: [&str; 3] = [
    "StatsTest.java:11: error: method uniformCdf in class Stats cannot be applied to given types; actual and formal argument lists differ in length",
    "StatsTest.java:11: error: incompatible types: possible lossy conversion from double to int",
    "java.lang.IllegalArgumentException: a must be less than b",
];

fn java_reply(intro: &str, code: &str) -> String {
    format!("{intro}\n\n```java\n{code}\n```")
}

/// Chat rules replaying the uniform CDF repair; each feedback prompt selects
/// the next candidate.
pub fn case_study_chat_rules() -> Vec<Value> {
    let c = CASE_STUDY_CANDIDATES;
    vec![
        json!({"run": "update:", "when": "actual and formal argument lists differ",
               "reply": java_reply("The method now takes the interval bounds.", c[1])}),
        json!({"run": "update:", "when": "incompatible types",
               "reply": java_reply("The result is a double.", c[2])}),
        json!({"run": "update:", "when": "(failure): java.lang.IllegalArgumentException: a must be less than b",
               "reply": java_reply("The lower bound must come first.", c[3])}),
        json!({"run": "update:", "when": "test method `testUniformCdf`",
               "reply": java_reply("The method was renamed.", c[0])}),
    ]
}

pub fn case_study_validator_rules() -> Vec<Value> {
    let c = CASE_STUDY_CANDIDATES;
    let d = CASE_STUDY_DIAGNOSTICS;
    vec![
        json!({"when": "uniformCdf(0.5)", "outcome": {"compile_error": [d[0]]}}),
        json!({"when": "int p = Stats.uniformCdf", "outcome": {"compile_error": [d[1]]}}),
        json!({"when": "uniformCdf(0.5, 1.0, 0.0)", "outcome": {"test_failure": [d[2]]}}),
        json!({"when": c[3], "outcome": "pass"}),
    ]
}

pub const LEARN_ROUND_1: &str = "AL: A change to a method's name or parameter list breaks every test that calls it.\n\
PI: A test that only passes literal arguments to an unchanged signature keeps compiling.\n\
CP: A body-only change that preserves the documented result leaves its tests valid.";

pub const LEARN_ROUND_2: &str = "AL: Renaming a method or changing its parameter list makes every calling test obsolete.\n\
PI: Tests whose calls still match the signature are unaffected by internal rewrites.\n\
CP: Guards added for inputs the test never uses do not require a test update.";

/// Chat transcript for the whole fixture pipeline.
pub fn pipeline_transcript() -> Value {
    let mut rules = vec![
        json!({"run": "learn", "when": "Derive general rules", "reply": LEARN_ROUND_1}),
        json!({"run": "learn", "when": "revise them", "reply": LEARN_ROUND_2}),
        json!({"run": "identify:", "when": "test method `testUniformCdf`",
               "reply": "The method was renamed and gained bounds, so the call no longer compiles.\nVERDICT: YES"}),
        json!({"run": "identify:", "when": "test method `testCapitalize`",
               "reply": "capitalize gained a parameter.\nVERDICT: YES"}),
        json!({"run": "identify:", "when": "test method `testMean`",
               "reply": "The empty-input guard might change results.\nVERDICT: YES"}),
        json!({"run": "identify:", "when": "test method `testReverse`",
               "reply": "Only the implementation changed.\nVERDICT: NO"}),
        json!({"run": "update:", "when": "test method `testCapitalize`",
               "reply": java_reply("Pass the new flag.", "@Test\npublic void testCapitalize() {\n    assertEquals(\"Hello\", Text.capitalize(\"hELLO\", true));\n}")}),
        json!({"run": "update:", "when": "does not execute",
               "reply": java_reply("Same test.", "@Test\npublic void testMean() {\n    assertEquals(2.0, Stats.mean(new double[] {1.0, 2.0, 3.0}), 1e-9);\n}")}),
        json!({"run": "update:", "when": "test method `testMean`",
               "reply": java_reply("The test still holds.", "@Test\npublic void testMean() {\n    assertEquals(2.0, Stats.mean(new double[] {1.0, 2.0, 3.0}), 1e-9);\n}")}),
    ];
    rules.splice(0..0, case_study_chat_rules());
    json!({"rules": rules})
}

/// Validator script for the whole fixture pipeline. The `mean` session never
/// covers its new guard and exhausts its iterations.
pub fn pipeline_validator_script() -> Value {
    let mut rules = case_study_validator_rules();
    rules.push(json!({"when": "Text.capitalize(\"hELLO\", true)", "outcome": "pass"}));
    rules.push(json!({"when": "Stats.mean(", "outcome": "no_coverage"}));
    json!({"rules": rules})
}

/// Writes `transcript.json`, `validator.json` and `run.toml` for the fixture
/// pipeline into `dir`.
pub fn write_pipeline_scripts(dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let pretty = |v: &Value| serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(io::Error::other);
    fs::write(dir.join("transcript.json"), pretty(&pipeline_transcript())?)?;
    fs::write(dir.join("validator.json"), pretty(&pipeline_validator_script())?)?;
    fs::write(
        dir.join("run.toml"),
        "[chat]\ntranscript = \"transcript.json\"\n\n[adapter]\nkind = \"scripted\"\nscript = \"validator.json\"\n\n[run]\nconcurrency = 2\nretry_base_delay_ms = 0\n",
    )
}

/// A one-class Maven project with a JaCoCo-instrumented JUnit test.
pub fn create_maven_project(dir: &Path) -> io::Result<()> {
    write(
        dir,
        "pom.xml",
        r#"<?xml version="1.0" encoding="UTF-8"?>
<project xmlns="http://maven.apache.org/POM/4.0.0">
  <modelVersion>4.0.0</modelVersion>
  <groupId>com.example</groupId>
  <artifactId>smoke</artifactId>
  <version>1.0</version>
  <properties>
    <maven.compiler.source>11</maven.compiler.source>
    <maven.compiler.target>11</maven.compiler.target>
    <project.build.sourceEncoding>UTF-8</project.build.sourceEncoding>
  </properties>
  <dependencies>
    <dependency>
      <groupId>junit</groupId>
      <artifactId>junit</artifactId>
      <version>4.13.2</version>
      <scope>test</scope>
    </dependency>
  </dependencies>
</project>
"#,
    )?;
    write(dir, "src/main/java/com/example/smoke/Calc.java", "package com.example.smoke;\n\npublic class Calc {\n\n    public static int add(int a, int b) {\n        return a + b;\n    }\n}\n")?;
    write(
        dir,
        "src/test/java/com/example/smoke/CalcTest.java",
        "package com.example.smoke;\n\nimport static org.junit.Assert.assertEquals;\n\nimport org.junit.Test;\n\npublic class CalcTest {\n\n    @Test\n    public void testAdd() {\n        assertEquals(3, Calc.add(1, 2));\n    }\n}\n",
    )
}

fn method_text(source: &str, name: &str) -> String {
    crate::changemining::scan_methods(source)
        .expect("fixture sources scan")
        .into_iter()
        .find(|m| m.name == name)
        .map(|m| m.text)
        .expect("fixture method exists")
}

fn meta(version: &str, package: &str, class: &str) -> ChangeMeta {
    ChangeMeta {
        version: version.to_string(),
        module: String::new(),
        package: package.to_string(),
        class: class.to_string(),
        change_type: ChangeType::Edit,
    }
}

/// The uniform CDF rename as a pair, built without a repository.
pub fn motivating_pair() -> ChangePair {
    let version = "0".repeat(40);
    ChangePair {
        group: "fixture".into(),
        project: "stats".into(),
        change_p: meta(&version, "com.example.stats", "Stats"),
        change_t: meta(&version, "com.example.stats", "StatsTest"),
        prod_old: method_text(STATS_V0, "UniformCdf"),
        prod_new: method_text(STATS_V1, "uniformCdf"),
        test_old: method_text(STATS_TEST_V0, "testUniformCdf"),
        test_new: Some(method_text(STATS_TEST_V1, "testUniformCdf")),
        label: Label::Positive,
    }
}

/// The `capitalize` change as a pair, used as the retrieved example.
pub fn capitalize_pair() -> ChangePair {
    let version = "1".repeat(40);
    ChangePair {
        group: "fixture".into(),
        project: "text".into(),
        change_p: meta(&version, "com.example.text", "Text"),
        change_t: meta(&version, "com.example.text", "TextTest"),
        prod_old: method_text(TEXT_V0, "capitalize"),
        prod_new: method_text(TEXT_V1, "capitalize"),
        test_old: method_text(TEXT_TEST_V0, "testCapitalize"),
        test_new: Some(method_text(TEXT_TEST_V1, "testCapitalize")),
        label: Label::Positive,
    }
}

/// Validation context for `pair` with the given required lines.
pub fn context_for(pair: &ChangePair, run_key: &str, required_lines: BTreeSet<LineRef>) -> ValidationContext {
    let (method, arity) = crate::changemining::signature_of(&pair.test_old).unwrap_or_default();
    ValidationContext {
        run_key: run_key.to_string(),
        workspace: None,
        target: TestTarget {
            module: pair.change_t.module.clone(),
            package: pair.change_t.package.clone(),
            class: pair.change_t.class.clone(),
            method,
            arity,
        },
        required_lines,
    }
}

/// Replays the four-iteration uniform CDF repair with scripted chat and
/// validation, using the `capitalize` change as the retrieved example.
pub fn run_case_study() -> Result<UpdateSession, UpdateError> {
    let provider: Transcript =
        serde_json::from_value(json!({ "rules": case_study_chat_rules() })).expect("case-study transcript");
    let script: ValidatorScript =
        serde_json::from_value(json!({ "rules": case_study_validator_rules() })).expect("case-study script");
    let gateway = Gateway::new(Arc::new(ScriptedProvider::new(provider)), SamplingParams::default());
    let validator = ScriptedValidator::new(script);
    let pair = motivating_pair();
    let example = capitalize_pair();
    let sample = RetrievedSample {
        entry_id: "kb-000001".into(),
        score: 1.0,
        prod_diff_text: example.prod_diff_text(),
        test_diff_text: example.test_diff_text(),
    };
    let required = [LineRef::new("com/example/stats/Stats.java", 2)].into();
    let request = UpdateRequest {
        pair: &pair,
        sample: Some(sample),
        context: context_for(&pair, &format!("update:{}", pair.sample_id()), required),
        source: None,
    };
    updater::update(request, &gateway, &validator, UpdateOptions::default())
}
