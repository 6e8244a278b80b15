use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use quick_xml::events::Event;
use quick_xml::Reader;
use regex::Regex;
use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use super::coverage::{parse_coverage_report, CoverageFormat, CoverageMode, CoverageRecord};
use super::workspace::splice_method;
use super::{TestResult, TestStatus, TestTarget, ValidationAdapter, ValidationContext, ValidationError, ValidationReport};

/// Shell commands for each stage. Commands run through `sh -c` in the
/// workspace with `{module}`, `{package}`, `{class}`, `{method}`,
/// `{test_file}` and `{test_fqcn}` substituted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommandAdapterConfig {
    pub compile: String,
    pub test: String,
    pub coverage: Option<String>,
    /// Coverage report, relative to the workspace.
    pub report_path: String,
    pub report_format: CoverageFormat,
    /// Directory of JUnit XML results; exit status decides when unset.
    pub junit_dir: Option<String>,
    pub test_root: String,
    pub extension: String,
    pub diagnostic_pattern: String,
    pub timeout_secs: u64,
    pub coverage_mode: CoverageMode,
}

impl Default for CommandAdapterConfig {
    fn default() -> Self {
        CommandAdapterConfig::maven()
    }
}

impl CommandAdapterConfig {
    pub fn maven() -> Self {
        CommandAdapterConfig {
            compile: "mvn -q -B -o test-compile".into(),
            test: "mvn -q -B -o surefire:test -DfailIfNoTests=false -Dtest='{class}#{method}'".into(),
            coverage: Some(
                "mvn -q -B -o org.jacoco:jacoco-maven-plugin:prepare-agent surefire:test \
                 org.jacoco:jacoco-maven-plugin:report -DfailIfNoTests=false -Dtest='{class}#{method}'"
                    .into(),
            ),
            report_path: "target/site/jacoco/jacoco.xml".into(),
            report_format: CoverageFormat::XmlLineReport,
            junit_dir: Some("target/surefire-reports".into()),
            test_root: "src/test/java".into(),
            extension: "java".into(),
            diagnostic_pattern: r"(?m)^.*(\[ERROR\]|error:).*$".into(),
            timeout_secs: 300,
            coverage_mode: CoverageMode::All,
        }
    }
}

struct StageOutput {
    success: bool,
    timed_out: bool,
    output: String,
}

fn run_shell(cmd: &str, cwd: &Path, timeout: Duration) -> Result<StageOutput, ValidationError> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()?;
    let mut out = child.stdout.take().expect("piped stdout");
    let mut err = child.stderr.take().expect("piped stderr");
    let out_reader = thread::spawn(move || {
        let mut s = Vec::new();
        let _ = out.read_to_end(&mut s);
        s
    });
    let err_reader = thread::spawn(move || {
        let mut s = Vec::new();
        let _ = err.read_to_end(&mut s);
        s
    });
    let status = child.wait_timeout(timeout)?;
    let timed_out = status.is_none();
    let status = match status {
        Some(s) => s,
        None => {
            let _ = child.kill();
            child.wait()?
        }
    };
    let mut output = String::from_utf8_lossy(&out_reader.join().unwrap_or_default()).into_owned();
    output.push_str(&String::from_utf8_lossy(&err_reader.join().unwrap_or_default()));
    Ok(StageOutput {
        success: status.success() && !timed_out,
        timed_out,
        output,
    })
}

fn tail(text: &str, lines: usize) -> String {
    let all: Vec<&str> = text.lines().collect();
    all[all.len().saturating_sub(lines)..].join("\n")
}

/// Parses `<testcase>` elements of JUnit XML reports belonging to `class`.
pub(crate) fn parse_junit(xml: &str, class: &str) -> Result<Vec<TestResult>, ValidationError> {
    let mut reader = Reader::from_str(xml);
    let mut results = Vec::new();
    let mut current: Option<TestResult> = None;
    let malformed = |e: &dyn std::fmt::Display| ValidationError::Script(format!("junit report: {e}"));
    loop {
        match reader.read_event().map_err(|e| malformed(&e))? {
            Event::Start(e) | Event::Empty(e) if e.name().as_ref() == b"testcase" => {
                if let Some(done) = current.take() {
                    results.push(done);
                }
                let mut name = String::new();
                let mut classname = String::new();
                for a in e.attributes().flatten() {
                    let v = a.unescape_value().map_err(|e| malformed(&e))?.into_owned();
                    match a.key.as_ref() {
                        b"name" => name = v,
                        b"classname" => classname = v,
                        _ => {}
                    }
                }
                let simple = classname.rsplit('.').next().unwrap_or("");
                if simple == class {
                    current = Some(TestResult {
                        name: format!("{simple}#{name}"),
                        status: TestStatus::Pass,
                        message: String::new(),
                    });
                }
            }
            Event::Start(e) | Event::Empty(e) if matches!(e.name().as_ref(), b"failure" | b"error") => {
                if let Some(t) = current.as_mut() {
                    t.status = if e.name().as_ref() == b"failure" { TestStatus::Fail } else { TestStatus::Error };
                    for a in e.attributes().flatten() {
                        if a.key.as_ref() == b"message" {
                            t.message = a.unescape_value().map_err(|e| malformed(&e))?.into_owned();
                        }
                    }
                }
            }
            Event::End(e) if e.name().as_ref() == b"testcase" => {
                if let Some(done) = current.take() {
                    results.push(done);
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if let Some(done) = current.take() {
        results.push(done);
    }
    Ok(results)
}

/// Adapter that drives a real build tool through shell commands.
pub struct CommandAdapter {
    config: CommandAdapterConfig,
    diagnostics: Regex,
    pristine: Mutex<HashMap<PathBuf, String>>,
}

impl CommandAdapter {
    pub fn new(config: CommandAdapterConfig) -> Result<Self, ValidationError> {
        let diagnostics = Regex::new(&config.diagnostic_pattern)
            .map_err(|e| ValidationError::Setup(format!("bad diagnostic pattern: {e}")))?;
        Ok(CommandAdapter {
            config,
            diagnostics,
            pristine: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &CommandAdapterConfig {
        &self.config
    }

    fn expand(&self, template: &str, target: &TestTarget) -> String {
        let fqcn = if target.package.is_empty() {
            target.class.clone()
        } else {
            format!("{}.{}", target.package, target.class)
        };
        let file = target.file_path(&self.config.test_root, &self.config.extension);
        template
            .replace("{module}", &target.module)
            .replace("{package}", &target.package)
            .replace("{class}", &target.class)
            .replace("{method}", &target.method)
            .replace("{test_file}", &file.to_string_lossy())
            .replace("{test_fqcn}", &fqcn)
    }

    fn workspace<'a>(&self, ctx: &'a ValidationContext) -> Result<&'a Path, ValidationError> {
        let ws = ctx
            .workspace
            .as_deref()
            .ok_or_else(|| ValidationError::WorkspaceCorrupt("no workspace for command adapter".into()))?;
        if !ws.is_dir() {
            return Err(ValidationError::WorkspaceCorrupt(format!("{} is not a directory", ws.display())));
        }
        Ok(ws)
    }

    /// Writes `candidate` into the pristine test file and returns that content.
    fn install(&self, ws: &Path, target: &TestTarget, candidate: &str) -> Result<(PathBuf, String), ValidationError> {
        let path = ws.join(target.file_path(&self.config.test_root, &self.config.extension));
        let pristine = {
            let mut cache = self.pristine.lock().expect("pristine cache poisoned");
            match cache.get(&path) {
                Some(s) => s.clone(),
                None => {
                    let s = fs::read_to_string(&path).map_err(|e| {
                        ValidationError::WorkspaceCorrupt(format!("cannot read {}: {e}", path.display()))
                    })?;
                    cache.insert(path.clone(), s.clone());
                    s
                }
            }
        };
        let spliced = splice_method(&pristine, &target.method, target.arity, candidate)?;
        fs::write(&path, spliced)?;
        Ok((path, pristine))
    }

    fn compile_diagnostics(&self, out: &StageOutput) -> Vec<String> {
        if out.timed_out {
            return vec![format!("compilation timed out after {} s", self.config.timeout_secs)];
        }
        let found: Vec<String> = self
            .diagnostics
            .find_iter(&out.output)
            .map(|m| m.as_str().trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if found.is_empty() {
            vec![tail(&out.output, 20)]
        } else {
            found
        }
    }

    fn test_results(&self, ws: &Path, target: &TestTarget, out: &StageOutput) -> Result<Vec<TestResult>, ValidationError> {
        let name = target.display_name();
        if out.timed_out {
            return Ok(vec![TestResult {
                name,
                status: TestStatus::Error,
                message: format!("test run timed out after {} s", self.config.timeout_secs),
            }]);
        }
        if let Some(dir) = &self.config.junit_dir {
            let dir = ws.join(dir);
            let mut results = Vec::new();
            if dir.is_dir() {
                let mut files: Vec<_> = fs::read_dir(&dir)?
                    .filter_map(Result::ok)
                    .map(|e| e.path())
                    .filter(|p| p.extension().is_some_and(|e| e == "xml"))
                    .collect();
                files.sort();
                for f in files {
                    results.extend(parse_junit(&fs::read_to_string(&f)?, &target.class)?);
                }
            }
            let wanted = format!("{}#{}", target.class, target.method);
            let own: Vec<_> = results.iter().filter(|r| r.name == wanted).cloned().collect();
            if !own.is_empty() {
                return Ok(own);
            }
        }
        Ok(vec![TestResult {
            name,
            status: if out.success { TestStatus::Pass } else { TestStatus::Fail },
            message: if out.success { String::new() } else { tail(&out.output, 20) },
        }])
    }

    fn coverage(&self, ctx: &ValidationContext, ws: &Path) -> Result<CoverageRecord, ValidationError> {
        let timeout = Duration::from_secs(self.config.timeout_secs);
        if let Some(cmd) = &self.config.coverage {
            let out = run_shell(&self.expand(cmd, &ctx.target), ws, timeout)?;
            if !out.success {
                return Err(ValidationError::Setup(format!("coverage run failed: {}", tail(&out.output, 20))));
            }
        }
        let bytes = fs::read(ws.join(&self.config.report_path))?;
        let per_line = parse_coverage_report(&bytes, self.config.report_format)?;
        Ok(CoverageRecord::evaluate(per_line, ctx.required_lines.clone(), self.config.coverage_mode))
    }

    fn run_stages(&self, ctx: &ValidationContext, ws: &Path) -> Result<ValidationReport, ValidationError> {
        let timeout = Duration::from_secs(self.config.timeout_secs);
        let compiled = run_shell(&self.expand(&self.config.compile, &ctx.target), ws, timeout)?;
        if !compiled.success {
            return Ok(ValidationReport::compile_failed(self.compile_diagnostics(&compiled)));
        }
        if let Some(dir) = &self.config.junit_dir {
            let dir = ws.join(dir);
            if dir.is_dir() {
                fs::remove_dir_all(&dir)?;
            }
        }
        let tested = run_shell(&self.expand(&self.config.test, &ctx.target), ws, timeout)?;
        let results = self.test_results(ws, &ctx.target, &tested)?;
        ValidationReport::after_tests(results, || self.coverage(ctx, ws))
    }
}

impl ValidationAdapter for CommandAdapter {
    fn validate(&self, ctx: &ValidationContext, candidate_test: &str) -> Result<ValidationReport, ValidationError> {
        let ws = self.workspace(ctx)?;
        let started = Instant::now();
        let (path, pristine) = self.install(ws, &ctx.target, candidate_test)?;
        let report = self.run_stages(ctx, ws);
        fs::write(&path, pristine)?;
        let mut report = report?;
        report.wall_time_ms = started.elapsed().as_millis() as u64;
        Ok(report)
    }

    fn preflight(&self, ctx: &ValidationContext, ground_truth: Option<&str>) -> Result<(), ValidationError> {
        let ws = self.workspace(ctx)?;
        let restore = match ground_truth {
            Some(t) => Some(self.install(ws, &ctx.target, t)?),
            None => None,
        };
        let out = run_shell(
            &self.expand(&self.config.compile, &ctx.target),
            ws,
            Duration::from_secs(self.config.timeout_secs),
        );
        if let Some((path, pristine)) = restore {
            fs::write(path, pristine)?;
        }
        let out = out?;
        if !out.success {
            return Err(ValidationError::Setup(format!(
                "workspace does not compile: {}",
                self.compile_diagnostics(&out).join("; ")
            )));
        }
        Ok(())
    }

    fn needs_workspace(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validation::{LineRef, QualityLevel};

    const SUREFIRE: &str = r#"<?xml version="1.0"?>
<testsuite name="p.ATest">
  <testcase name="ok" classname="p.ATest" time="0.01"/>
  <testcase name="bad" classname="p.ATest"><failure message="a must be less than b" type="AssertionError">trace</failure></testcase>
  <testcase name="other" classname="p.BTest"/>
</testsuite>"#;

    #[test]
    fn junit_results_for_class() {
        let r = parse_junit(SUREFIRE, "ATest").unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].status, TestStatus::Pass);
        assert_eq!(r[1].status, TestStatus::Fail);
        assert_eq!(r[1].message, "a must be less than b");
    }

    fn fixture() -> (tempfile::TempDir, ValidationContext) {
        let dir = tempfile::tempdir().unwrap();
        let test_dir = dir.path().join("src/test/java/p");
        fs::create_dir_all(&test_dir).unwrap();
        fs::write(test_dir.join("ATest.java"), "class ATest {\n    void t() { old(); }\n}\n").unwrap();
        let ctx = ValidationContext {
            run_key: "update:x".into(),
            workspace: Some(dir.path().to_path_buf()),
            target: TestTarget {
                module: String::new(),
                package: "p".into(),
                class: "ATest".into(),
                method: "t".into(),
                arity: 0,
            },
            required_lines: [LineRef::new("p/A.java", 2)].into(),
        };
        (dir, ctx)
    }

    fn shell_config() -> CommandAdapterConfig {
        CommandAdapterConfig {
            compile: "grep -q 'void t' {test_file} || { echo 'error: missing t'; exit 1; }".into(),
            test: "grep -q fresh {test_file}".into(),
            coverage: Some(
                "printf 'SF:p/A.java\\nDA:2,1\\nend_of_record\\n' > cov.info".into(),
            ),
            report_path: "cov.info".into(),
            report_format: CoverageFormat::LcovText,
            junit_dir: None,
            timeout_secs: 10,
            ..CommandAdapterConfig::maven()
        }
    }

    #[test]
    fn shell_stages() {
        let (dir, ctx) = fixture();
        let a = CommandAdapter::new(shell_config()).unwrap();
        let r = a.validate(&ctx, "void x() {}").unwrap();
        assert_eq!(r.level, QualityLevel::CompilationFailure);
        assert_eq!(r.compile_diagnostics, vec!["error: missing t"]);
        assert_eq!(a.validate(&ctx, "void t() { stale(); }").unwrap().level, QualityLevel::TestFailure);
        assert_eq!(a.validate(&ctx, "void t() { fresh(); }").unwrap().level, QualityLevel::SatisfiesAll);
        let restored = fs::read_to_string(dir.path().join("src/test/java/p/ATest.java")).unwrap();
        assert!(restored.contains("old();"));
    }

    #[test]
    fn stage_timeout_is_reported() {
        let (_dir, ctx) = fixture();
        let a = CommandAdapter::new(CommandAdapterConfig {
            compile: "sleep 5".into(),
            timeout_secs: 1,
            ..shell_config()
        })
        .unwrap();
        let r = a.validate(&ctx, "void t() {}").unwrap();
        assert_eq!(r.level, QualityLevel::CompilationFailure);
        assert!(r.compile_diagnostics[0].contains("timed out"));
    }

    #[test]
    fn missing_workspace_is_corrupt() {
        let (_dir, mut ctx) = fixture();
        ctx.workspace = None;
        let a = CommandAdapter::new(shell_config()).unwrap();
        assert!(matches!(a.validate(&ctx, "x"), Err(ValidationError::WorkspaceCorrupt(_))));
    }
}
