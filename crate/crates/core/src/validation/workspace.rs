use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::changemining::scan_methods;

use super::ValidationError;

fn git(args: &[&str], cwd: Option<&Path>) -> Result<(), ValidationError> {
    let mut cmd = Command::new("git");
    if let Some(dir) = cwd {
        cmd.arg("-C").arg(dir);
    }
    let out = cmd.args(args).output()?;
    if !out.status.success() {
        return Err(ValidationError::Setup(format!(
            "git {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    Ok(())
}

/// Checks out `commit` of `repo` into a fresh directory `dir`.
pub fn prepare_workspace(repo: &Path, commit: &str, dir: &Path) -> Result<PathBuf, ValidationError> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    if let Some(parent) = dir.parent() {
        fs::create_dir_all(parent)?;
    }
    let repo = repo.canonicalize()?;
    let (repo_s, dir_s) = (repo.to_string_lossy(), dir.to_string_lossy());
    git(&["clone", "--quiet", "--shared", "--no-checkout", &repo_s, &dir_s], None)?;
    git(&["checkout", "--quiet", "--detach", commit], Some(dir))?;
    Ok(dir.to_path_buf())
}

/// Replaces method `(name, arity)` in `source` with the unindented
/// `replacement`, indenting it like the original. When the method is absent
/// the replacement is inserted before the final closing brace.
pub fn splice_method(source: &str, name: &str, arity: usize, replacement: &str) -> Result<String, ValidationError> {
    let methods = scan_methods(source).map_err(|e| ValidationError::WorkspaceCorrupt(e.to_string()))?;
    let replacement = replacement.trim();
    match methods.iter().find(|m| m.name == name && m.arity == arity) {
        Some(m) => {
            let line_start = source[..m.span.start].rfind('\n').map_or(0, |p| p + 1);
            let indent = &source[line_start..m.span.start];
            let indent = if indent.trim().is_empty() { indent } else { "" };
            let mut out = String::with_capacity(source.len() + replacement.len());
            out.push_str(&source[..m.span.start]);
            for (i, line) in replacement.split_inclusive('\n').enumerate() {
                if i > 0 && !line.trim().is_empty() {
                    out.push_str(indent);
                }
                out.push_str(line);
            }
            out.push_str(&source[m.span.end..]);
            Ok(out)
        }
        None => {
            let close = source
                .rfind('}')
                .ok_or_else(|| ValidationError::WorkspaceCorrupt("no class body".into()))?;
            let mut out = String::with_capacity(source.len() + replacement.len() + 8);
            out.push_str(source[..close].trim_end());
            out.push_str("\n\n");
            for line in replacement.split_inclusive('\n') {
                if !line.trim().is_empty() {
                    out.push_str("    ");
                }
                out.push_str(line);
            }
            out.push('\n');
            out.push_str(&source[close..]);
            Ok(out)
        }
    }
}
