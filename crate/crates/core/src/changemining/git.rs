use std::path::{Path, PathBuf};
use std::process::Command;

use super::MiningError;

/// File status between a commit and its first parent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileStatus {
    Added,
    Deleted,
    Modified,
}

/// Read-only access to a repository through the `git` executable.
#[derive(Debug, Clone)]
pub struct Git {
    repo: PathBuf,
}

impl Git {
    pub fn open(repo: &Path) -> Result<Self, MiningError> {
        if !repo.is_dir() {
            return Err(MiningError::RepoUnreadable(format!(
                "{} is not a directory",
                repo.display()
            )));
        }
        let git = Git {
            repo: repo.to_path_buf(),
        };
        git.run(&["rev-parse", "--git-dir"])
            .map_err(|e| MiningError::RepoUnreadable(format!("{}: {e}", repo.display())))?;
        Ok(git)
    }

    pub fn path(&self) -> &Path {
        &self.repo
    }

    fn run(&self, args: &[&str]) -> Result<String, String> {
        let out = Command::new("git")
            .arg("-C")
            .arg(&self.repo)
            .args(args)
            .env("GIT_CONFIG_NOSYSTEM", "1")
            .output()
            .map_err(|e| format!("failed to run git: {e}"))?;
        if !out.status.success() {
            return Err(String::from_utf8_lossy(&out.stderr).trim().to_string());
        }
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    }

    /// Full commit id for a revision.
    pub fn resolve(&self, rev: &str) -> Result<String, MiningError> {
        self.run(&["rev-parse", "--verify", "--quiet", &format!("{rev}^{{commit}}")])
            .map(|s| s.trim().to_string())
            .map_err(|_| MiningError::CommitNotFound(rev.to_string()))
    }

    /// Commits reachable from `to` but not from `from`, parents first.
    pub fn commits_between(&self, from: &str, to: &str) -> Result<Vec<String>, MiningError> {
        let range = format!("{from}..{to}");
        let out = self
            .run(&["rev-list", "--topo-order", "--reverse", &range])
            .map_err(MiningError::Git)?;
        Ok(out.lines().map(str::to_string).collect())
    }

    pub fn first_parent(&self, commit: &str) -> Result<Option<String>, MiningError> {
        let out = self
            .run(&["rev-list", "--parents", "-n", "1", commit])
            .map_err(MiningError::Git)?;
        Ok(out.split_whitespace().nth(1).map(str::to_string))
    }

    /// Files changed by `commit` relative to its first parent (or the empty tree).
    pub fn changed_files(&self, commit: &str) -> Result<Vec<(FileStatus, String)>, MiningError> {
        let parent = self.first_parent(commit)?;
        let out = match &parent {
            Some(p) => self.run(&["diff-tree", "-r", "--no-renames", "--name-status", p, commit]),
            None => self.run(&["diff-tree", "-r", "--root", "--no-renames", "--name-status", commit]),
        }
        .map_err(MiningError::Git)?;

        let mut files = Vec::new();
        for line in out.lines() {
            let mut parts = line.splitn(2, '\t');
            let (Some(status), Some(path)) = (parts.next(), parts.next()) else {
                continue;
            };
            let status = match status.chars().next() {
                Some('A') => FileStatus::Added,
                Some('D') => FileStatus::Deleted,
                Some('M') | Some('T') => FileStatus::Modified,
                _ => continue,
            };
            files.push((status, path.to_string()));
        }
        files.sort_by(|a, b| a.1.cmp(&b.1));
        Ok(files)
    }

    /// Blob content at `commit:path`, or `None` when the path does not exist there.
    pub fn show(&self, commit: &str, path: &str) -> Option<String> {
        self.run(&["show", &format!("{commit}:{path}")]).ok()
    }

    pub fn list_files(&self, commit: &str) -> Result<Vec<String>, MiningError> {
        let out = self
            .run(&["ls-tree", "-r", "--name-only", commit])
            .map_err(MiningError::Git)?;
        Ok(out.lines().map(str::to_string).collect())
    }
}
