use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use regex::Regex;
use tracing::debug;

use super::git::{FileStatus, Git};
use super::scanner::{scan_methods, MethodSpan};
use super::{ChangeMeta, ChangePair, ChangeType, MiningError, PairingConfig};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MineOutput {
    pub pairs: Vec<ChangePair>,
    /// Files that were skipped, one message per file.
    pub warnings: Vec<String>,
}

/// A source path split into its `module/root/package/Class.ext` parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourcePath {
    pub path: String,
    pub module: String,
    pub package: String,
    pub class: String,
}

impl SourcePath {
    pub fn parse(path: &str, root: &str, extensions: &[String]) -> Option<SourcePath> {
        let ext = Path::new(path).extension()?.to_str()?;
        if !extensions.iter().any(|e| e == ext) {
            return None;
        }
        let (module, rest) = if let Some(rest) = path.strip_prefix(&format!("{root}/")) {
            ("", rest)
        } else {
            let marker = format!("/{root}/");
            let idx = path.find(&marker)?;
            (&path[..idx], &path[idx + marker.len()..])
        };
        let (dirs, file) = match rest.rfind('/') {
            Some(i) => (&rest[..i], &rest[i + 1..]),
            None => ("", rest),
        };
        let class = file.strip_suffix(&format!(".{ext}"))?.to_string();
        Some(SourcePath {
            path: path.to_string(),
            module: module.to_string(),
            package: dirs.replace('/', "."),
            class,
        })
    }

    fn package_dir(&self) -> String {
        self.package.replace('.', "/")
    }
}

/// A method before and after a change, either side possibly absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodUnit {
    pub old: Option<MethodSpan>,
    pub new: Option<MethodSpan>,
}

impl MethodUnit {
    pub fn changed(&self) -> bool {
        match (&self.old, &self.new) {
            (Some(o), Some(n)) => o.text != n.text,
            _ => true,
        }
    }

    pub fn names(&self) -> BTreeSet<&str> {
        self.old
            .iter()
            .chain(self.new.iter())
            .map(|m| m.name.as_str())
            .collect()
    }

    fn display_name(&self) -> &str {
        self.new
            .as_ref()
            .or(self.old.as_ref())
            .map_or("", |m| m.name.as_str())
    }
}

/// Matches methods across two versions of a file by `(name, arity)`.
///
/// Unmatched methods are then paired as renames when their names differ only
/// by case (with equal arity, or as the only such pair), or when exactly one
/// removed and one added method share an arity.
pub fn method_units(old: &[MethodSpan], new: &[MethodSpan]) -> Vec<MethodUnit> {
    let new_keys: HashSet<_> = new.iter().map(MethodSpan::key).collect();
    let old_keys: HashSet<_> = old.iter().map(MethodSpan::key).collect();

    let mut units = Vec::new();
    let mut removed: Vec<&MethodSpan> = Vec::new();
    for m in old {
        if new_keys.contains(&m.key()) {
            let n = new.iter().find(|n| n.key() == m.key()).cloned();
            units.push(MethodUnit {
                old: Some(m.clone()),
                new: n,
            });
        } else {
            removed.push(m);
        }
    }
    let mut added: Vec<&MethodSpan> = new.iter().filter(|m| !old_keys.contains(&m.key())).collect();

    let mut removed_names: HashMap<String, usize> = HashMap::new();
    for r in &removed {
        *removed_names.entry(r.name.to_ascii_lowercase()).or_default() += 1;
    }
    removed.retain(|r| {
        let hit = added
            .iter()
            .position(|a| a.arity == r.arity && a.name.eq_ignore_ascii_case(&r.name))
            .or_else(|| {
                let same: Vec<usize> = (0..added.len())
                    .filter(|&i| added[i].name.eq_ignore_ascii_case(&r.name))
                    .collect();
                let unique = removed_names.get(&r.name.to_ascii_lowercase()) == Some(&1);
                (unique && same.len() == 1).then(|| same[0])
            });
        match hit {
            Some(i) => {
                let a = added.remove(i);
                units.push(MethodUnit {
                    old: Some((*r).clone()),
                    new: Some(a.clone()),
                });
                false
            }
            None => true,
        }
    });

    let arities: BTreeSet<usize> = removed.iter().map(|m| m.arity).collect();
    for arity in arities {
        let rs: Vec<_> = removed.iter().filter(|m| m.arity == arity).collect();
        let as_: Vec<_> = added.iter().filter(|m| m.arity == arity).collect();
        if rs.len() == 1 && as_.len() == 1 {
            let (r, a): (&MethodSpan, &MethodSpan) = (*rs[0], *as_[0]);
            units.push(MethodUnit {
                old: Some(r.clone()),
                new: Some(a.clone()),
            });
            removed.retain(|m| !std::ptr::eq(*m, r));
            added.retain(|m| !std::ptr::eq(*m, a));
        }
    }

    units.extend(removed.into_iter().map(|m| MethodUnit {
        old: Some(m.clone()),
        new: None,
    }));
    units.extend(added.into_iter().map(|m| MethodUnit {
        old: None,
        new: Some(m.clone()),
    }));
    units
}

fn reference_re(name: &str) -> Regex {
    let n = regex::escape(name);
    Regex::new(&format!(r"(?:\b{n}\s*\(|::{n}\b)")).expect("escaped name forms a valid pattern")
}

fn change_type(status: Option<FileStatus>) -> ChangeType {
    match status {
        Some(FileStatus::Added) => ChangeType::Create,
        Some(FileStatus::Deleted) => ChangeType::Delete,
        _ => ChangeType::Edit,
    }
}

type SortKey = (usize, String, String, String, String);

struct CommitMined {
    pairs: Vec<(SortKey, ChangePair)>,
    warnings: Vec<String>,
}

struct CommitCtx<'a> {
    git: &'a Git,
    cfg: &'a PairingConfig,
    project: &'a str,
    commit: &'a str,
    parent: Option<String>,
    index: usize,
}

impl CommitCtx<'_> {
    fn old_text(&self, path: &str) -> Option<String> {
        self.parent.as_deref().and_then(|p| self.git.show(p, path))
    }

    fn new_text(&self, path: &str) -> Option<String> {
        self.git.show(self.commit, path)
    }

    fn scan(&self, text: Option<&str>, path: &str, warnings: &mut Vec<String>) -> Option<Vec<MethodSpan>> {
        match text {
            None => Some(Vec::new()),
            Some(t) => match scan_methods(t) {
                Ok(ms) => Some(ms),
                Err(e) => {
                    warnings.push(format!("{}: {path}: {e}", self.commit));
                    None
                }
            },
        }
    }
}

/// Test files paired with `prod` by naming convention, falling back to test
/// files (changed in the commit or in the mirrored package) that import or
/// reference the production class.
fn paired_tests(
    ctx: &CommitCtx<'_>,
    prod: &SourcePath,
    test_files: &BTreeMap<String, SourcePath>,
    changed_tests: &BTreeMap<String, FileStatus>,
) -> Vec<String> {
    let pkg_dir = prod.package_dir();
    let prefix = if prod.module.is_empty() {
        format!("{}/", ctx.cfg.test_root)
    } else {
        format!("{}/{}/", prod.module, ctx.cfg.test_root)
    };

    let mut hits = Vec::new();
    for pattern in &ctx.cfg.test_name_patterns {
        let class = pattern.replace("{}", &prod.class);
        for ext in &ctx.cfg.extensions {
            let path = if pkg_dir.is_empty() {
                format!("{prefix}{class}.{ext}")
            } else {
                format!("{prefix}{pkg_dir}/{class}.{ext}")
            };
            if test_files.contains_key(&path) && !hits.contains(&path) {
                hits.push(path);
            }
        }
    }
    if !hits.is_empty() || !ctx.cfg.reference_fallback {
        return hits;
    }

    let import = Regex::new(&format!(
        r"(?m)^\s*import\s+{}\s*;",
        regex::escape(&format!("{}.{}", prod.package, prod.class))
    ))
    .expect("escaped import forms a valid pattern");
    let simple = Regex::new(&format!(r"\b{}\b", regex::escape(&prod.class)))
        .expect("escaped class name forms a valid pattern");

    for (path, sp) in test_files {
        let same_package = sp.package == prod.package && sp.module == prod.module;
        if !same_package && !changed_tests.contains_key(path) {
            continue;
        }
        let Some(text) = ctx.new_text(path).or_else(|| ctx.old_text(path)) else {
            continue;
        };
        if import.is_match(&text) || (same_package && simple.is_match(&text)) {
            hits.push(path.clone());
        }
    }
    hits
}

fn mine_commit(ctx: &CommitCtx<'_>) -> Result<CommitMined, MiningError> {
    let cfg = ctx.cfg;
    let changed = ctx.git.changed_files(ctx.commit)?;
    let mut out = CommitMined {
        pairs: Vec::new(),
        warnings: Vec::new(),
    };

    let prod_changes: Vec<(FileStatus, SourcePath)> = changed
        .iter()
        .filter_map(|(s, p)| SourcePath::parse(p, &cfg.prod_root, &cfg.extensions).map(|sp| (*s, sp)))
        .collect();
    if prod_changes.is_empty() {
        return Ok(out);
    }
    let changed_tests: BTreeMap<String, FileStatus> = changed
        .iter()
        .filter(|(_, p)| SourcePath::parse(p, &cfg.test_root, &cfg.extensions).is_some())
        .map(|(s, p)| (p.clone(), *s))
        .collect();

    let mut test_files: BTreeMap<String, SourcePath> = BTreeMap::new();
    let mut trees = vec![ctx.commit.to_string()];
    trees.extend(ctx.parent.clone());
    for tree in &trees {
        for path in ctx.git.list_files(tree)? {
            if let Some(sp) = SourcePath::parse(&path, &cfg.test_root, &cfg.extensions) {
                test_files.insert(path, sp);
            }
        }
    }

    for (status, prod) in &prod_changes {
        let old_src = ctx.old_text(&prod.path);
        let new_src = ctx.new_text(&prod.path);
        let Some(old_methods) = ctx.scan(old_src.as_deref(), &prod.path, &mut out.warnings) else {
            continue;
        };
        let Some(new_methods) = ctx.scan(new_src.as_deref(), &prod.path, &mut out.warnings) else {
            continue;
        };
        let prod_units: Vec<MethodUnit> = method_units(&old_methods, &new_methods)
            .into_iter()
            .filter(MethodUnit::changed)
            .collect();
        if prod_units.is_empty() {
            continue;
        }
        let change_p = ChangeMeta {
            version: ctx.commit.to_string(),
            module: prod.module.clone(),
            package: prod.package.clone(),
            class: prod.class.clone(),
            change_type: change_type(Some(*status)),
        };

        for test_path in paired_tests(ctx, prod, &test_files, &changed_tests) {
            let test_sp = &test_files[&test_path];
            let test_status = changed_tests.get(&test_path).copied();
            let t_old_src = ctx.old_text(&test_path);
            let t_new_src = ctx.new_text(&test_path);
            let Some(t_old) = ctx.scan(t_old_src.as_deref(), &test_path, &mut out.warnings) else {
                continue;
            };
            let Some(t_new) = ctx.scan(t_new_src.as_deref(), &test_path, &mut out.warnings) else {
                continue;
            };
            let test_units = method_units(&t_old, &t_new);
            let change_t = ChangeMeta {
                version: ctx.commit.to_string(),
                module: test_sp.module.clone(),
                package: test_sp.package.clone(),
                class: test_sp.class.clone(),
                change_type: change_type(test_status),
            };

            for pu in &prod_units {
                let refs: Vec<Regex> = pu.names().into_iter().map(reference_re).collect();
                for tu in &test_units {
                    let Some(t_old_m) = &tu.old else { continue };
                    // A test removed by a modified test file has no post-change form.
                    if tu.new.is_none() && test_status.is_some() {
                        continue;
                    }
                    let mentions = |m: &MethodSpan| refs.iter().any(|r| r.is_match(&m.text));
                    if !(mentions(t_old_m) || tu.new.as_ref().is_some_and(mentions)) {
                        continue;
                    }
                    let test_new = tu
                        .new
                        .as_ref()
                        .map_or_else(|| t_old_m.text.clone(), |m| m.text.clone());
                    let mut pair = ChangePair {
                        group: cfg.group.clone(),
                        project: ctx.project.to_string(),
                        change_p: change_p.clone(),
                        change_t: change_t.clone(),
                        prod_old: pu.old.as_ref().map(|m| m.text.clone()).unwrap_or_default(),
                        prod_new: pu.new.as_ref().map(|m| m.text.clone()).unwrap_or_default(),
                        test_old: t_old_m.text.clone(),
                        test_new: Some(test_new),
                        label: super::Label::Unlabeled,
                    };
                    pair.label = pair.historical_label();
                    let key = (
                        ctx.index,
                        prod.path.clone(),
                        pu.display_name().to_string(),
                        test_path.clone(),
                        tu.display_name().to_string(),
                    );
                    out.pairs.push((key, pair));
                }
            }
        }
    }
    debug!(commit = ctx.commit, pairs = out.pairs.len(), "mined commit");
    Ok(out)
}

/// Mines labeled change pairs from the commits in `from..to`.
///
/// Labels come from history: a pair is positive when its test method changed
/// in the same commit. Commits are mined in parallel and the result is sorted
/// by commit order, production path, method name, test path and test name.
pub fn mine_change_pairs(
    repo: &Path,
    from: &str,
    to: &str,
    cfg: &PairingConfig,
) -> Result<MineOutput, MiningError> {
    let git = Git::open(repo)?;
    let from_id = git.resolve(from)?;
    let to_id = git.resolve(to)?;
    if from_id == to_id {
        return Ok(MineOutput::default());
    }
    let commits = git.commits_between(&from_id, &to_id)?;
    let project = cfg.project.clone().unwrap_or_else(|| {
        repo.canonicalize()
            .ok()
            .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "project".to_string())
    });

    let mined: Vec<Result<CommitMined, MiningError>> = commits
        .par_iter()
        .enumerate()
        .map(|(index, commit)| {
            let ctx = CommitCtx {
                git: &git,
                cfg,
                project: &project,
                commit,
                parent: git.first_parent(commit)?,
                index,
            };
            mine_commit(&ctx)
        })
        .collect();

    let mut keyed = Vec::new();
    let mut warnings = Vec::new();
    for m in mined {
        let m = m?;
        keyed.extend(m.pairs);
        warnings.extend(m.warnings);
    }
    keyed.sort_by(|a, b| a.0.cmp(&b.0));

    let mut seen = HashSet::new();
    let pairs = keyed
        .into_iter()
        .map(|(_, p)| p)
        .filter(|p| {
            seen.insert((
                p.change_p.version.clone(),
                p.change_p.locator(),
                p.prod_signature(),
                p.change_t.locator(),
                p.test_signature(),
            ))
        })
        .collect();
    Ok(MineOutput { pairs, warnings })
}
