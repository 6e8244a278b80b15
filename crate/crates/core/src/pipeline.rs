//! File-to-file phase runners shared by the service and the CLI. Every
//! artifact is written atomically and deterministically.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::changemining::{
    compute_diff, mine_change_pairs, scan_methods, signature_of, ChangePair, Label, MiningError, PairingConfig,
};
use crate::config::RunConfig;
use crate::fsutil;
use crate::identifier::{self, Decision, Experience, IdentifyError, LearnOptions};
use crate::knowledgebase::{BuildOptions, EmbeddingProvider, KbError, KnowledgeBase};
use crate::llmgateway::{AuditTrail, ChatProvider, Gateway};
use crate::metrics::{
    classification_metrics, per_project_rows, two_phase_accuracy, update_metrics, ConfusionCounts, JudgedSample,
    MetricsError, MetricsReport, SessionStatus,
};
use crate::updater::{self, RetrievedSample, SessionOutcome, SourceSnippet, UpdateError, UpdateOptions, UpdateRequest};
use crate::validation::{
    is_executable_line, prepare_workspace, LineRef, QualityLevel, TestTarget, ValidationAdapter, ValidationContext,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad or missing input supplied by the caller.
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Mining(#[from] MiningError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Identify(#[from] IdentifyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// True when the caller, not the engine, is at fault.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            PipelineError::Input(_)
                | PipelineError::Config(_)
                | PipelineError::Mining(MiningError::RepoUnreadable(_) | MiningError::CommitNotFound(_))
                | PipelineError::Identify(IdentifyError::InsufficientSamples { .. } | IdentifyError::NoExperiences)
                | PipelineError::Metrics(MetricsError::EmptyCounts | MetricsError::EmptySessionList)
                | PipelineError::Kb(KbError::InvalidBlockSpec { .. } | KbError::EmbedderMismatch { .. })
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Input(_) => "input",
            PipelineError::Mining(_) => "mining",
            PipelineError::Kb(_) => "knowledge_base",
            PipelineError::Identify(_) => "identify",
            PipelineError::Metrics(_) => "metrics",
            PipelineError::Config(_) => "config",
            PipelineError::Io(_) => "io",
        }
    }
}

fn read_input<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<Vec<T>, PipelineError> {
    if !path.is_file() {
        return Err(PipelineError::Input(format!("{what} file {} does not exist", path.display())));
    }
    fsutil::read_jsonl(path).map_err(|e| PipelineError::Input(format!("{what} file: {e}")))
}

fn gateway(config: &RunConfig, provider: Arc<dyn ChatProvider>, audit: &Arc<AuditTrail>) -> Gateway {
    Gateway::new(provider, config.sampling)
        .with_retry(config.retry_policy())
        .with_audit(audit.clone())
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| PipelineError::Io(std::io::Error::other(e)))
}

fn write_audit(audit: &AuditTrail, path: &Path) -> Result<(), PipelineError> {
    let records = audit.drain();
    fsutil::write_jsonl(path, &records)?;
    Ok(())
}

// ---- mining ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub id: String,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MineRequest {
    pub repo: PathBuf,
    pub from: String,
    pub to: String,
    pub out: PathBuf,
    #[serde(default)]
    pub label_from: Option<PathBuf>,
    #[serde(default)]
    pub unlabeled: bool,
    #[serde(default)]
    pub pairing: Option<PairingConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MineSummary {
    pub pairs: usize,
    pub positive: usize,
    pub negative: usize,
    pub unlabeled: usize,
    pub warnings: Vec<String>,
}

pub fn mine(req: &MineRequest, config: &RunConfig) -> Result<MineSummary, PipelineError> {
    let pairing = req.pairing.clone().unwrap_or_else(|| config.mining.clone());
    let out = mine_change_pairs(&req.repo, &req.from, &req.to, &pairing)?;
    let mut warnings = out.warnings;
    let mut pairs = out.pairs;
    if let Some(gt_path) = &req.label_from {
        let truth: HashMap<String, Label> = read_input::<GroundTruthRecord>(gt_path, "ground truth")?
            .into_iter()
            .map(|r| (r.id, r.label))
            .collect();
        for p in &mut pairs {
            let id = p.sample_id();
            match truth.get(&id) {
                Some(label) => p.label = *label,
                None => {
                    warnings.push(format!("{id}: not in the ground truth; left unlabeled"));
                    p.label = Label::Unlabeled;
                }
            }
        }
    } else if req.unlabeled {
        pairs = pairs.into_iter().map(ChangePair::into_unlabeled).collect();
    }
    fsutil::write_jsonl(&req.out, &pairs)?;
    let count = |l: Label| pairs.iter().filter(|p| p.label == l).count();
    info!(pairs = pairs.len(), "mined change pairs");
    Ok(MineSummary {
        pairs: pairs.len(),
        positive: count(Label::Positive),
        negative: count(Label::Negative),
        unlabeled: count(Label::Unlabeled),
        warnings,
    })
}

// ---- knowledge base -------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildKbRequest {
    pub pairs: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildKbSummary {
    pub count: usize,
    pub dimension: usize,
    pub embedder: String,
    pub warnings: Vec<String>,
}

pub fn build_kb(
    req: &BuildKbRequest,
    config: &RunConfig,
    embedder: &dyn EmbeddingProvider,
) -> Result<BuildKbSummary, PipelineError> {
    let pairs: Vec<ChangePair> = read_input(&req.pairs, "change pairs")?;
    let options = BuildOptions { blocks: config.block_spec()?, max_in_flight: config.kb.max_in_flight };
    let built = KnowledgeBase::build(&pairs, embedder, options)?;
    built.kb.save(&req.out)?;
    let m = built.kb.manifest();
    Ok(BuildKbSummary {
        count: m.count,
        dimension: m.dimension,
        embedder: m.embedder.clone(),
        warnings: built.warnings,
    })
}

// ---- experience learning --------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnRequest {
    pub pairs: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnSummary {
    pub experiences: usize,
    pub rounds: usize,
    pub round_files: Vec<PathBuf>,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

/// Learns experiences and writes them to `out`, with each round's set in
/// `<stem>.round-N.json` and the chat audit in `<stem>.audit.jsonl`.
pub fn learn(req: &LearnRequest, config: &RunConfig, provider: Arc<dyn ChatProvider>) -> Result<LearnSummary, PipelineError> {
    let pairs: Vec<ChangePair> = read_input(&req.pairs, "change pairs")?;
    let audit = Arc::new(AuditTrail::new());
    let g = gateway(config, provider, &audit);
    let options = LearnOptions {
        max_rounds: config.identify.learn_rounds,
        examples: config.identify.learn_examples,
        window: config.memory.window,
    };
    let result = identifier::learn_experience(&pairs, &g, options);
    write_audit(&audit, &sibling(&req.out, ".audit.jsonl"))?;
    let learned = result?;
    let mut round_files = Vec::new();
    for (i, round) in learned.rounds.iter().enumerate() {
        let path = sibling(&req.out, &format!(".round-{}.json", i + 1));
        identifier::save_experiences(&path, round)?;
        round_files.push(path);
    }
    identifier::save_experiences(&req.out, &learned.experiences)?;
    Ok(LearnSummary { experiences: learned.experiences.len(), rounds: learned.rounds.len(), round_files })
}

// ---- identification -------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub id: String,
    pub decision: Decision,
    pub explanation: String,
    pub rendered_prompt: String,
    pub raw_reply: String,
    pub pair: ChangePair,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifyRequest {
    pub pairs: PathBuf,
    pub experiences: PathBuf,
    pub out: PathBuf,
    /// Learn experiences from this labelled file first and write them to
    /// `experiences`.
    #[serde(default)]
    pub learn_from: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifyFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifySummary {
    pub verdicts: usize,
    pub obsolete: usize,
    pub failures: Vec<IdentifyFailure>,
}

pub fn identify(
    req: &IdentifyRequest,
    config: &RunConfig,
    provider: Arc<dyn ChatProvider>,
) -> Result<IdentifySummary, PipelineError> {
    if let Some(train) = &req.learn_from {
        learn(&LearnRequest { pairs: train.clone(), out: req.experiences.clone() }, config, provider.clone())?;
    }
    if !req.experiences.is_file() {
        return Err(PipelineError::Input(format!("experiences file {} does not exist", req.experiences.display())));
    }
    let experiences: Vec<Experience> = identifier::load_experiences(&req.experiences)
        .map_err(|e| PipelineError::Input(format!("experiences file: {e}")))?;
    if experiences.is_empty() {
        return Err(IdentifyError::NoExperiences.into());
    }
    let pairs: Vec<ChangePair> = read_input(&req.pairs, "change pairs")?;
    let audit = Arc::new(AuditTrail::new());
    let g = gateway(config, provider, &audit);
    let window = config.memory.window;
    let results: Vec<(String, Result<VerdictRecord, IdentifyError>)> = pool(config.run.concurrency)?.install(|| {
        pairs
            .par_iter()
            .map(|pair| {
                let id = pair.sample_id();
                let v = identifier::identify_pair(pair, &experiences, &g, window).map(|v| VerdictRecord {
                    id: id.clone(),
                    decision: v.decision,
                    explanation: v.explanation,
                    rendered_prompt: v.rendered_prompt,
                    raw_reply: v.raw_reply,
                    pair: pair.clone(),
                });
                (id, v)
            })
            .collect()
    });
    let mut verdicts = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(v) => verdicts.push(v),
            Err(e) => {
                warn!(%id, error = %e, "identification failed");
                failures.push(IdentifyFailure { id, error: e.to_string() });
            }
        }
    }
    fsutil::write_jsonl(&req.out, &verdicts)?;
    write_audit(&audit, &sibling(&req.out, ".audit.jsonl"))?;
    Ok(IdentifySummary {
        obsolete: verdicts.iter().filter(|v| v.decision.is_obsolete()).count(),
        verdicts: verdicts.len(),
        failures,
    })
}

// ---- update ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateRequestFiles {
    /// Verdicts (only OBSOLETE ones are updated) or plain change pairs (all
    /// are updated).
    pub input: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub kb: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub project: String,
    pub file: Option<String>,
    pub status: SessionStatus,
    pub outcome: Option<SessionOutcome>,
    pub iterations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateSummary {
    pub sessions: Vec<SessionSummary>,
    pub csr: Option<f64>,
    pub tps: Option<f64>,
    pub ucr: Option<f64>,
    pub skipped: usize,
}

pub const SESSIONS_SUMMARY_FILE: &str = "summary.json";

fn session_file_name(index: usize, id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect();
    let safe: String = safe.chars().take(120).collect();
    format!("{:04}-{safe}.json", index + 1)
}

fn read_update_input(path: &Path) -> Result<Vec<ChangePair>, PipelineError> {
    let rows: Vec<serde_json::Value> = read_input(path, "update input")?;
    let mut pairs = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        let bad = |e: serde_json::Error| PipelineError::Input(format!("{}:{}: {e}", path.display(), i + 1));
        if row.get("decision").is_some() {
            let v: VerdictRecord = serde_json::from_value(row).map_err(bad)?;
            if v.decision.is_obsolete() {
                pairs.push(v.pair);
            }
        } else {
            pairs.push(serde_json::from_value(row).map_err(bad)?);
        }
    }
    Ok(pairs)
}

/// Source path of the production class relative to the repository root.
fn prod_file(pair: &ChangePair, cfg: &PairingConfig) -> PathBuf {
    let target = TestTarget {
        module: pair.change_p.module.clone(),
        package: pair.change_p.package.clone(),
        class: pair.change_p.class.clone(),
        method: String::new(),
        arity: 0,
    };
    target.file_path(&cfg.prod_root, cfg.extensions.first().map_or("java", String::as_str))
}

/// Coverage key `package/dir/Class.ext`, matching line-report file names.
fn coverage_key(pair: &ChangePair, cfg: &PairingConfig) -> String {
    let ext = cfg.extensions.first().map_or("java", String::as_str);
    let dir = pair.change_p.package.replace('.', "/");
    if dir.is_empty() {
        format!("{}.{ext}", pair.change_p.class)
    } else {
        format!("{dir}/{}.{ext}", pair.change_p.class)
    }
}

/// Changed executable lines of the new production method, numbered in the
/// workspace file when one is available and from 1 within the method
/// otherwise.
fn required_lines(pair: &ChangePair, cfg: &PairingConfig, workspace: Option<&Path>) -> (BTreeSet<LineRef>, SourceSnippet) {
    let diff = compute_diff(&pair.prod_old, &pair.prod_new);
    let new_lines: Vec<&str> = pair.prod_new.lines().collect();
    let mut first_line = 1;
    if let (Some(ws), Some((name, arity))) = (workspace, signature_of(&pair.prod_new)) {
        if let Ok(src) = fs::read_to_string(ws.join(prod_file(pair, cfg))) {
            if let Ok(methods) = scan_methods(&src) {
                if let Some(m) = methods.iter().find(|m| m.name == name && m.arity == arity) {
                    first_line = m.start_line;
                }
            }
        }
    }
    let key = coverage_key(pair, cfg);
    let lines = diff
        .changed_lines_new
        .iter()
        .filter(|&&l| new_lines.get(l - 1).is_some_and(|t| is_executable_line(t)))
        .map(|&l| LineRef::new(key.clone(), l + first_line - 1))
        .collect();
    (lines, SourceSnippet { text: pair.prod_new.clone(), first_line })
}

fn test_target(pair: &ChangePair) -> TestTarget {
    let (method, arity) = signature_of(&pair.test_old).unwrap_or_default();
    TestTarget {
        module: pair.change_t.module.clone(),
        package: pair.change_t.package.clone(),
        class: pair.change_t.class.clone(),
        method,
        arity,
    }
}

fn retrieve(kb: Option<&KnowledgeBase>, embedder: &dyn EmbeddingProvider, pair: &ChangePair, k: usize) -> Result<Option<RetrievedSample>, KbError> {
    let Some(kb) = kb else { return Ok(None) };
    if kb.is_empty() {
        return Ok(None);
    }
    let prod_diff = pair.prod_diff_text();
    let hits = match kb.retrieve_most_similar(embedder, &prod_diff, k + 1) {
        Ok(h) => h,
        Err(KbError::EmptyQuery) => return Ok(None),
        Err(e) => return Err(e),
    };
    // A pair never serves as its own example.
    Ok(hits
        .into_iter()
        .find(|h| !(h.entry.origin.version == pair.change_p.version && h.entry.prod_diff_text == prod_diff))
        .map(|h| RetrievedSample::from_entry(h.entry, h.score)))
}

struct SessionResult {
    summary: SessionSummary,
    session: Option<updater::UpdateSession>,
}

#[allow(clippy::too_many_arguments)]
fn run_session(
    index: usize,
    pair: &ChangePair,
    config: &RunConfig,
    kb: Option<&KnowledgeBase>,
    embedder: &dyn EmbeddingProvider,
    g: &Gateway,
    validator: &dyn ValidationAdapter,
    work_root: &Path,
) -> Result<SessionResult, PipelineError> {
    let id = pair.sample_id();
    let mut summary = SessionSummary {
        id: id.clone(),
        project: pair.project.clone(),
        file: None,
        status: SessionStatus::Skipped,
        outcome: None,
        iterations: 0,
        error: None,
    };
    let workspace = if validator.needs_workspace() {
        let repo = config
            .update
            .repo
            .as_ref()
            .ok_or_else(|| PipelineError::Input("update.repo must name the repository to validate in".into()))?;
        let dir = work_root.join(format!("ws-{:04}", index + 1));
        match prepare_workspace(repo, &pair.change_p.version, &dir) {
            Ok(d) => Some(d),
            Err(e) => {
                summary.error = Some(e.to_string());
                return Ok(SessionResult { summary, session: None });
            }
        }
    } else {
        None
    };
    let (required, source) = required_lines(pair, &config.mining, workspace.as_deref());
    let sample = if config.update.zero_shot { None } else { retrieve(kb, embedder, pair, config.kb.k)? };
    let request = UpdateRequest {
        pair,
        sample,
        context: ValidationContext {
            run_key: format!("update:{id}"),
            workspace: workspace.clone(),
            target: test_target(pair),
            required_lines: required,
        },
        source: Some(source),
    };
    let options = UpdateOptions {
        max_iterations: config.update.max_iterations,
        window: config.memory.window,
        prompt_budget: config.update.prompt_budget,
    };
    let result = updater::update(request, g, validator, options);
    if let Some(ws) = &workspace {
        let _ = fs::remove_dir_all(ws);
    }
    match result {
        Ok(session) => {
            summary.status = SessionStatus::Ran(session.best_level());
            summary.outcome = Some(session.outcome);
            summary.iterations = session.iterations.len();
            summary.file = Some(session_file_name(index, &id));
            Ok(SessionResult { summary, session: Some(session) })
        }
        Err(UpdateError::ValidatorSetup(m)) => {
            summary.error = Some(m);
            Ok(SessionResult { summary, session: None })
        }
        Err(e) => {
            warn!(%id, error = %e, "update session failed");
            summary.error = Some(e.to_string());
            Ok(SessionResult { summary, session: None })
        }
    }
}

/// Runs one update session per input pair and writes one JSON file per
/// session, `summary.json` and `audit.jsonl` into `out_dir`.
pub fn update(
    req: &UpdateRequestFiles,
    config: &RunConfig,
    provider: Arc<dyn ChatProvider>,
    validator: Arc<dyn ValidationAdapter>,
    embedder: &dyn EmbeddingProvider,
) -> Result<UpdateSummary, PipelineError> {
    let pairs = read_update_input(&req.input)?;
    let kb_path = req.kb.clone().or_else(|| config.kb.path.clone());
    let kb = match (&kb_path, config.update.zero_shot) {
        (Some(p), false) => Some(KnowledgeBase::load(p)?),
        (None, false) => {
            warn!("no knowledge base given; prompting without examples");
            None
        }
        (_, true) => None,
    };
    let work_root = config
        .update
        .workspace_root
        .clone()
        .unwrap_or_else(|| req.out_dir.join("workspaces"));
    let audit = Arc::new(AuditTrail::new());
    let g = gateway(config, provider, &audit);

    let results: Vec<Result<SessionResult, PipelineError>> = pool(config.run.concurrency)?.install(|| {
        pairs
            .par_iter()
            .enumerate()
            .map(|(i, pair)| run_session(i, pair, config, kb.as_ref(), embedder, &g, validator.as_ref(), &work_root))
            .collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    fs::create_dir_all(&req.out_dir)?;
    for r in &results {
        if let (Some(session), Some(file)) = (&r.session, &r.summary.file) {
            fsutil::write_json(&req.out_dir.join(file), session)?;
        }
    }
    let _ = fs::remove_dir(&work_root);
    let summaries: Vec<SessionSummary> = results.into_iter().map(|r| r.summary).collect();
    let levels: Vec<QualityLevel> = summaries
        .iter()
        .filter_map(|s| match s.status {
            SessionStatus::Ran(l) => Some(l),
            SessionStatus::Skipped => None,
        })
        .collect();
    let rates = update_metrics(&levels).ok();
    let summary = UpdateSummary {
        skipped: summaries.len() - levels.len(),
        csr: rates.map(|r| r.csr),
        tps: rates.map(|r| r.tps),
        ucr: rates.map(|r| r.ucr),
        sessions: summaries,
    };
    fsutil::write_json(&req.out_dir.join(SESSIONS_SUMMARY_FILE), &summary)?;
    write_audit(&audit, &req.out_dir.join("audit.jsonl"))?;
    Ok(summary)
}

// ---- evaluation -----------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluateRequest {
    #[serde(default)]
    pub verdicts: Option<PathBuf>,
    #[serde(default)]
    pub sessions: Option<PathBuf>,
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    pub out_dir: PathBuf,
}

pub fn evaluate(req: &EvaluateRequest) -> Result<MetricsReport, PipelineError> {
    if req.verdicts.is_none() && req.sessions.is_none() {
        return Err(PipelineError::Input("nothing to evaluate: give verdicts and/or sessions".into()));
    }
    let verdicts: Vec<VerdictRecord> = match &req.verdicts {
        Some(p) => read_input(p, "verdicts")?,
        None => Vec::new(),
    };
    let truth: Option<HashMap<String, Label>> = match &req.ground_truth {
        Some(p) => Some(
            read_input::<GroundTruthRecord>(p, "ground truth")?
                .into_iter()
                .map(|r| (r.id, r.label))
                .collect(),
        ),
        None => None,
    };
    let label_of = |v: &VerdictRecord| match &truth {
        Some(t) => t.get(&v.id).copied().unwrap_or(Label::Unlabeled),
        None => v.pair.label,
    };
    let judged: Vec<JudgedSample> = verdicts
        .iter()
        .filter_map(|v| {
            let label = label_of(v);
            (label != Label::Unlabeled).then(|| JudgedSample {
                sample_id: v.id.clone(),
                actual_positive: label == Label::Positive,
                predicted_obsolete: v.decision.is_obsolete(),
            })
        })
        .collect();
    if req.verdicts.is_some() && judged.is_empty() {
        return Err(PipelineError::Input("no verdict has a ground-truth label".into()));
    }

    let summary: Option<UpdateSummary> = match &req.sessions {
        Some(dir) => {
            let path = dir.join(SESSIONS_SUMMARY_FILE);
            if !path.is_file() {
                return Err(PipelineError::Input(format!("{} does not exist", path.display())));
            }
            Some(fsutil::read_json(&path).map_err(|e| PipelineError::Input(format!("session summary: {e}")))?)
        }
        None => None,
    };

    let (counts, classification) = if judged.is_empty() {
        (None, None)
    } else {
        let c = ConfusionCounts::tally(judged.iter().map(|j| (j.predicted_obsolete, j.actual_positive)));
        (Some(c), Some(classification_metrics(c)?))
    };
    let (update, per_project, skipped, two_phase) = match &summary {
        Some(s) => {
            let levels: Vec<QualityLevel> = s
                .sessions
                .iter()
                .filter_map(|x| match x.status {
                    SessionStatus::Ran(l) => Some(l),
                    SessionStatus::Skipped => None,
                })
                .collect();
            let statuses: HashMap<String, SessionStatus> = s.sessions.iter().map(|x| (x.id.clone(), x.status)).collect();
            let two_phase = if judged.is_empty() { None } else { two_phase_accuracy(&judged, &statuses)? };
            (
                update_metrics(&levels).ok(),
                per_project_rows(s.sessions.iter().map(|x| (x.project.as_str(), x.status))),
                s.sessions.len() - levels.len(),
                two_phase,
            )
        }
        None => (None, Vec::new(), 0, None),
    };
    let report = MetricsReport {
        counts,
        classification,
        update,
        skipped_sessions: skipped,
        two_phase_accuracy: two_phase,
        per_project,
    };
    fs::create_dir_all(&req.out_dir)?;
    fsutil::write_json(&req.out_dir.join("metrics.json"), &report)?;
    fsutil::atomic_write(&req.out_dir.join("metrics.txt"), report.render_text().as_bytes())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn session_file_names_are_safe() {
        assert_eq!(session_file_name(0, "p@abc:A#f/1~T#t/0"), "0001-p_abc_A_f_1_T_t_0.json");
    }

    #[test]
    fn sibling_paths() {
        assert_eq!(sibling(Path::new("/x/experiences.json"), ".round-1.json"), PathBuf::from("/x/experiences.round-1.json"));
    }
}
