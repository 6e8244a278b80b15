//! Vector knowledge base of historical co-evolution samples.
//!
//! Production diffs are split into token blocks, each block is embedded, and
//! an entry's vector is the mean of its block vectors. Retrieval is an exact
//! cosine scan over every entry.

mod embed;
mod tokenize;

use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::changemining::{ChangePair, Label};
use crate::fsutil;

pub use embed::{EmbedError, EmbeddingProvider, EmbeddingVector, HashingEmbedder, RemoteEmbedder};
pub use tokenize::{tokenize, tokenize_diff, BlockSpec, TokenBlock};

const ENTRIES_FILE: &str = "entries.jsonl";
const VECTORS_FILE: &str = "vectors.f32";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum KbError {
    #[error("block size {size} with overlap {overlap} is invalid (need size >= 1 and overlap < size)")]
    InvalidBlockSpec { size: usize, overlap: usize },
    #[error("vector dimensions differ: {expected} vs {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("cosine similarity is undefined for an all-zero vector")]
    ZeroVector,
    #[error("vector contains non-finite values")]
    NonFinite,
    #[error("knowledge base is empty")]
    EmptyStore,
    #[error("query diff contains no tokens")]
    EmptyQuery,
    #[error("store was built with embedder {store} but {provider} was supplied")]
    EmbedderMismatch { store: String, provider: String },
    #[error(transparent)]
    Embedding(#[from] EmbedError),
    #[error("knowledge base I/O: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt knowledge base: {0}")]
    Corrupt(String),
}

/// Cosine of the angle between two vectors, computed in `f64`.
pub fn cosine_similarity(c: &EmbeddingVector, s: &EmbeddingVector) -> Result<f64, KbError> {
    if c.dimension() != s.dimension() {
        return Err(KbError::DimensionMismatch {
            expected: c.dimension(),
            actual: s.dimension(),
        });
    }
    if !c.is_finite() || !s.is_finite() {
        return Err(KbError::NonFinite);
    }
    let (mut dot, mut nc, mut ns) = (0f64, 0f64, 0f64);
    for (a, b) in c.values.iter().zip(&s.values) {
        let (a, b) = (f64::from(*a), f64::from(*b));
        dot += a * b;
        nc += a * a;
        ns += b * b;
    }
    if nc == 0.0 || ns == 0.0 {
        return Err(KbError::ZeroVector);
    }
    Ok((dot / (nc.sqrt() * ns.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub group: String,
    pub project: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub entry_id: String,
    pub prod_diff_text: String,
    pub test_diff_text: String,
    #[serde(skip)]
    pub vector: EmbeddingVector,
    pub origin: Origin,
}

impl Default for EmbeddingVector {
    fn default() -> Self {
        EmbeddingVector::new(Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub dimension: usize,
    pub block_size: usize,
    pub overlap: usize,
    pub embedder: String,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    manifest: Manifest,
    entries: Vec<KnowledgeEntry>,
}

#[derive(Debug)]
pub struct BuildOutput {
    pub kb: KnowledgeBase,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    pub blocks: BlockSpec,
    /// Upper bound on entries embedded concurrently.
    pub max_in_flight: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            blocks: BlockSpec::default(),
            max_in_flight: 4,
        }
    }
}

/// A retrieval hit.
#[derive(Debug, Clone, Copy)]
pub struct Scored<'a> {
    pub entry: &'a KnowledgeEntry,
    pub score: f64,
}

fn embed_blocks(
    embedder: &dyn EmbeddingProvider,
    blocks: &[TokenBlock],
) -> Result<Option<EmbeddingVector>, KbError> {
    if blocks.is_empty() {
        return Ok(None);
    }
    let texts: Vec<String> = blocks.iter().map(|b| b.tokens.join(" ")).collect();
    let vectors = embedder.embed(&texts)?;
    if let Some(bad) = vectors.iter().find(|v| v.dimension() != vectors[0].dimension()) {
        return Err(KbError::DimensionMismatch {
            expected: vectors[0].dimension(),
            actual: bad.dimension(),
        });
    }
    if vectors.iter().any(|v| !v.is_finite()) {
        return Err(KbError::NonFinite);
    }
    Ok(EmbeddingVector::mean(&vectors))
}

impl KnowledgeBase {
    pub fn empty(embedder: &str, blocks: BlockSpec) -> Self {
        KnowledgeBase {
            manifest: Manifest {
                dimension: 0,
                block_size: blocks.size(),
                overlap: blocks.overlap(),
                embedder: embedder.to_string(),
                count: 0,
            },
            entries: Vec::new(),
        }
    }

    /// Embeds the positive samples among `pairs`; anything else is skipped
    /// with a warning. Entry ids follow admission order.
    pub fn build(
        pairs: &[ChangePair],
        embedder: &dyn EmbeddingProvider,
        options: BuildOptions,
    ) -> Result<BuildOutput, KbError> {
        let mut warnings = Vec::new();
        let admitted: Vec<&ChangePair> = pairs
            .iter()
            .filter(|p| {
                let ok = p.label == Label::Positive;
                if !ok {
                    warnings.push(format!(
                        "{}: label {:?} is not admitted to the knowledge base",
                        p.sample_id(),
                        p.label
                    ));
                }
                ok
            })
            .collect();
        if admitted.is_empty() {
            warnings.push("no positive samples; the knowledge base is empty".to_string());
            warn!("building an empty knowledge base");
        }

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.max_in_flight.max(1))
            .build()
            .map_err(|e| KbError::Io(io::Error::other(e)))?;
        let embedded: Vec<Result<Option<KnowledgeEntry>, KbError>> = pool.install(|| {
            admitted
                .par_iter()
                .enumerate()
                .map(|(i, pair)| {
                    let entry_id = format!("kb-{:06}", i + 1);
                    let prod_diff_text = pair.prod_diff_text();
                    let blocks = tokenize_diff(&prod_diff_text, options.blocks, &entry_id);
                    let Some(vector) = embed_blocks(embedder, &blocks)? else {
                        return Ok(None);
                    };
                    Ok(Some(KnowledgeEntry {
                        entry_id,
                        test_diff_text: pair.test_diff_text(),
                        prod_diff_text,
                        vector,
                        origin: Origin {
                            group: pair.group.clone(),
                            project: pair.project.clone(),
                            version: pair.change_p.version.clone(),
                        },
                    }))
                })
                .collect()
        });

        let mut kb = KnowledgeBase::empty(&embedder.id(), options.blocks);
        for (pair, result) in admitted.iter().zip(embedded) {
            match result? {
                Some(entry) => kb.push(entry)?,
                None => warnings.push(format!("{}: production diff has no tokens", pair.sample_id())),
            }
        }
        Ok(BuildOutput { kb, warnings })
    }

    /// Store over already embedded entries, in the given order.
    pub fn from_entries(embedder: &str, blocks: BlockSpec, entries: Vec<KnowledgeEntry>) -> Result<Self, KbError> {
        let mut kb = KnowledgeBase::empty(embedder, blocks);
        for e in entries {
            if !e.vector.is_finite() {
                return Err(KbError::NonFinite);
            }
            kb.push(e)?;
        }
        Ok(kb)
    }

    fn push(&mut self, entry: KnowledgeEntry) -> Result<(), KbError> {
        if self.entries.is_empty() {
            self.manifest.dimension = entry.vector.dimension();
        } else if entry.vector.dimension() != self.manifest.dimension {
            return Err(KbError::DimensionMismatch {
                expected: self.manifest.dimension,
                actual: entry.vector.dimension(),
            });
        }
        self.entries.push(entry);
        self.manifest.count = self.entries.len();
        Ok(())
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn entries(&self) -> &[KnowledgeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn block_spec(&self) -> BlockSpec {
        BlockSpec::new(self.manifest.block_size, self.manifest.overlap).unwrap_or_default()
    }

    /// Embeds a query diff the same way entries were embedded.
    pub fn query_vector(
        &self,
        embedder: &dyn EmbeddingProvider,
        query_diff_text: &str,
    ) -> Result<EmbeddingVector, KbError> {
        if embedder.id() != self.manifest.embedder {
            return Err(KbError::EmbedderMismatch {
                store: self.manifest.embedder.clone(),
                provider: embedder.id(),
            });
        }
        let blocks = tokenize_diff(query_diff_text, self.block_spec(), "query");
        embed_blocks(embedder, &blocks)?.ok_or(KbError::EmptyQuery)
    }

    /// The `k` entries most similar to `query`, by descending score and then
    /// ascending entry id.
    pub fn nearest(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<Scored<'_>>, KbError> {
        if self.entries.is_empty() {
            return Err(KbError::EmptyStore);
        }
        let mut scored = self
            .entries
            .iter()
            .map(|e| Ok(Scored {
                entry: e,
                score: cosine_similarity(query, &e.vector)?,
            }))
            .collect::<Result<Vec<_>, KbError>>()?;
        scored.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.entry.entry_id.cmp(&b.entry.entry_id))
        });
        scored.truncate(k.max(1));
        Ok(scored)
    }

    pub fn retrieve_most_similar(
        &self,
        embedder: &dyn EmbeddingProvider,
        query_diff_text: &str,
        k: usize,
    ) -> Result<Vec<Scored<'_>>, KbError> {
        if self.entries.is_empty() {
            return Err(KbError::EmptyStore);
        }
        let q = self.query_vector(embedder, query_diff_text)?;
        self.nearest(&q, k)
    }

    pub fn save(&self, dir: &Path) -> Result<(), KbError> {
        fsutil::atomic_dir(dir, |tmp| {
            fs::write(tmp.join(ENTRIES_FILE), fsutil::to_jsonl(&self.entries))?;
            let mut raw = Vec::with_capacity(self.entries.len() * self.manifest.dimension * 4);
            for e in &self.entries {
                for v in &e.vector.values {
                    raw.extend_from_slice(&v.to_le_bytes());
                }
            }
            fs::write(tmp.join(VECTORS_FILE), raw)?;
            let mut manifest = serde_json::to_vec_pretty(&self.manifest).map_err(io::Error::other)?;
            manifest.push(b'\n');
            fs::write(tmp.join(MANIFEST_FILE), manifest)
        })?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, KbError> {
        let manifest: Manifest = fsutil::read_json(&dir.join(MANIFEST_FILE))?;
        let mut entries: Vec<KnowledgeEntry> = fsutil::read_jsonl(&dir.join(ENTRIES_FILE))?;
        let raw = fs::read(dir.join(VECTORS_FILE))?;
        if entries.len() != manifest.count {
            return Err(KbError::Corrupt(format!(
                "manifest lists {} entries, found {}",
                manifest.count,
                entries.len()
            )));
        }
        let row = manifest.dimension * 4;
        if raw.len() != row * manifest.count {
            return Err(KbError::Corrupt(format!(
                "{VECTORS_FILE} holds {} bytes, expected {}",
                raw.len(),
                row * manifest.count
            )));
        }
        for (entry, chunk) in entries.iter_mut().zip(raw.chunks_exact(row.max(1))) {
            let values = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            entry.vector = EmbeddingVector::new(values);
        }
        BlockSpec::new(manifest.block_size, manifest.overlap)?;
        Ok(KnowledgeBase { manifest, entries })
    }
}
