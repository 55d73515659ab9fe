//! Per-scene store of normal/abnormal behaviour patterns.
//!
//! Patterns enter through [`KnowledgeBase::insert_with_aggregation`]: an
//! incoming pattern is compared only against entries of the same scene and
//! label. If its mean similarity to them is below `tau` it is kept as a new
//! entry; otherwise every entry with similarity `>= tau` is merged with it
//! into one aggregated pattern. [`KnowledgeBase::consolidate`] finishes a
//! build pass by merging any pairs that still sit at or above `tau`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::slow_detector::client::{ChatClient, ClientError, EmbeddingClient};
use crate::slow_detector::prompts::{format_list, render, PromptTemplates};

pub const KB_VERSION: u32 = 1;
pub const DEFAULT_TAU: f64 = 0.85;
pub const DEFAULT_TOP_K: usize = 6;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero vector")]
    ZeroVector,
    #[error("knowledge base is empty")]
    Empty,
    #[error("tau must be in (0, 1], got {0}")]
    BadTau(f64),
    #[error("top-k must be >= 1")]
    BadK,
    #[error("embedding failed: {0}")]
    Embedding(#[from] ClientError),
    #[error("aggregation failed: {0}")]
    Aggregation(String),
    #[error("unsupported knowledge base version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("knowledge base embed_dim {found} does not match configured {expected}")]
    EmbedDim { found: usize, expected: usize },
    #[error("corrupt knowledge base: {0}")]
    Corrupt(String),
    #[error("cannot access {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Abnormal,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Normal => "normal",
            Label::Abnormal => "abnormal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pattern {
    pub id: String,
    pub scene_id: String,
    pub label: Label,
    pub text: String,
    pub embedding: Vec<f64>,
    pub merged_count: u32,
}

/// A pattern that has not been stored yet.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPattern {
    pub scene_id: String,
    pub label: Label,
    pub text: String,
    pub embedding: Vec<f64>,
}

impl RawPattern {
    pub fn embed(
        scene_id: &str,
        label: Label,
        text: &str,
        embedder: &dyn EmbeddingClient,
    ) -> Result<Self, KbError> {
        Ok(Self {
            scene_id: scene_id.to_string(),
            label,
            text: text.to_string(),
            embedding: embedder.embed(text)?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Provenance {
    pub chat_model: String,
    pub embed_model: String,
    pub tau: f64,
    pub seed: u64,
    pub generator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeBase {
    pub version: u32,
    pub embed_dim: usize,
    #[serde(default)]
    pub provenance: Provenance,
    #[serde(default)]
    pub next_seq: u64,
    pub entries: Vec<Pattern>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedItem {
    pub pattern: Pattern,
    pub similarity: f64,
}

/// Top-K retrieval result, most similar first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievedKnowledge {
    pub items: Vec<RetrievedItem>,
}

/// Merges the texts of a cluster of similar patterns into one rule.
pub trait Aggregator {
    fn aggregate(&self, texts: &[&str], embeddings: &[&[f64]]) -> Result<String, KbError>;
}

/// Keeps the member with the highest mean similarity to the rest of the
/// cluster (first one on ties).
pub struct MedoidAggregator;

impl Aggregator for MedoidAggregator {
    fn aggregate(&self, texts: &[&str], embeddings: &[&[f64]]) -> Result<String, KbError> {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, a) in embeddings.iter().enumerate() {
            let mut total = 0.0;
            for b in embeddings {
                total += cosine_sim(a, b)?;
            }
            if total > best.1 {
                best = (i, total);
            }
        }
        texts
            .get(best.0)
            .map(|t| t.to_string())
            .ok_or_else(|| KbError::Aggregation("empty cluster".into()))
    }
}

/// Asks a language model to merge the cluster into one phrase.
pub struct LlmAggregator<'a> {
    pub chat: &'a dyn ChatClient,
    pub templates: &'a PromptTemplates,
    pub temperature: f64,
}

impl Aggregator for LlmAggregator<'_> {
    fn aggregate(&self, texts: &[&str], _embeddings: &[&[f64]]) -> Result<String, KbError> {
        let list: Vec<String> = texts.iter().map(|t| t.to_string()).collect();
        let prompt = render(&self.templates.aggregate, &[("patterns", &format_list(&list)), ("scene_id", "")])
            .map_err(|e| KbError::Aggregation(e.to_string()))?;
        let reply = self.chat.complete(&prompt, &[], self.temperature)?;
        let line = reply
            .lines()
            .map(|l| l.trim().trim_start_matches(['-', '*']).trim().trim_matches('"'))
            .find(|l| !l.is_empty())
            .ok_or_else(|| KbError::Aggregation("model returned no text".into()))?;
        Ok(line.to_string())
    }
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64, KbError> {
    if a.len() != b.len() {
        return Err(KbError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(KbError::ZeroVector);
    }
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Statistics of one build pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MergeStats {
    pub inserted: usize,
    pub merged: usize,
    pub consolidated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Added,
    /// Merged with this many existing entries.
    Merged(usize),
}

fn check_tau(tau: f64) -> Result<(), KbError> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(KbError::BadTau(tau))
    }
}

struct HeapItem {
    sim: f64,
    idx: usize,
}

// Max-heap order = "worse" first: lower similarity, then later insertion.
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .sim
            .total_cmp(&self.sim)
            .then_with(|| self.idx.cmp(&other.idx))
    }
}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapItem {}

impl KnowledgeBase {
    pub fn new(embed_dim: usize) -> Self {
        Self {
            version: KB_VERSION,
            embed_dim,
            provenance: Provenance::default(),
            next_seq: 0,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn partition(&self, scene_id: &str, label: Label) -> impl Iterator<Item = &Pattern> {
        let scene = scene_id.to_string();
        self.entries
            .iter()
            .filter(move |e| e.scene_id == scene && e.label == label)
    }

    /// Distinct `(scene, label)` keys in first-insertion order.
    pub fn partition_keys(&self) -> Vec<(String, Label)> {
        let mut keys: Vec<(String, Label)> = Vec::new();
        for e in &self.entries {
            if !keys.iter().any(|(s, l)| *s == e.scene_id && *l == e.label) {
                keys.push((e.scene_id.clone(), e.label));
            }
        }
        keys
    }

    pub fn has_scene(&self, scene_id: &str) -> bool {
        self.entries.iter().any(|e| e.scene_id == scene_id)
    }

    fn push(&mut self, scene_id: String, label: Label, text: String, embedding: Vec<f64>, merged_count: u32) {
        let id = format!("p{:06}", self.next_seq);
        self.next_seq += 1;
        self.entries.push(Pattern {
            id,
            scene_id,
            label,
            text,
            embedding,
            merged_count,
        });
    }

    fn check_dim(&self, v: &[f64]) -> Result<(), KbError> {
        if v.len() != self.embed_dim {
            return Err(KbError::DimensionMismatch(v.len(), self.embed_dim));
        }
        Ok(())
    }

    pub fn insert_with_aggregation(
        &mut self,
        p: RawPattern,
        tau: f64,
        aggregator: &dyn Aggregator,
        embedder: &dyn EmbeddingClient,
    ) -> Result<InsertOutcome, KbError> {
        check_tau(tau)?;
        self.check_dim(&p.embedding)?;
        let mut sims = Vec::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.scene_id == p.scene_id && e.label == p.label {
                sims.push((i, cosine_sim(&p.embedding, &e.embedding)?));
            }
        }
        let mean = if sims.is_empty() {
            f64::NEG_INFINITY
        } else {
            sims.iter().map(|(_, s)| s).sum::<f64>() / sims.len() as f64
        };
        if mean < tau {
            self.push(p.scene_id, p.label, p.text, p.embedding, 1);
            return Ok(InsertOutcome::Added);
        }
        let cluster: Vec<usize> = sims.iter().filter(|(_, s)| *s >= tau).map(|(i, _)| *i).collect();
        let merged = cluster.len();
        self.merge(&cluster, Some(p), aggregator, embedder)?;
        Ok(InsertOutcome::Merged(merged))
    }

    /// Replaces the entries at `indices` (plus the optional incoming pattern)
    /// with one aggregated entry appended at the end.
    fn merge(
        &mut self,
        indices: &[usize],
        incoming: Option<RawPattern>,
        aggregator: &dyn Aggregator,
        embedder: &dyn EmbeddingClient,
    ) -> Result<(), KbError> {
        let mut texts: Vec<&str> = indices.iter().map(|&i| self.entries[i].text.as_str()).collect();
        let mut embs: Vec<&[f64]> = indices.iter().map(|&i| self.entries[i].embedding.as_slice()).collect();
        if let Some(p) = &incoming {
            texts.push(&p.text);
            embs.push(&p.embedding);
        }
        let text = aggregator.aggregate(&texts, &embs)?;
        let embedding = embedder.embed(&text)?;
        self.check_dim(&embedding)?;
        let count = indices.iter().map(|&i| self.entries[i].merged_count).sum::<u32>()
            + u32::from(incoming.is_some());
        let (scene, label) = match &incoming {
            Some(p) => (p.scene_id.clone(), p.label),
            None => {
                let first = &self.entries[indices[0]];
                (first.scene_id.clone(), first.label)
            }
        };
        let mut doomed = indices.to_vec();
        doomed.sort_unstable();
        for i in doomed.into_iter().rev() {
            self.entries.remove(i);
        }
        self.push(scene, label, text, embedding, count);
        Ok(())
    }

    /// Merges remaining near-duplicates until no two entries of one
    /// partition reach `tau`. The earliest entry with a neighbour at or above
    /// `tau` absorbs all such neighbours; repeat until stable.
    pub fn consolidate(
        &mut self,
        tau: f64,
        aggregator: &dyn Aggregator,
        embedder: &dyn EmbeddingClient,
    ) -> Result<usize, KbError> {
        check_tau(tau)?;
        let mut merges = 0;
        'scan: loop {
            for i in 0..self.entries.len() {
                let mut cluster = vec![i];
                for j in 0..self.entries.len() {
                    let (a, b) = (&self.entries[i], &self.entries[j]);
                    if j != i
                        && a.scene_id == b.scene_id
                        && a.label == b.label
                        && cosine_sim(&a.embedding, &b.embedding)? >= tau
                    {
                        cluster.push(j);
                    }
                }
                if cluster.len() > 1 {
                    self.merge(&cluster, None, aggregator, embedder)?;
                    merges += 1;
                    continue 'scan;
                }
            }
            return Ok(merges);
        }
    }

    /// Inserts all normals, then all abnormals, of one scene and
    /// consolidates. Labels never merge with each other.
    pub fn build_scene_set(
        &mut self,
        normals: Vec<RawPattern>,
        abnormals: Vec<RawPattern>,
        tau: f64,
        aggregator: &dyn Aggregator,
        embedder: &dyn EmbeddingClient,
    ) -> Result<MergeStats, KbError> {
        let mut stats = MergeStats::default();
        for p in normals.into_iter().chain(abnormals) {
            match self.insert_with_aggregation(p, tau, aggregator, embedder)? {
                InsertOutcome::Added => stats.inserted += 1,
                InsertOutcome::Merged(_) => stats.merged += 1,
            }
        }
        stats.consolidated = self.consolidate(tau, aggregator, embedder)?;
        Ok(stats)
    }

    /// The `k` most similar entries, restricted to `scene` when given. Equal
    /// similarities keep insertion order.
    pub fn retrieve_topk(&self, query: &[f64], k: usize, scene: Option<&str>) -> Result<RetrievedKnowledge, KbError> {
        if k == 0 {
            return Err(KbError::BadK);
        }
        if self.entries.is_empty() {
            return Err(KbError::Empty);
        }
        self.check_dim(query)?;
        let mut heap: BinaryHeap<HeapItem> = BinaryHeap::with_capacity(k + 1);
        for (idx, e) in self.entries.iter().enumerate() {
            if scene.is_some_and(|s| s != e.scene_id) {
                continue;
            }
            heap.push(HeapItem {
                sim: cosine_sim(query, &e.embedding)?,
                idx,
            });
            if heap.len() > k {
                heap.pop();
            }
        }
        // into_sorted_vec is ascending by Ord, i.e. best first.
        let items = heap
            .into_sorted_vec()
            .into_iter()
            .map(|h| RetrievedItem {
                pattern: self.entries[h.idx].clone(),
                similarity: h.sim,
            })
            .collect();
        Ok(RetrievedKnowledge { items })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("knowledge base serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, expected_dim: Option<usize>) -> Result<Self, KbError> {
        let probe: serde_json::Value =
            serde_json::from_str(text).map_err(|e| KbError::Corrupt(e.to_string()))?;
        let found = probe.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != KB_VERSION {
            return Err(KbError::Version {
                found,
                expected: KB_VERSION,
            });
        }
        let mut kb: KnowledgeBase = serde_json::from_value(probe).map_err(|e| KbError::Corrupt(e.to_string()))?;
        if let Some(expected) = expected_dim {
            if kb.embed_dim != expected {
                return Err(KbError::EmbedDim {
                    found: kb.embed_dim,
                    expected,
                });
            }
        }
        for e in &kb.entries {
            if e.embedding.len() != kb.embed_dim {
                return Err(KbError::Corrupt(format!(
                    "entry {} has dimension {} (embed_dim {})",
                    e.id,
                    e.embedding.len(),
                    kb.embed_dim
                )));
            }
            if e.text.trim().is_empty() || e.merged_count == 0 {
                return Err(KbError::Corrupt(format!("entry {} is empty", e.id)));
            }
        }
        let max_seq = kb
            .entries
            .iter()
            .filter_map(|e| e.id.strip_prefix('p').and_then(|n| n.parse::<u64>().ok()))
            .map(|n| n + 1)
            .max()
            .unwrap_or(0);
        kb.next_seq = kb.next_seq.max(max_seq);
        Ok(kb)
    }

    pub fn persist(&self, path: &Path) -> Result<(), KbError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| KbError::Io {
                path: dir.display().to_string(),
                msg: e.to_string(),
            })?;
        }
        std::fs::write(path, self.to_json()).map_err(|e| KbError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: &Path, expected_dim: Option<usize>) -> Result<Self, KbError> {
        let text = std::fs::read_to_string(path).map_err(|e| KbError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_json(&text, expected_dim)
    }
}
