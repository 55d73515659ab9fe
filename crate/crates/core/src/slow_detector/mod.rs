//! The slow path: vision-language description of a segment, retrieval of
//! known behaviour patterns, and a scored, explained verdict.
//!
//! Knowledge-base building runs the same description step on sampled
//! segments of normal training videos, asks the language model for the
//! normal patterns it sees and the abnormal patterns it would expect, and
//! folds them into the [`KnowledgeBase`].

pub mod client;
pub mod http;
pub mod mock;
pub mod parse;
pub mod prompts;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::entropy_gate::{Period, SegmentSelection};
use crate::ingest::{FrameRef, IngestError, ScoreSeries};
use crate::knowledge_base::{Aggregator, KbError, KnowledgeBase, Label, MergeStats, RawPattern, RetrievedKnowledge};

pub use client::{ChatClient, ClientError, CountingChat, EmbeddingClient};
pub use parse::{parse_list_items, parse_verdict, ParseError, ParsedVerdict};
pub use prompts::{render, PromptTemplates, TemplateError};

#[derive(Debug, Error)]
pub enum SlowError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("knowledge base build failed for every training video")]
    BuildFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlowConfig {
    /// Vision model temperature for descriptions.
    pub describe_temperature: f64,
    /// Language model temperature while building the knowledge base.
    pub train_temperature: f64,
    /// Language model temperature while assessing test segments.
    pub test_temperature: f64,
    pub top_k: usize,
    pub max_frames: usize,
    pub max_inflight: usize,
    /// Include retrieved knowledge in assessment prompts.
    pub use_rag: bool,
}

impl Default for SlowConfig {
    fn default() -> Self {
        Self {
            describe_temperature: 0.01,
            train_temperature: 1.1,
            test_temperature: 0.7,
            top_k: crate::knowledge_base::DEFAULT_TOP_K,
            max_frames: 8,
            max_inflight: 4,
            use_rag: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KbBuildConfig {
    pub window: usize,
    /// Sample one segment per `window * period` frames; `None` = one per video.
    pub period: Period,
    pub tau: f64,
    pub seed: u64,
}

impl Default for KbBuildConfig {
    fn default() -> Self {
        Self {
            window: 8,
            period: Some(20),
            tau: crate::knowledge_base::DEFAULT_TAU,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatioTemporalDescription {
    pub video_id: String,
    pub scene_id: String,
    pub start_frame: usize,
    pub length: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlowVerdict {
    pub segment: SegmentSelection,
    pub score: f64,
    pub reasoning: String,
    pub knowledge_used: RetrievedKnowledge,
    pub raw_response: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BuildSummary {
    pub videos: usize,
    pub skipped_videos: usize,
    pub segments: usize,
    pub raw_normal: usize,
    pub raw_abnormal: usize,
    pub merges: MergeStats,
}

/// Start frames of the training segments for one video: the video is cut
/// into blocks of `window * period` frames and one `window`-frame segment
/// is drawn uniformly inside each block. A trailing block shorter than a
/// window is ignored unless it is the only block.
pub fn sample_training_segments(frames: usize, window: usize, period: Period, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    if frames == 0 || window == 0 {
        return Vec::new();
    }
    let block = period.map_or(frames, |t| window.saturating_mul(t)).max(1);
    let mut out = Vec::new();
    let mut lo = 0;
    while lo < frames {
        let hi = (lo + block).min(frames);
        let span = hi - lo;
        if span >= window || lo == 0 {
            let len = window.min(span);
            let start = lo + rng.random_range(0..=span - len);
            out.push((start, len));
        }
        lo = hi;
    }
    out
}

/// Evenly spaced subset of at most `max` frames, first and last kept.
pub fn subsample_frames(frames: Vec<FrameRef>, max: usize) -> Vec<FrameRef> {
    if frames.len() <= max || max == 0 {
        return frames;
    }
    if max == 1 {
        return frames.into_iter().take(1).collect();
    }
    let n = frames.len();
    (0..max)
        .map(|i| frames[i * (n - 1) / (max - 1)].clone())
        .collect()
}

/// Maps `f` over `items` with at most `limit` calls in flight, preserving
/// input order in the output.
pub fn bounded_map<T: Sync, R: Send>(items: &[T], limit: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = limit.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

pub struct SlowDetector<'a> {
    /// Vision-language model used for segment descriptions.
    pub vision: &'a dyn ChatClient,
    /// Language model used for pattern mining, aggregation and assessment.
    pub text: &'a dyn ChatClient,
    pub embedder: &'a dyn EmbeddingClient,
    pub templates: &'a PromptTemplates,
    pub cfg: SlowConfig,
}

impl<'a> SlowDetector<'a> {
    pub fn describe_segment(
        &self,
        scene_id: &str,
        frames: &[FrameRef],
    ) -> Result<SpatioTemporalDescription, SlowError> {
        if frames.is_empty() {
            return Err(SlowError::Precondition("describe_segment needs at least one frame".into()));
        }
        if frames.len() > self.cfg.max_frames {
            return Err(SlowError::Precondition(format!(
                "{} frames exceed the limit of {}",
                frames.len(),
                self.cfg.max_frames
            )));
        }
        let count = frames.len().to_string();
        let prompt = render(
            &self.templates.describe,
            &[("frame_count", &count), ("scene_id", scene_id)],
        )?;
        let text = self
            .vision
            .complete(&prompt, frames, self.cfg.describe_temperature)?;
        if text.trim().is_empty() {
            return Err(ClientError::Empty.into());
        }
        Ok(SpatioTemporalDescription {
            video_id: frames[0].video_id.clone(),
            scene_id: scene_id.to_string(),
            start_frame: frames[0].frame_index,
            length: frames.last().unwrap().frame_index + 1 - frames[0].frame_index,
            text,
        })
    }

    pub fn extract_patterns(&self, descriptions: &[SpatioTemporalDescription]) -> Result<Vec<String>, SlowError> {
        let first = descriptions
            .first()
            .ok_or_else(|| SlowError::Precondition("no descriptions to extract patterns from".into()))?;
        if descriptions.iter().any(|d| d.scene_id != first.scene_id) {
            return Err(SlowError::Precondition("descriptions span several scenes".into()));
        }
        let joined = descriptions
            .iter()
            .enumerate()
            .map(|(i, d)| format!("[{}] {}", i + 1, d.text.trim()))
            .collect::<Vec<_>>()
            .join("\n");
        let prompt = render(
            &self.templates.extract_normal,
            &[("descriptions", &joined), ("scene_id", &first.scene_id)],
        )?;
        let reply = self.text.complete(&prompt, &[], self.cfg.train_temperature)?;
        Ok(parse_list_items(&reply)?)
    }

    pub fn predict_abnormal(&self, scene_id: &str, normals: &[String]) -> Result<Vec<String>, SlowError> {
        if normals.is_empty() {
            return Err(SlowError::Precondition("no normal patterns to reason from".into()));
        }
        let prompt = render(
            &self.templates.predict_abnormal,
            &[("normal_patterns", &prompts::format_list(normals)), ("scene_id", scene_id)],
        )?;
        let reply = self.text.complete(&prompt, &[], self.cfg.train_temperature)?;
        Ok(parse_list_items(&reply)?)
    }

    fn mine_video(
        &self,
        series: &ScoreSeries,
        cfg: &KbBuildConfig,
        frames_root: Option<&Path>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(usize, Vec<String>, Vec<String>), SlowError> {
        let segments = sample_training_segments(series.len(), cfg.window, cfg.period, rng);
        let (mut normals, mut abnormals) = (Vec::new(), Vec::new());
        for &(start, len) in &segments {
            let frames = subsample_frames(FrameRef::range(series, start, len, frames_root)?, self.cfg.max_frames);
            let st = self.describe_segment(&series.scene_id, &frames)?;
            let n = self.extract_patterns(std::slice::from_ref(&st))?;
            let a = self.predict_abnormal(&series.scene_id, &n)?;
            normals.extend(n);
            abnormals.extend(a);
        }
        Ok((segments.len(), normals, abnormals))
    }

    /// Mines patterns from normal training videos and folds them into `kb`,
    /// one scene at a time in order of first appearance.
    pub fn build_kb(
        &self,
        training: &[ScoreSeries],
        frames_root: Option<&Path>,
        cfg: &KbBuildConfig,
        kb: &mut KnowledgeBase,
        aggregator: &dyn Aggregator,
    ) -> Result<BuildSummary, SlowError> {
        if self.embedder.dim() != kb.embed_dim {
            return Err(KbError::EmbedDim {
                found: kb.embed_dim,
                expected: self.embedder.dim(),
            }
            .into());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut summary = BuildSummary {
            videos: training.len(),
            ..BuildSummary::default()
        };
        let mut scenes: Vec<(String, Vec<String>, Vec<String>)> = Vec::new();
        for series in training {
            match self.mine_video(series, cfg, frames_root, &mut rng) {
                Ok((segments, n, a)) => {
                    summary.segments += segments;
                    summary.raw_normal += n.len();
                    summary.raw_abnormal += a.len();
                    match scenes.iter_mut().find(|(s, _, _)| *s == series.scene_id) {
                        Some((_, ns, as_)) => {
                            ns.extend(n);
                            as_.extend(a);
                        }
                        None => scenes.push((series.scene_id.clone(), n, a)),
                    }
                }
                Err(e) => {
                    log::warn!("skipping training video {}: {e}", series.video_id);
                    summary.skipped_videos += 1;
                }
            }
        }
        if summary.skipped_videos == summary.videos {
            return Err(SlowError::BuildFailed);
        }
        for (scene, normals, abnormals) in scenes {
            let embed = |label: Label, texts: Vec<String>| -> Result<Vec<RawPattern>, KbError> {
                texts
                    .iter()
                    .map(|t| RawPattern::embed(&scene, label, t, self.embedder))
                    .collect()
            };
            let n = embed(Label::Normal, normals)?;
            let a = embed(Label::Abnormal, abnormals)?;
            let stats = kb.build_scene_set(n, a, cfg.tau, aggregator, self.embedder)?;
            summary.merges.inserted += stats.inserted;
            summary.merges.merged += stats.merged;
            summary.merges.consolidated += stats.consolidated;
        }
        Ok(summary)
    }

    /// Retrieves knowledge for `st` (when RAG is on), asks the language
    /// model for a verdict and parses it.
    pub fn assess(
        &self,
        st: &SpatioTemporalDescription,
        kb: Option<&KnowledgeBase>,
    ) -> Result<(ParsedVerdict, RetrievedKnowledge, String), SlowError> {
        let knowledge = if self.cfg.use_rag {
            let kb = kb.ok_or_else(|| SlowError::Precondition("retrieval enabled but no knowledge base loaded".into()))?;
            if self.cfg.top_k == 0 {
                return Err(KbError::BadK.into());
            }
            let query = self.embedder.embed(&st.text)?;
            let scope = kb.has_scene(&st.scene_id).then_some(st.scene_id.as_str());
            kb.retrieve_topk(&query, self.cfg.top_k, scope)?
        } else {
            RetrievedKnowledge::default()
        };
        let prompt = render(
            &self.templates.assess,
            &[
                ("description", st.text.trim()),
                ("knowledge", &prompts::format_knowledge(&knowledge)),
                ("scene_id", &st.scene_id),
            ],
        )?;
        let raw = self.text.complete(&prompt, &[], self.cfg.test_temperature)?;
        let parsed = parse_verdict(&raw)?;
        Ok((parsed, knowledge, raw))
    }

    /// Describes and assesses one selected segment.
    pub fn analyze(
        &self,
        series: &ScoreSeries,
        selection: &SegmentSelection,
        frames_root: Option<&Path>,
        kb: Option<&KnowledgeBase>,
    ) -> Result<SlowVerdict, SlowError> {
        let frames = FrameRef::range(series, selection.start_frame, selection.length, frames_root)?;
        let frames = subsample_frames(frames, self.cfg.max_frames);
        let st = self.describe_segment(&series.scene_id, &frames)?;
        let (parsed, knowledge_used, raw_response) = self.assess(&st, kb)?;
        Ok(SlowVerdict {
            segment: selection.clone(),
            score: parsed.score,
            reasoning: parsed.reasoning,
            knowledge_used,
            raw_response,
        })
    }

    /// Analyzes every `(series, selection)` job with bounded concurrency.
    /// Results come back in job order; failures are returned per job.
    pub fn analyze_all(
        &self,
        jobs: &[(&ScoreSeries, &SegmentSelection)],
        frames_root: Option<&Path>,
        kb: Option<&KnowledgeBase>,
    ) -> Vec<Result<SlowVerdict, SlowError>> {
        bounded_map(jobs, self.cfg.max_inflight, |(series, sel)| {
            self.analyze(series, sel, frames_root, kb).inspect_err(|e| {
                log::warn!(
                    "slow analysis failed for {} frames {}..{}: {e}",
                    sel.video_id,
                    sel.start_frame,
                    sel.start_frame + sel.length
                )
            })
        })
    }
}
