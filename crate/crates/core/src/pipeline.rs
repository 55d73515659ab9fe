//! End-to-end orchestration: knowledge-base building, detection
//! (gate, slow analysis, fusion) and evaluation, plus the on-disk layout of
//! their outputs.
//!
//! ```text
//! <out>/fused/<video>.csv     frame_index,fast,slow_or_empty,fused,covered
//! <out>/selections.csv       video_id,start_frame,length,reason,entropy
//! <out>/explanations.json    per-video explained ranges
//! <out>/summary.json         counts and intervention rate
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::config::{AggregatorKind, ConfigError, PipelineConfig};
use crate::entropy_gate::{gate, write_selections_csv, GateError, SegmentSelection, Trigger};
use crate::evaluation::{EvalError, EvalReport, Scored};
use crate::fusion::{fuse_video, read_fused_csv, write_fused_csv, ExplanationRecord, FusedSeries, FusionError};
use crate::ingest::{load_labels, load_scores_with, GroundTruth, IngestError, LoadOptions, ScoreSeries};
use crate::knowledge_base::{KbError, KnowledgeBase, LlmAggregator, MedoidAggregator, Provenance};
use crate::slow_detector::http::{
    Endpoint, HttpChatClient, HttpEmbeddingClient, ReqwestTransport, RetryPolicy, ENV_API_BASE, ENV_API_KEY,
    ENV_CHAT_MODEL, ENV_EMBED_MODEL,
};
use crate::slow_detector::mock::{HashEmbedder, MOCK_EMBED_DIM};
use crate::slow_detector::{
    BuildSummary, ChatClient, ClientError, EmbeddingClient, PromptTemplates, SlowDetector, SlowError, TemplateError,
};
use crate::synthetic::oracle_for;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("entropy gate: {0}")]
    Gate(#[from] GateError),
    #[error("knowledge base: {0}")]
    Kb(#[from] KbError),
    #[error("slow detector: {0}")]
    Slow(#[from] SlowError),
    #[error("client: {0}")]
    Client(#[from] ClientError),
    #[error("templates: {0}")]
    Template(#[from] TemplateError),
    #[error("fusion: {0}")]
    Fusion(#[from] FusionError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

impl PipelineError {
    /// Bad invocation or configuration, as opposed to a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(self, Self::Config(_))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str, what: &str) -> Result<&'a Path, PipelineError> {
    p.as_deref()
        .ok_or_else(|| PipelineError::Config(format!("{what} required (pass {flag} or set it in the config file)")))
}

pub fn load_test_scores(cfg: &PipelineConfig) -> Result<Vec<ScoreSeries>, PipelineError> {
    let path = required(&cfg.paths.scores, "--scores", "test scores")?;
    Ok(load_scores_with(path, LoadOptions { normalize: cfg.normalize_scores })?)
}

pub fn load_train_scores(cfg: &PipelineConfig) -> Result<Vec<ScoreSeries>, PipelineError> {
    let path = required(&cfg.paths.train_scores, "--train-scores", "training scores")?;
    Ok(load_scores_with(path, LoadOptions { normalize: cfg.normalize_scores })?)
}

pub fn load_truth(cfg: &PipelineConfig) -> Result<Vec<GroundTruth>, PipelineError> {
    let path = required(&cfg.paths.labels, "--labels", "ground-truth labels")?;
    Ok(load_labels(path)?)
}

pub fn load_templates(cfg: &PipelineConfig) -> Result<PromptTemplates, PipelineError> {
    let t = match &cfg.paths.templates {
        Some(dir) => PromptTemplates::load_dir(dir)?,
        None => PromptTemplates::default(),
    };
    t.validate()?;
    Ok(t)
}

/// Knowledge base for detection, or `None` when retrieval is off.
pub fn load_kb_for_detection(cfg: &PipelineConfig, embed_dim: usize) -> Result<Option<KnowledgeBase>, PipelineError> {
    if !cfg.kb.rag {
        return Ok(None);
    }
    let path = cfg.paths.kb.as_deref().ok_or_else(|| {
        PipelineError::Config("retrieval is enabled but no knowledge base was given: pass --kb <path> (or disable rag)".into())
    })?;
    if !path.exists() {
        return Err(PipelineError::Config(format!(
            "knowledge base {} does not exist: run build-kb first or pass a different --kb",
            path.display()
        )));
    }
    Ok(Some(KnowledgeBase::load(path, Some(embed_dim))?))
}

/// The model clients used by the slow detector.
pub struct Clients {
    pub vision: Box<dyn ChatClient>,
    pub text: Box<dyn ChatClient>,
    pub embedder: Box<dyn EmbeddingClient>,
    pub chat_model: String,
    pub embed_model: String,
    pub mock: bool,
}

impl Clients {
    /// One chat client for both roles plus the hashing embedder.
    pub fn mock(chat: impl ChatClient + 'static) -> Self {
        let chat = Arc::new(chat);
        Self {
            vision: Box::new(Arc::clone(&chat)),
            text: Box::new(chat),
            embedder: Box::new(HashEmbedder),
            chat_model: "mock-oracle".into(),
            embed_model: format!("mock-hash-{MOCK_EMBED_DIM}"),
            mock: true,
        }
    }

    /// Oracle mock that knows the labels of `test` (when given) and treats
    /// `train` as normal.
    pub fn oracle(test: &[ScoreSeries], truth: &[GroundTruth], train: &[ScoreSeries]) -> Self {
        Self::mock(oracle_for(test, truth, train))
    }

    /// OpenAI-compatible HTTP clients configured from `cfg` and the
    /// `SLOWFAST_*` environment variables.
    pub fn live(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let env = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let base_url = cfg
            .client
            .api_base
            .clone()
            .or_else(|| env(ENV_API_BASE))
            .ok_or_else(|| PipelineError::Config(format!("no API base URL: set {ENV_API_BASE} or client.api_base, or use --mock")))?;
        let chat_model = cfg
            .client
            .chat_model
            .clone()
            .or_else(|| env(ENV_CHAT_MODEL))
            .ok_or_else(|| PipelineError::Config(format!("no chat model: set {ENV_CHAT_MODEL} or client.chat_model")))?;
        let vision_model = cfg.client.vision_model.clone().unwrap_or_else(|| chat_model.clone());
        let embed_model = cfg
            .client
            .embed_model
            .clone()
            .or_else(|| env(ENV_EMBED_MODEL))
            .ok_or_else(|| PipelineError::Config(format!("no embedding model: set {ENV_EMBED_MODEL} or client.embed_model")))?;
        let api_key = env(ENV_API_KEY);
        let endpoint = |model: &str| Endpoint {
            base_url: base_url.clone(),
            api_key: api_key.clone(),
            model: model.to_string(),
        };
        let retry = RetryPolicy {
            max_attempts: cfg.client.retries,
            ..RetryPolicy::default()
        };
        let timeout = Duration::from_secs(cfg.client.timeout_secs);
        let mode = cfg.client.image_mode;
        Ok(Self {
            vision: Box::new(HttpChatClient::new(ReqwestTransport::new(timeout)?, endpoint(&vision_model), mode, retry)),
            text: Box::new(HttpChatClient::new(ReqwestTransport::new(timeout)?, endpoint(&chat_model), mode, retry)),
            embedder: Box::new(HttpEmbeddingClient::new(
                ReqwestTransport::new(timeout)?,
                endpoint(&embed_model),
                cfg.client.embed_dim,
                retry,
            )),
            chat_model,
            embed_model,
            mock: false,
        })
    }

    pub fn detector<'a>(&'a self, templates: &'a PromptTemplates, cfg: &PipelineConfig) -> SlowDetector<'a> {
        SlowDetector {
            vision: self.vision.as_ref(),
            text: self.text.as_ref(),
            embedder: self.embedder.as_ref(),
            templates,
            cfg: cfg.slow(),
        }
    }
}

/// Mines the training videos into a fresh knowledge base.
pub fn build_kb(
    cfg: &PipelineConfig,
    clients: &Clients,
    train: &[ScoreSeries],
) -> Result<(KnowledgeBase, BuildSummary), PipelineError> {
    let templates = load_templates(cfg)?;
    let detector = clients.detector(&templates, cfg);
    let mut kb = KnowledgeBase::new(clients.embedder.dim());
    let use_llm = match cfg.kb.aggregator {
        AggregatorKind::Auto => !clients.mock,
        AggregatorKind::Medoid => false,
        AggregatorKind::Llm => true,
    };
    let llm = LlmAggregator {
        chat: clients.text.as_ref(),
        templates: &templates,
        temperature: cfg.client.train_temperature,
    };
    let summary = if use_llm {
        detector.build_kb(train, cfg.paths.frames_root.as_deref(), &cfg.kb_build(), &mut kb, &llm)?
    } else {
        detector.build_kb(train, cfg.paths.frames_root.as_deref(), &cfg.kb_build(), &mut kb, &MedoidAggregator)?
    };
    kb.provenance = Provenance {
        chat_model: clients.chat_model.clone(),
        embed_model: clients.embed_model.clone(),
        tau: cfg.kb.tau,
        seed: cfg.seed,
        generator: format!("slowfast {}", env!("CARGO_PKG_VERSION")),
    };
    Ok((kb, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectSummary {
    pub videos: usize,
    pub frames: usize,
    pub windows: usize,
    pub selected: usize,
    pub entropy_selected: usize,
    pub periodic_selected: usize,
    pub failed_segments: usize,
    pub covered_frames: usize,
    /// Selected windows over all windows.
    pub intervention_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectOutput {
    pub fused: Vec<FusedSeries>,
    pub selections: Vec<SegmentSelection>,
    pub summary: DetectSummary,
}

/// Gates every video, analyzes the selected windows with the slow detector
/// and fuses the verdicts into the fast scores. A window whose analysis
/// fails is left uncovered and keeps its fast score.
pub fn detect(
    cfg: &PipelineConfig,
    clients: &Clients,
    series: &[ScoreSeries],
    kb: Option<&KnowledgeBase>,
) -> Result<DetectOutput, PipelineError> {
    let gate_cfg = cfg.gate();
    let fusion_cfg = cfg.fusion();
    fusion_cfg.validate()?;
    if cfg.kb.rag && kb.is_none() {
        return Err(PipelineError::Config(
            "retrieval is enabled but no knowledge base was given: pass --kb <path> (or disable rag)".into(),
        ));
    }
    let templates = load_templates(cfg)?;
    let detector = clients.detector(&templates, cfg);

    let mut windows = 0;
    let mut selections = Vec::new();
    let mut jobs = Vec::new();
    for s in series {
        let outcome = gate(s, &gate_cfg)?;
        windows += outcome.window_count();
        for sel in outcome.selections {
            selections.push(sel);
        }
    }
    let mut start = 0;
    for s in series {
        let n = selections[start..].iter().take_while(|sel| sel.video_id == s.video_id).count();
        for sel in &selections[start..start + n] {
            jobs.push((s, sel));
        }
        start += n;
    }
    let results = detector.analyze_all(&jobs, cfg.paths.frames_root.as_deref(), kb);

    let mut failed = 0;
    let mut fused = Vec::with_capacity(series.len());
    let mut results = results.into_iter().peekable();
    let mut job_iter = jobs.iter().peekable();
    for s in series {
        let mut verdicts = Vec::new();
        while job_iter.peek().is_some_and(|(js, _)| js.video_id == s.video_id) {
            job_iter.next();
            match results.next().expect("one result per job") {
                Ok(v) => verdicts.push(v),
                Err(_) => failed += 1,
            }
        }
        fused.push(fuse_video(s, &verdicts, &fusion_cfg)?);
    }

    let count = |t: Trigger| selections.iter().filter(|s| s.reason == t).count();
    let summary = DetectSummary {
        videos: series.len(),
        frames: series.iter().map(ScoreSeries::len).sum(),
        windows,
        selected: selections.len(),
        entropy_selected: count(Trigger::Entropy),
        periodic_selected: count(Trigger::Periodic),
        failed_segments: failed,
        covered_frames: fused.iter().map(FusedSeries::covered_frames).sum(),
        intervention_rate: if windows == 0 { 0.0 } else { selections.len() as f64 / windows as f64 },
    };
    if failed > 0 {
        log::warn!("{failed} of {} selected segments fell back to the fast score", selections.len());
    }
    Ok(DetectOutput {
        fused,
        selections,
        summary,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

impl DetectOutput {
    pub fn write(&self, out: &Path) -> Result<(), PipelineError> {
        let fused_dir = out.join("fused");
        std::fs::create_dir_all(&fused_dir).map_err(io_err(&fused_dir))?;
        for fs in &self.fused {
            let path = fused_dir.join(format!("{}.csv", fs.video_id));
            let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
            write_fused_csv(fs, &mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
        }
        let path = out.join("selections.csv");
        let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        write_selections_csv(&self.selections, &mut w)
            .and_then(|_| w.flush())
            .map_err(io_err(&path))?;
        let records: Vec<ExplanationRecord> = self.fused.iter().map(ExplanationRecord::from).collect();
        write_text(&out.join("explanations.json"), &pretty(&records))?;
        write_text(&out.join("summary.json"), &pretty(&self.summary))
    }
}

/// Reads every `<dir>/*.csv` written by [`DetectOutput::write`], sorted by
/// video id.
pub fn read_fused_dir(dir: &Path) -> Result<Vec<FusedSeries>, PipelineError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(PipelineError::Config(format!("no fused curves found in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let f = File::open(p).map_err(io_err(p))?;
            Ok(read_fused_csv(&id, BufReader::new(f))?)
        })
        .collect()
}

fn pair<'a>(
    curves: impl Iterator<Item = (&'a str, &'a [f64])>,
    truth: &'a [GroundTruth],
) -> Result<Vec<Scored<'a>>, PipelineError> {
    curves
        .map(|(id, scores)| {
            let t = truth
                .iter()
                .find(|t| t.video_id == id)
                .ok_or_else(|| EvalError::MissingLabels(id.to_string()))?;
            Ok(Scored {
                video_id: id,
                scores,
                labels: &t.labels,
            })
        })
        .collect()
}

/// Micro/macro AUC of the fused curves.
pub fn evaluate(
    fused: &[FusedSeries],
    truth: &[GroundTruth],
    echo: serde_json::Value,
) -> Result<EvalReport, PipelineError> {
    let videos = pair(fused.iter().map(|f| (f.video_id.as_str(), f.fused.as_slice())), truth)?;
    Ok(EvalReport::compute(&videos, echo)?)
}

/// Micro/macro AUC of the fast detector alone.
pub fn evaluate_fast(
    series: &[ScoreSeries],
    truth: &[GroundTruth],
    echo: serde_json::Value,
) -> Result<EvalReport, PipelineError> {
    let videos = pair(series.iter().map(|s| (s.video_id.as_str(), s.scores.as_slice())), truth)?;
    Ok(EvalReport::compute(&videos, echo)?)
}

/// Writes `<dir>/<video>.csv` with `frame_index,fused,label`.
pub fn write_curves(dir: &Path, fused: &[FusedSeries], truth: &[GroundTruth]) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for f in fused {
        let t = truth
            .iter()
            .find(|t| t.video_id == f.video_id)
            .ok_or_else(|| EvalError::MissingLabels(f.video_id.clone()))?;
        let path = dir.join(format!("{}.csv", f.video_id));
        let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        let mut body = String::from("frame_index,fused,label\n");
        for (i, (s, l)) in f.fused.iter().zip(&t.labels).enumerate() {
            body.push_str(&format!("{i},{s:?},{l}\n"));
        }
        w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err(&path))?;
    }
    Ok(())
}
