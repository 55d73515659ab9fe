//! Pipeline configuration file (TOML) and its mapping onto the component
//! configs.
//!
//! ```toml
//! seed = 0
//! mock = true
//! dataset = "ped2"
//!
//! [paths]
//! scores = "data/test_scores.csv"
//! labels = "data/test_labels.csv"
//! train_scores = "data/train_scores.csv"
//! kb = "out/kb.json"
//! out = "out"
//!
//! [gate]
//! window = 8
//! bins = 10
//! sigma = 1.0
//! theta = "p75"
//! period = 10
//!
//! [kb]
//! tau = 0.85
//! top_k = 6
//! train_period = 20
//!
//! [fusion]
//! alpha = 0.8
//! smooth_sigma = 2.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy_gate::{EntropyMode, GateConfig, Period, Theta};
use crate::fusion::{Dataset, FusionConfig};
use crate::slow_detector::http::ImageMode;
use crate::slow_detector::{KbBuildConfig, SlowConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {0}: {1}")]
    Io(PathBuf, String),
    #[error("invalid config {0}: {1}")]
    Parse(PathBuf, String),
    #[error("invalid setting: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub scores: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub train_scores: Option<PathBuf>,
    pub frames_root: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub curves: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateSection {
    pub window: usize,
    pub bins: usize,
    pub sigma: f64,
    pub theta: Theta,
    #[serde(with = "crate::entropy_gate::period_serde")]
    pub period: Period,
    pub entropy_mode: EntropyMode,
}

impl Default for GateSection {
    fn default() -> Self {
        let g = GateConfig::default();
        Self {
            window: g.window,
            bins: g.bins,
            sigma: g.sigma,
            theta: g.theta,
            period: g.period,
            entropy_mode: g.entropy_mode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    /// Medoid in mock mode, language model otherwise.
    #[default]
    Auto,
    Medoid,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KbSection {
    pub tau: f64,
    pub top_k: usize,
    #[serde(with = "crate::entropy_gate::period_serde")]
    pub train_period: Period,
    pub rag: bool,
    pub aggregator: AggregatorKind,
}

impl Default for KbSection {
    fn default() -> Self {
        Self {
            tau: crate::knowledge_base::DEFAULT_TAU,
            top_k: crate::knowledge_base::DEFAULT_TOP_K,
            train_period: Some(20),
            rag: true,
            aggregator: AggregatorKind::Auto,
        }
    }
}

mod sigma_or_off {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_str("off"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Some(x)),
            Raw::Text(t) => super::parse_sigma(&t).map_err(serde::de::Error::custom),
        }
    }
}

/// Parses a positive number or `off`.
pub fn parse_sigma(s: &str) -> Result<Option<f64>, String> {
    match s.trim() {
        "off" | "none" => Ok(None),
        t => t
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && *v > 0.0)
            .map(Some)
            .ok_or_else(|| format!("invalid sigma `{s}` (expected a positive number or `off`)")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    /// Overrides the dataset preset when set.
    pub alpha: Option<f64>,
    #[serde(with = "sigma_or_off")]
    pub smooth_sigma: Option<f64>,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self {
            alpha: None,
            smooth_sigma: Some(2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientSection {
    pub api_base: Option<String>,
    pub chat_model: Option<String>,
    /// Vision model; falls back to `chat_model`.
    pub vision_model: Option<String>,
    pub embed_model: Option<String>,
    pub embed_dim: usize,
    pub image_mode: ImageMode,
    pub max_inflight: usize,
    pub max_frames: usize,
    pub timeout_secs: u64,
    pub retries: u32,
    pub describe_temperature: f64,
    pub train_temperature: f64,
    pub test_temperature: f64,
}

impl Default for ClientSection {
    fn default() -> Self {
        let s = SlowConfig::default();
        Self {
            api_base: None,
            chat_model: None,
            vision_model: None,
            embed_model: None,
            embed_dim: 1536,
            image_mode: ImageMode::Url,
            max_inflight: s.max_inflight,
            max_frames: s.max_frames,
            timeout_secs: 120,
            retries: 3,
            describe_temperature: s.describe_temperature,
            train_temperature: s.train_temperature,
            test_temperature: s.test_temperature,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub mock: bool,
    pub dataset: Option<Dataset>,
    /// Min-max normalize raw fast-detector scores on load.
    pub normalize_scores: bool,
    pub paths: Paths,
    pub gate: GateSection,
    pub kb: KbSection,
    pub fusion: FusionSection,
    pub client: ClientSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(origin.to_path_buf(), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e.to_string()))?;
        Self::from_toml(&text, path)
    }

    pub fn gate(&self) -> GateConfig {
        GateConfig {
            window: self.gate.window,
            bins: self.gate.bins,
            sigma: self.gate.sigma,
            theta: self.gate.theta,
            period: self.gate.period,
            entropy_mode: self.gate.entropy_mode,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.fusion
            .alpha
            .or(self.dataset.map(Dataset::alpha))
            .unwrap_or(Dataset::Ped2.alpha())
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            alpha: self.alpha(),
            smooth_sigma: self.fusion.smooth_sigma,
        }
    }

    pub fn slow(&self) -> SlowConfig {
        SlowConfig {
            describe_temperature: self.client.describe_temperature,
            train_temperature: self.client.train_temperature,
            test_temperature: self.client.test_temperature,
            top_k: self.kb.top_k,
            max_frames: self.client.max_frames,
            max_inflight: self.client.max_inflight,
            use_rag: self.kb.rag,
        }
    }

    pub fn kb_build(&self) -> KbBuildConfig {
        KbBuildConfig {
            window: self.gate.window,
            period: self.kb.train_period,
            tau: self.kb.tau,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.gate().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.fusion().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.kb.tau > 0.0 && self.kb.tau <= 1.0) {
            return Err(ConfigError::Invalid(format!("kb.tau must be in (0,1], got {}", self.kb.tau)));
        }
        if self.kb.top_k == 0 {
            return Err(ConfigError::Invalid("kb.top_k must be >= 1".into()));
        }
        if self.kb.train_period == Some(0) {
            return Err(ConfigError::Invalid("kb.train_period must be >= 1".into()));
        }
        if self.client.max_inflight == 0 || self.client.max_frames == 0 {
            return Err(ConfigError::Invalid("client.max_inflight and client.max_frames must be >= 1".into()));
        }
        if self.client.retries == 0 {
            return Err(ConfigError::Invalid("client.retries must be >= 1".into()));
        }
        Ok(())
    }

    /// JSON snapshot echoed into reports.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v["effective_alpha"] = serde_json::json!(self.alpha());
        v
    }
}
