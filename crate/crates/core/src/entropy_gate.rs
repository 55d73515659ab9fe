//! Entropy-based intervention detection.
//!
//! A score stream is cut into non-overlapping windows of `n` frames. Each
//! window gets a histogram-based entropy, the per-window entropies are
//! Gaussian-smoothed across neighbouring windows, and windows whose smoothed
//! entropy exceeds `theta` are handed to the slow detector. Independently,
//! every `T`-th window is sampled so the slow detector also sees ordinary
//! stretches of video.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussian::GaussianKernel;
use crate::ingest::ScoreSeries;

#[derive(Debug, Error, PartialEq)]
pub enum GateError {
    #[error("series has {0} frames; at least 2 are required")]
    TooShort(usize),
    #[error("empty window")]
    EmptyWindow,
    #[error("invalid gate config: {0}")]
    Config(String),
    #[error("cannot parse threshold `{0}` (expected a number, `inf`, or `pNN`)")]
    Theta(String),
}

/// Entropy threshold: absolute, or a percentile of the smoothed entropies
/// of the video being gated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Theta {
    Absolute(f64),
    Percentile(f64),
}

impl Theta {
    /// Resolves the threshold against one video's smoothed entropies.
    pub fn resolve(&self, smoothed: &[f64]) -> f64 {
        match *self {
            Theta::Absolute(v) => v,
            Theta::Percentile(p) => percentile(smoothed, p),
        }
    }
}

impl Default for Theta {
    fn default() -> Self {
        Theta::Percentile(75.0)
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Theta::Absolute(v) if v.is_infinite() && *v > 0.0 => write!(f, "inf"),
            Theta::Absolute(v) if v.is_infinite() => write!(f, "-inf"),
            Theta::Absolute(v) => write!(f, "{v}"),
            Theta::Percentile(p) => write!(f, "p{p}"),
        }
    }
}

impl FromStr for Theta {
    type Err = GateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let bad = || GateError::Theta(s.to_string());
        if let Some(p) = t.strip_prefix('p').or_else(|| t.strip_prefix('P')) {
            let p: f64 = p.parse().map_err(|_| bad())?;
            if !(0.0..=100.0).contains(&p) {
                return Err(bad());
            }
            return Ok(Theta::Percentile(p));
        }
        match t {
            "inf" | "+inf" | "infinity" => Ok(Theta::Absolute(f64::INFINITY)),
            "-inf" => Ok(Theta::Absolute(f64::NEG_INFINITY)),
            _ => t
                .parse::<f64>()
                .ok()
                .filter(|v| !v.is_nan())
                .map(Theta::Absolute)
                .ok_or_else(bad),
        }
    }
}

impl Serialize for Theta {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Theta::Absolute(v) if v.is_finite() => s.serialize_f64(*v),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Theta {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Theta::Absolute(v)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Linear-interpolated percentile (`p` in 0..=100) over a copy of `values`.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::INFINITY;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (rank - lo as f64)
}

/// Sampling interval in windows; `None` disables periodic picks.
pub type Period = Option<usize>;

/// How a window's histogram is turned into an entropy value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyMode {
    /// Sum over samples of `-p(bin(x)) log2 p(bin(x))`.
    #[default]
    PerSample,
    /// Shannon entropy of the bin frequencies.
    PerBin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    /// Window size in frames.
    pub window: usize,
    /// Histogram bin count.
    pub bins: usize,
    /// Gaussian std-dev across windows.
    pub sigma: f64,
    pub theta: Theta,
    #[serde(with = "period_serde")]
    pub period: Period,
    pub entropy_mode: EntropyMode,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            window: 8,
            bins: 10,
            sigma: 1.0,
            theta: Theta::default(),
            period: Some(10),
            entropy_mode: EntropyMode::PerSample,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<(), GateError> {
        if self.window < 2 {
            return Err(GateError::Config(format!("window must be >= 2, got {}", self.window)));
        }
        if self.bins < 1 {
            return Err(GateError::Config("bins must be >= 1".into()));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(GateError::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.period == Some(0) {
            return Err(GateError::Config("period must be >= 1".into()));
        }
        Ok(())
    }
}

pub(crate) mod period_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match p {
            Some(v) => s.serialize_u64(*v as u64),
            None => s.serialize_str("inf"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Some(v as usize)),
            Raw::Text(s) => super::parse_period(&s).map_err(serde::de::Error::custom),
        }
    }
}

/// Parses `inf` or a positive integer.
pub fn parse_period(s: &str) -> Result<Period, String> {
    match s.trim() {
        "inf" | "infinity" | "none" => Ok(None),
        t => t
            .parse::<usize>()
            .ok()
            .filter(|&v| v >= 1)
            .map(Some)
            .ok_or_else(|| format!("invalid period `{s}`")),
    }
}

/// A contiguous frame range `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub len: usize,
}

impl Window {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// Splits `frames` into consecutive windows of `n`. A trailing remainder of
/// at least two frames becomes a short final window; a single leftover frame
/// is folded into the previous window.
pub fn partition(frames: usize, n: usize) -> Result<Vec<Window>, GateError> {
    if n < 2 {
        return Err(GateError::Config(format!("window must be >= 2, got {n}")));
    }
    if frames < 2 {
        return Err(GateError::TooShort(frames));
    }
    let mut windows: Vec<Window> = (0..frames / n)
        .map(|q| Window { start: q * n, len: n })
        .collect();
    let rem = frames % n;
    match (rem, windows.last_mut()) {
        (0, _) => {}
        (1, Some(prev)) => prev.len += 1,
        (r, _) => windows.push(Window { start: frames - r, len: r }),
    }
    Ok(windows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// Relative frequency of each bin; sums to one.
    pub bin_freq: Vec<f64>,
    /// Frequency of the bin each sample falls into, in sample order.
    pub per_sample: Vec<f64>,
}

/// Equal-width histogram over `[min, max]` of the window. Bins are half-open
/// except the last, which is closed. A constant window puts every sample in
/// one bin with frequency 1.
pub fn histogram_pdf(values: &[f64], bins: usize) -> Result<Histogram, GateError> {
    if values.is_empty() {
        return Err(GateError::EmptyWindow);
    }
    if bins < 1 {
        return Err(GateError::Config("bins must be >= 1".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let m = values.len() as f64;
    let mut counts = vec![0usize; bins];
    let assignment: Vec<usize> = if hi == lo {
        vec![0; values.len()]
    } else {
        let width = (hi - lo) / bins as f64;
        // interior edges lo + k*width for k = 1..bins
        let edges: Vec<f64> = (1..bins).map(|k| lo + k as f64 * width).collect();
        values
            .iter()
            .map(|&x| edges.partition_point(|&e| e <= x))
            .collect()
    };
    for &b in &assignment {
        counts[b] += 1;
    }
    let bin_freq: Vec<f64> = counts.iter().map(|&c| c as f64 / m).collect();
    let per_sample = assignment.iter().map(|&b| bin_freq[b]).collect();
    Ok(Histogram { bin_freq, per_sample })
}

/// Window entropy in bits.
pub fn differential_entropy(values: &[f64], bins: usize, mode: EntropyMode) -> Result<f64, GateError> {
    let h = histogram_pdf(values, bins)?;
    let terms: &[f64] = match mode {
        EntropyMode::PerSample => &h.per_sample,
        EntropyMode::PerBin => &h.bin_freq,
    };
    let sum: f64 = terms
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum();
    // -0.0 for fully degenerate windows
    Ok(sum.max(0.0))
}

pub fn smooth_entropy(entropies: &[f64], sigma: f64) -> Result<Vec<f64>, GateError> {
    let kernel = GaussianKernel::new(sigma)
        .ok_or_else(|| GateError::Config(format!("sigma must be > 0, got {sigma}")))?;
    Ok(kernel.smooth(entropies))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsequenceEntropy {
    pub index: usize,
    pub window: Window,
    /// Raw entropy (bits).
    pub raw: f64,
    /// Smoothed entropy (bits).
    pub smoothed: f64,
}

pub fn window_entropies(series: &ScoreSeries, cfg: &GateConfig) -> Result<Vec<SubsequenceEntropy>, GateError> {
    cfg.validate()?;
    let windows = partition(series.len(), cfg.window)?;
    let raw = windows
        .iter()
        .map(|w| differential_entropy(&series.scores[w.start..w.end()], cfg.bins, cfg.entropy_mode))
        .collect::<Result<Vec<_>, _>>()?;
    let smoothed = smooth_entropy(&raw, cfg.sigma)?;
    Ok(windows
        .into_iter()
        .zip(raw)
        .zip(smoothed)
        .enumerate()
        .map(|(index, ((window, raw), smoothed))| SubsequenceEntropy {
            index,
            window,
            raw,
            smoothed,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trigger {
    Entropy,
    Periodic,
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trigger::Entropy => "entropy",
            Trigger::Periodic => "periodic",
        })
    }
}

/// A window flagged for slow analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSelection {
    pub video_id: String,
    pub window_index: usize,
    pub start_frame: usize,
    pub length: usize,
    pub reason: Trigger,
    /// Smoothed entropy of the window, recorded for both trigger kinds.
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOutcome {
    pub entropies: Vec<SubsequenceEntropy>,
    pub theta: f64,
    pub selections: Vec<SegmentSelection>,
}

impl GateOutcome {
    pub fn window_count(&self) -> usize {
        self.entropies.len()
    }
}

pub fn gate(series: &ScoreSeries, cfg: &GateConfig) -> Result<GateOutcome, GateError> {
    let entropies = window_entropies(series, cfg)?;
    let smoothed: Vec<f64> = entropies.iter().map(|e| e.smoothed).collect();
    let theta = cfg.theta.resolve(&smoothed);
    let selections = entropies
        .iter()
        .filter_map(|e| {
            let reason = if e.smoothed > theta {
                Trigger::Entropy
            } else if cfg.period.is_some_and(|t| e.index % t == 0) {
                Trigger::Periodic
            } else {
                return None;
            };
            Some(SegmentSelection {
                video_id: series.video_id.clone(),
                window_index: e.index,
                start_frame: e.window.start,
                length: e.window.len,
                reason,
                entropy: e.smoothed,
            })
        })
        .collect();
    Ok(GateOutcome {
        entropies,
        theta,
        selections,
    })
}

/// Windows to send to the slow detector, sorted by start frame.
pub fn select_segments(series: &ScoreSeries, cfg: &GateConfig) -> Result<Vec<SegmentSelection>, GateError> {
    Ok(gate(series, cfg)?.selections)
}

pub fn write_selections_csv<W: Write>(selections: &[SegmentSelection], mut out: W) -> std::io::Result<()> {
    writeln!(out, "video_id,start_frame,length,reason,entropy")?;
    for s in selections {
        writeln!(
            out,
            "{},{},{},{},{:?}",
            s.video_id, s.start_frame, s.length, s.reason, s.entropy
        )?;
    }
    Ok(())
}
