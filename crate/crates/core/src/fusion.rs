//! Fusion of slow verdicts into the fast score timeline.
//!
//! A verdict's score is broadcast over the frames of its segment. Covered
//! frames get `alpha * slow + (1 - alpha) * fast`; uncovered frames keep the
//! fast score. The result is optionally Gaussian-smoothed along the frame
//! axis.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy_gate::Trigger;
use crate::gaussian::GaussianKernel;
use crate::ingest::ScoreSeries;
use crate::slow_detector::SlowVerdict;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("verdict segment {start}..{end} exceeds {frames} frames of {video_id}")]
    OutOfRange {
        video_id: String,
        start: usize,
        end: usize,
        frames: usize,
    },
    #[error("verdict segments overlap at frame {frame} of {video_id}")]
    Overlap { video_id: String, frame: usize },
    #[error("verdict for {got} applied to video {expected}")]
    WrongVideo { expected: String, got: String },
    #[error("invalid fusion config: {0}")]
    Config(String),
    #[error("malformed fused CSV at line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

/// Per-dataset fusion weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Ped2,
    Avenue,
    ShanghaiTech,
}

impl Dataset {
    pub fn alpha(self) -> f64 {
        match self {
            Dataset::Ped2 => 0.8,
            Dataset::Avenue => 0.5,
            Dataset::ShanghaiTech => 0.7,
        }
    }
}

impl std::str::FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ped2" => Ok(Dataset::Ped2),
            "avenue" => Ok(Dataset::Avenue),
            "shanghaitech" => Ok(Dataset::ShanghaiTech),
            _ => Err(format!("unknown dataset `{s}` (expected ped2, avenue or shanghaitech)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub alpha: f64,
    /// Std-dev in frames of the final smoothing; `None` skips it.
    pub smooth_sigma: Option<f64>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            alpha: Dataset::Ped2.alpha(),
            smooth_sigma: Some(2.0),
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(FusionError::Config(format!("alpha must be in [0,1], got {}", self.alpha)));
        }
        if let Some(s) = self.smooth_sigma {
            if !(s.is_finite() && s > 0.0) {
                return Err(FusionError::Config(format!("smooth_sigma must be > 0, got {s}")));
            }
        }
        Ok(())
    }
}

/// Slow scores broadcast onto frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowTrack {
    pub values: Vec<Option<f64>>,
}

impl SlowTrack {
    pub fn coverage(&self) -> Vec<bool> {
        self.values.iter().map(Option::is_some).collect()
    }
}

pub fn splice(series: &ScoreSeries, verdicts: &[SlowVerdict]) -> Result<SlowTrack, FusionError> {
    let mut values = vec![None; series.len()];
    for v in verdicts {
        let seg = &v.segment;
        if seg.video_id != series.video_id {
            return Err(FusionError::WrongVideo {
                expected: series.video_id.clone(),
                got: seg.video_id.clone(),
            });
        }
        let end = seg.start_frame + seg.length;
        if end > series.len() {
            return Err(FusionError::OutOfRange {
                video_id: series.video_id.clone(),
                start: seg.start_frame,
                end,
                frames: series.len(),
            });
        }
        for (frame, slot) in values.iter_mut().enumerate().take(end).skip(seg.start_frame) {
            if slot.is_some() {
                return Err(FusionError::Overlap {
                    video_id: series.video_id.clone(),
                    frame,
                });
            }
            *slot = Some(v.score);
        }
    }
    Ok(SlowTrack { values })
}

/// Weighted average on covered frames, fast score elsewhere.
pub fn fuse(fast: &[f64], slow: &SlowTrack, alpha: f64) -> Vec<f64> {
    fast.iter()
        .zip(&slow.values)
        .map(|(&f, s)| match s {
            Some(s) => alpha * s + (1.0 - alpha) * f,
            None => f,
        })
        .collect()
}

pub fn smooth_fused(prefused: &[f64], sigma: f64) -> Result<Vec<f64>, FusionError> {
    let kernel = GaussianKernel::new(sigma)
        .ok_or_else(|| FusionError::Config(format!("smooth_sigma must be > 0, got {sigma}")))?;
    Ok(kernel
        .smooth(prefused)
        .into_iter()
        .map(|x| x.clamp(0.0, 1.0))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub start: usize,
    pub len: usize,
    pub reason_text: String,
    pub trigger: Trigger,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedSeries {
    pub video_id: String,
    pub fast: Vec<f64>,
    pub slow: Vec<Option<f64>>,
    pub fused: Vec<f64>,
    pub coverage: Vec<bool>,
    pub explanations: Vec<Explanation>,
}

impl FusedSeries {
    pub fn len(&self) -> usize {
        self.fused.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fused.is_empty()
    }

    pub fn covered_frames(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }
}

pub fn fuse_video(series: &ScoreSeries, verdicts: &[SlowVerdict], cfg: &FusionConfig) -> Result<FusedSeries, FusionError> {
    cfg.validate()?;
    let track = splice(series, verdicts)?;
    let pre = fuse(&series.scores, &track, cfg.alpha);
    let fused = match cfg.smooth_sigma {
        Some(sigma) => smooth_fused(&pre, sigma)?,
        None => pre,
    };
    let mut explanations: Vec<Explanation> = verdicts
        .iter()
        .map(|v| Explanation {
            start: v.segment.start_frame,
            len: v.segment.length,
            reason_text: v.reasoning.clone(),
            trigger: v.segment.reason,
            score: v.score,
        })
        .collect();
    explanations.sort_by_key(|e| e.start);
    Ok(FusedSeries {
        video_id: series.video_id.clone(),
        fast: series.scores.clone(),
        coverage: track.coverage(),
        slow: track.values,
        fused,
        explanations,
    })
}

/// `frame_index,fast,slow_or_empty,fused,covered`
pub fn write_fused_csv<W: Write>(fs: &FusedSeries, mut out: W) -> std::io::Result<()> {
    writeln!(out, "frame_index,fast,slow_or_empty,fused,covered")?;
    for i in 0..fs.len() {
        let slow = fs.slow[i].map(|s| format!("{s:?}")).unwrap_or_default();
        writeln!(
            out,
            "{i},{:?},{slow},{:?},{}",
            fs.fast[i],
            fs.fused[i],
            u8::from(fs.coverage[i])
        )?;
    }
    Ok(())
}

/// Reads back a file written by [`write_fused_csv`]; explanations are not
/// part of the CSV and come back empty.
pub fn read_fused_csv<R: BufRead>(video_id: &str, input: R) -> Result<FusedSeries, FusionError> {
    let mut fs = FusedSeries {
        video_id: video_id.to_string(),
        fast: Vec::new(),
        slow: Vec::new(),
        fused: Vec::new(),
        coverage: Vec::new(),
        explanations: Vec::new(),
    };
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| FusionError::Csv { line: line_no, msg: e.to_string() })?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| FusionError::Csv { line: line_no, msg: msg.to_string() };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(bad("expected 5 columns"));
        }
        let idx: usize = cols[0].parse().map_err(|_| bad("bad frame_index"))?;
        if idx != fs.fused.len() {
            return Err(bad("frame indices must be contiguous from 0"));
        }
        fs.fast.push(cols[1].parse().map_err(|_| bad("bad fast score"))?);
        fs.slow.push(if cols[2].is_empty() {
            None
        } else {
            Some(cols[2].parse().map_err(|_| bad("bad slow score"))?)
        });
        fs.fused.push(cols[3].parse().map_err(|_| bad("bad fused score"))?);
        fs.coverage.push(match cols[4] {
            "1" | "true" => true,
            "0" | "false" => false,
            _ => return Err(bad("bad covered flag")),
        });
    }
    Ok(fs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub video_id: String,
    pub ranges: Vec<Explanation>,
}

impl From<&FusedSeries> for ExplanationRecord {
    fn from(fs: &FusedSeries) -> Self {
        Self {
            video_id: fs.video_id.clone(),
            ranges: fs.explanations.clone(),
        }
    }
}
