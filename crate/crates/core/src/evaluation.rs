//! Frame-level ROC-AUC, micro (all frames pooled) and macro (mean of
//! per-video AUCs).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("scores and labels differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("labels contain a single class; AUC undefined")]
    SingleClass,
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("no video contains both classes")]
    AllSingleClass,
    #[error("empty test set")]
    Empty,
    #[error("no labels for video {0}")]
    MissingLabels(String),
}

/// Mann–Whitney AUC with half credit for ties:
/// `(#{pos > neg} + 0.5 * #{pos == neg}) / (P * N)`.
///
/// Computed from average ranks; the numerator is a sum of half-integers
/// and stays exact in `f64` for any realistic frame count.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Length(scores.len(), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(EvalError::BadLabel(bad));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the rank sum of positives, kept integral
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share (i+1+j)/2
        let tied_pos = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank_sum_x2 += tied_pos * (i as u128 + 1 + j as u128);
        i = j;
    }
    let p = pos as u128;
    let u_x2 = rank_sum_x2 - p * (p + 1);
    Ok(u_x2 as f64 / (2.0 * pos as f64 * neg as f64))
}

/// One video's scores and labels.
#[derive(Debug, Clone, Copy)]
pub struct Scored<'a> {
    pub video_id: &'a str,
    pub scores: &'a [f64],
    pub labels: &'a [u8],
}

pub fn micro_auc(videos: &[Scored<'_>]) -> Result<f64, EvalError> {
    if videos.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for v in videos {
        if v.scores.len() != v.labels.len() {
            return Err(EvalError::Length(v.scores.len(), v.labels.len()));
        }
        scores.extend_from_slice(v.scores);
        labels.extend_from_slice(v.labels);
    }
    roc_auc(&scores, &labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAuc {
    pub video_id: String,
    /// `None` when the video holds a single class and was skipped.
    pub auc: Option<f64>,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroAuc {
    pub mean: f64,
    pub per_video: Vec<VideoAuc>,
    pub skipped: usize,
}

pub fn macro_auc(videos: &[Scored<'_>]) -> Result<MacroAuc, EvalError> {
    if videos.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut per_video = Vec::with_capacity(videos.len());
    for v in videos {
        let auc = match roc_auc(v.scores, v.labels) {
            Ok(a) => Some(a),
            Err(EvalError::SingleClass) => None,
            Err(e) => return Err(e),
        };
        per_video.push(VideoAuc {
            video_id: v.video_id.to_string(),
            auc,
            frames: v.scores.len(),
        });
    }
    let valid: Vec<f64> = per_video.iter().filter_map(|v| v.auc).collect();
    if valid.is_empty() {
        return Err(EvalError::AllSingleClass);
    }
    Ok(MacroAuc {
        mean: valid.iter().sum::<f64>() / valid.len() as f64,
        skipped: per_video.len() - valid.len(),
        per_video,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub frames: usize,
    pub videos: usize,
    pub skipped_videos: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub name: Option<String>,
    pub micro_auc: f64,
    pub macro_auc: f64,
    pub per_video: Vec<VideoAuc>,
    pub counts: EvalCounts,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub intervention_rate: Option<f64>,
    pub config_echo: serde_json::Value,
}

impl EvalReport {
    pub fn compute(videos: &[Scored<'_>], config_echo: serde_json::Value) -> Result<Self, EvalError> {
        let micro = micro_auc(videos)?;
        let mac = macro_auc(videos)?;
        Ok(Self {
            name: None,
            micro_auc: micro,
            macro_auc: mac.mean,
            counts: EvalCounts {
                frames: videos.iter().map(|v| v.scores.len()).sum(),
                videos: videos.len(),
                skipped_videos: mac.skipped,
            },
            per_video: mac.per_video,
            intervention_rate: None,
            config_echo,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
