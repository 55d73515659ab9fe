//! Loading of fast-detector score streams, frame-level ground truth and
//! frame references.
//!
//! Two on-disk layouts are accepted for both scores and labels:
//!
//! * CSV with a mandatory header. Scores use `video_id,scene_id,frame_index,score`,
//!   labels use `video_id,frame_index,label` (a `scene_id` column is tolerated).
//! * JSONL, one object per video: `{"video_id":…, "scene_id":…, "scores":[…]}` or
//!   `{"video_id":…, "labels":[…]}`.
//!
//! Files ending in `.jsonl` or `.json` are read as JSONL, everything else as CSV.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed row {row}: {msg}")]
    Malformed { path: PathBuf, row: usize, msg: String },
    #[error("{path}: score out of range at row {row}: {value}")]
    ScoreOutOfRange { path: PathBuf, row: usize, value: f64 },
    #[error("{path}: label not in {{0,1}} at row {row}: {value}")]
    BadLabel { path: PathBuf, row: usize, value: String },
    #[error("{path}: duplicate frame ({video_id}, {frame_index}) at row {row}")]
    DuplicateFrame {
        path: PathBuf,
        row: usize,
        video_id: String,
        frame_index: usize,
    },
    #[error("{path}: duplicate video {video_id} at row {row}")]
    DuplicateVideo { path: PathBuf, row: usize, video_id: String },
    #[error("{path}: video {video_id} has non-contiguous frames (missing frame {missing}, first seen near row {row})")]
    NonContiguous {
        path: PathBuf,
        row: usize,
        video_id: String,
        missing: usize,
    },
    #[error("{path}: video {video_id} changes scene at row {row} ({first} vs {second})")]
    SceneConflict {
        path: PathBuf,
        row: usize,
        video_id: String,
        first: String,
        second: String,
    },
    #[error("video {video_id}: {msg}")]
    InvalidSeries { video_id: String, msg: String },
    #[error("ground truth for {video_id} has {truth_len} frames but scores have {score_len}")]
    LengthMismatch {
        video_id: String,
        truth_len: usize,
        score_len: usize,
    },
    #[error("ground truth references unknown video {0}")]
    UnknownVideo(String),
}

/// Per-video frame-indexed anomaly confidences from the fast detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub video_id: String,
    pub scene_id: String,
    pub scores: Vec<f64>,
}

impl ScoreSeries {
    pub fn new(
        video_id: impl Into<String>,
        scene_id: impl Into<String>,
        scores: Vec<f64>,
    ) -> Result<Self, IngestError> {
        let video_id = video_id.into();
        if scores.is_empty() {
            return Err(IngestError::InvalidSeries {
                video_id,
                msg: "empty score series".into(),
            });
        }
        if let Some((i, s)) = scores
            .iter()
            .enumerate()
            .find(|(_, s)| !(0.0..=1.0).contains(*s))
        {
            return Err(IngestError::InvalidSeries {
                video_id,
                msg: format!("score {s} at frame {i} outside [0,1]"),
            });
        }
        Ok(Self {
            video_id,
            scene_id: scene_id.into(),
            scores,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Rescale raw scores (e.g. reconstruction errors) into [0,1]. A
    /// constant series maps to all zeros.
    pub fn min_max_normalize(raw: &[f64]) -> Vec<f64> {
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        if !(span > 0.0) {
            return vec![0.0; raw.len()];
        }
        raw.iter()
            .map(|&x| ((x - lo) / span).clamp(0.0, 1.0))
            .collect()
    }
}

/// Frame-level binary labels, 1 = anomalous.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub video_id: String,
    pub labels: Vec<u8>,
}

/// A frame to hand to the vision model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameRef {
    pub video_id: String,
    pub frame_index: usize,
    pub uri: Option<String>,
}

impl FrameRef {
    /// Frame references for `start..start+len`. With a frames root, URIs
    /// follow `<root>/<video_id>/<frame_index:06>.jpg`.
    pub fn range(
        series: &ScoreSeries,
        start: usize,
        len: usize,
        frames_root: Option<&Path>,
    ) -> Result<Vec<FrameRef>, IngestError> {
        if start + len > series.len() {
            return Err(IngestError::InvalidSeries {
                video_id: series.video_id.clone(),
                msg: format!(
                    "frame range {start}..{} exceeds {} frames",
                    start + len,
                    series.len()
                ),
            });
        }
        Ok((start..start + len)
            .map(|frame_index| FrameRef {
                video_id: series.video_id.clone(),
                frame_index,
                uri: frames_root.map(|root| {
                    root.join(&series.video_id)
                        .join(format!("{frame_index:06}.jpg"))
                        .to_string_lossy()
                        .into_owned()
                }),
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Accept raw scores and min-max normalize each series into [0,1].
    pub normalize: bool,
}

fn is_jsonl(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("json")
    )
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoreSeries>, IngestError> {
    load_scores_with(path, LoadOptions::default())
}

pub fn load_scores_with(path: &Path, opts: LoadOptions) -> Result<Vec<ScoreSeries>, IngestError> {
    let file = open(path)?;
    let raw = if is_jsonl(path) {
        read_scores_jsonl(path, file, opts)?
    } else {
        read_scores_csv(path, file, opts)?
    };
    raw.into_iter()
        .map(|(video_id, scene_id, scores)| {
            let scores = if opts.normalize {
                ScoreSeries::min_max_normalize(&scores)
            } else {
                scores
            };
            ScoreSeries::new(video_id, scene_id, scores)
        })
        .collect()
}

type RawSeries = (String, String, Vec<f64>);

struct FrameAccumulator<T> {
    frames: BTreeMap<usize, T>,
    first_row: usize,
}

/// Collects `(video, frame) -> value` rows and checks duplicates and gaps.
fn assemble<T: Copy>(
    path: &Path,
    videos: BTreeMap<String, FrameAccumulator<T>>,
) -> Result<Vec<(String, Vec<T>)>, IngestError> {
    let mut out = Vec::with_capacity(videos.len());
    for (video_id, acc) in videos {
        for (expected, (&idx, _)) in acc.frames.iter().enumerate() {
            if idx != expected {
                return Err(IngestError::NonContiguous {
                    path: path.to_path_buf(),
                    row: acc.first_row,
                    video_id,
                    missing: expected,
                });
            }
        }
        out.push((video_id, acc.frames.into_values().collect()));
    }
    Ok(out)
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| IngestError::Malformed {
            path: path.to_path_buf(),
            row: 1,
            msg: format!("missing column `{name}`"),
        })
}

fn csv_reader(file: File) -> csv::Reader<File> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file)
}

fn parse_field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    col: usize,
    name: &str,
    path: &Path,
    row: usize,
) -> Result<T, IngestError> {
    let raw = rec.get(col).unwrap_or("");
    raw.parse().map_err(|_| IngestError::Malformed {
        path: path.to_path_buf(),
        row,
        msg: format!("bad {name} `{raw}`"),
    })
}

fn read_scores_csv(path: &Path, file: File, opts: LoadOptions) -> Result<Vec<RawSeries>, IngestError> {
    let mut rdr = csv_reader(file);
    let headers = match rdr.headers() {
        Ok(h) if !h.is_empty() => h.clone(),
        Ok(_) => return Ok(Vec::new()),
        Err(e) => {
            return Err(IngestError::Malformed {
                path: path.to_path_buf(),
                row: 1,
                msg: e.to_string(),
            })
        }
    };
    let c_video = column(&headers, "video_id", path)?;
    let c_scene = column(&headers, "scene_id", path)?;
    let c_frame = column(&headers, "frame_index", path)?;
    let c_score = column(&headers, "score", path)?;

    let mut videos: BTreeMap<String, FrameAccumulator<f64>> = BTreeMap::new();
    let mut scenes: HashMap<String, String> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        // header is row 1
        let row = i + 2;
        let rec = rec.map_err(|e| IngestError::Malformed {
            path: path.to_path_buf(),
            row,
            msg: e.to_string(),
        })?;
        let video_id = rec.get(c_video).unwrap_or("").to_string();
        if video_id.is_empty() {
            return Err(IngestError::Malformed {
                path: path.to_path_buf(),
                row,
                msg: "empty video_id".into(),
            });
        }
        let scene_id = rec.get(c_scene).unwrap_or("").to_string();
        let frame: usize = parse_field(&rec, c_frame, "frame_index", path, row)?;
        let score: f64 = parse_field(&rec, c_score, "score", path, row)?;
        if !score.is_finite() || (!opts.normalize && !(0.0..=1.0).contains(&score)) {
            return Err(IngestError::ScoreOutOfRange {
                path: path.to_path_buf(),
                row,
                value: score,
            });
        }
        match scenes.get(&video_id) {
            Some(first) if *first != scene_id => {
                return Err(IngestError::SceneConflict {
                    path: path.to_path_buf(),
                    row,
                    video_id,
                    first: first.clone(),
                    second: scene_id,
                })
            }
            Some(_) => {}
            None => {
                scenes.insert(video_id.clone(), scene_id);
            }
        }
        let acc = videos
            .entry(video_id.clone())
            .or_insert_with(|| FrameAccumulator {
                frames: BTreeMap::new(),
                first_row: row,
            });
        if acc.frames.insert(frame, score).is_some() {
            return Err(IngestError::DuplicateFrame {
                path: path.to_path_buf(),
                row,
                video_id,
                frame_index: frame,
            });
        }
    }
    Ok(assemble(path, videos)?
        .into_iter()
        .map(|(v, scores)| {
            let scene = scenes.remove(&v).unwrap_or_default();
            (v, scene, scores)
        })
        .collect())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonScores {
    video_id: String,
    scene_id: String,
    scores: Vec<f64>,
}

#[derive(Deserialize)]
struct JsonLabels {
    video_id: String,
    labels: Vec<serde_json::Value>,
}

fn jsonl_lines(path: &Path, file: File) -> impl Iterator<Item = Result<(usize, String), IngestError>> + '_ {
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| match line {
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(Ok((i + 1, l))),
            Err(source) => Some(Err(IngestError::Io {
                path: path.to_path_buf(),
                source,
            })),
        })
}

fn read_scores_jsonl(path: &Path, file: File, opts: LoadOptions) -> Result<Vec<RawSeries>, IngestError> {
    let mut seen: BTreeMap<String, RawSeries> = BTreeMap::new();
    for item in jsonl_lines(path, file) {
        let (row, line) = item?;
        let rec: JsonScores = serde_json::from_str(&line).map_err(|e| IngestError::Malformed {
            path: path.to_path_buf(),
            row,
            msg: e.to_string(),
        })?;
        if let Some(bad) = rec
            .scores
            .iter()
            .find(|s| !s.is_finite() || (!opts.normalize && !(0.0..=1.0).contains(*s)))
        {
            return Err(IngestError::ScoreOutOfRange {
                path: path.to_path_buf(),
                row,
                value: *bad,
            });
        }
        if seen.contains_key(&rec.video_id) {
            return Err(IngestError::DuplicateVideo {
                path: path.to_path_buf(),
                row,
                video_id: rec.video_id,
            });
        }
        seen.insert(rec.video_id.clone(), (rec.video_id, rec.scene_id, rec.scores));
    }
    Ok(seen.into_values().collect())
}

fn parse_label(raw: &str, path: &Path, row: usize) -> Result<u8, IngestError> {
    match raw.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(IngestError::BadLabel {
            path: path.to_path_buf(),
            row,
            value: other.to_string(),
        }),
    }
}

pub fn load_labels(path: &Path) -> Result<Vec<GroundTruth>, IngestError> {
    let file = open(path)?;
    if is_jsonl(path) {
        let mut seen: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        for item in jsonl_lines(path, file) {
            let (row, line) = item?;
            let rec: JsonLabels = serde_json::from_str(&line).map_err(|e| IngestError::Malformed {
                path: path.to_path_buf(),
                row,
                msg: e.to_string(),
            })?;
            let labels = rec
                .labels
                .iter()
                .map(|v| parse_label(&v.to_string(), path, row))
                .collect::<Result<Vec<_>, _>>()?;
            if seen.insert(rec.video_id.clone(), labels).is_some() {
                return Err(IngestError::DuplicateVideo {
                    path: path.to_path_buf(),
                    row,
                    video_id: rec.video_id,
                });
            }
        }
        return Ok(seen
            .into_iter()
            .map(|(video_id, labels)| GroundTruth { video_id, labels })
            .collect());
    }

    let mut rdr = csv_reader(file);
    let headers = match rdr.headers() {
        Ok(h) if !h.is_empty() => h.clone(),
        _ => return Ok(Vec::new()),
    };
    let c_video = column(&headers, "video_id", path)?;
    let c_frame = column(&headers, "frame_index", path)?;
    let c_label = column(&headers, "label", path)?;
    let mut videos: BTreeMap<String, FrameAccumulator<u8>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| IngestError::Malformed {
            path: path.to_path_buf(),
            row,
            msg: e.to_string(),
        })?;
        let video_id = rec.get(c_video).unwrap_or("").to_string();
        let frame: usize = parse_field(&rec, c_frame, "frame_index", path, row)?;
        let label = parse_label(rec.get(c_label).unwrap_or(""), path, row)?;
        let acc = videos
            .entry(video_id.clone())
            .or_insert_with(|| FrameAccumulator {
                frames: BTreeMap::new(),
                first_row: row,
            });
        if acc.frames.insert(frame, label).is_some() {
            return Err(IngestError::DuplicateFrame {
                path: path.to_path_buf(),
                row,
                video_id,
                frame_index: frame,
            });
        }
    }
    Ok(assemble(path, videos)?
        .into_iter()
        .map(|(video_id, labels)| GroundTruth { video_id, labels })
        .collect())
}

/// Every ground-truth video must exist among the score series with the
/// same frame count.
pub fn validate_alignment(series: &[ScoreSeries], truth: &[GroundTruth]) -> Result<(), IngestError> {
    let lens: HashMap<&str, usize> = series
        .iter()
        .map(|s| (s.video_id.as_str(), s.len()))
        .collect();
    for gt in truth {
        match lens.get(gt.video_id.as_str()) {
            None => return Err(IngestError::UnknownVideo(gt.video_id.clone())),
            Some(&n) if n != gt.labels.len() => {
                return Err(IngestError::LengthMismatch {
                    video_id: gt.video_id.clone(),
                    truth_len: gt.labels.len(),
                    score_len: n,
                })
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Writes series in the CSV layout accepted by [`load_scores`]. Floats use
/// the shortest representation that parses back to the identical value.
pub fn write_scores_csv<W: Write>(series: &[ScoreSeries], mut out: W) -> std::io::Result<()> {
    writeln!(out, "video_id,scene_id,frame_index,score")?;
    for s in series {
        for (i, v) in s.scores.iter().enumerate() {
            writeln!(out, "{},{},{},{:?}", s.video_id, s.scene_id, i, v)?;
        }
    }
    Ok(())
}

pub fn write_labels_csv<W: Write>(truth: &[GroundTruth], mut out: W) -> std::io::Result<()> {
    writeln!(out, "video_id,frame_index,label")?;
    for t in truth {
        for (i, l) in t.labels.iter().enumerate() {
            writeln!(out, "{},{},{}", t.video_id, i, l)?;
        }
    }
    Ok(())
}
