//! Synthetic benchmark: ground-truth anomaly intervals, a noisy fast
//! detector that is confused on a fraction of windows, and normal-only
//! training videos. Pairs with [`OracleMockChat`] as the slow detector.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ingest::{write_labels_csv, write_scores_csv, GroundTruth, ScoreSeries};
use crate::slow_detector::mock::OracleMockChat;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub videos: usize,
    pub frames: usize,
    pub scenes: usize,
    pub train_videos: usize,
    pub window: usize,
    /// Std-dev of the fast detector's Gaussian noise.
    pub noise: f64,
    /// Fraction of windows per video where the fast detector is confused.
    pub confused_fraction: f64,
    /// Mean fast score on normal / anomalous frames.
    pub normal_level: f64,
    pub anomaly_level: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            videos: 20,
            frames: 400,
            scenes: 2,
            train_videos: 4,
            window: 8,
            noise: 0.3,
            confused_fraction: 0.1,
            normal_level: 0.3,
            anomaly_level: 0.7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub test: Vec<ScoreSeries>,
    pub truth: Vec<GroundTruth>,
    pub train: Vec<ScoreSeries>,
    /// Window indices where the fast detector was made to flip labels.
    pub confused: Vec<Vec<usize>>,
}

impl SyntheticDataset {
    pub fn generate(cfg: &SyntheticConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let noise = Normal::new(0.0, cfg.noise).expect("noise std-dev is finite and >= 0");
        let windows = cfg.frames / cfg.window;
        let n_confused = (cfg.confused_fraction * windows as f64).round() as usize;
        let scene = |i: usize| format!("scene{:02}", i % cfg.scenes.max(1) + 1);

        let mut test = Vec::with_capacity(cfg.videos);
        let mut truth = Vec::with_capacity(cfg.videos);
        let mut confused = Vec::with_capacity(cfg.videos);
        for v in 0..cfg.videos {
            let video_id = format!("test_{v:03}");
            let mut labels = vec![0u8; cfg.frames];
            // every tenth video stays normal
            if v % 10 != 9 {
                let events = 1 + rng.random_range(0..2);
                for _ in 0..events {
                    let len = rng.random_range(40..=120).min(cfg.frames);
                    let start = rng.random_range(0..=cfg.frames - len);
                    labels[start..start + len].iter_mut().for_each(|l| *l = 1);
                }
            }
            let mut flipped: Vec<usize> = sample(&mut rng, windows, n_confused.min(windows)).into_vec();
            flipped.sort_unstable();
            let scores = labels
                .iter()
                .enumerate()
                .map(|(i, &l)| {
                    let mut l = l;
                    if flipped.binary_search(&(i / cfg.window)).is_ok() && rng.random_bool(0.5) {
                        l = 1 - l;
                    }
                    let level = if l == 1 { cfg.anomaly_level } else { cfg.normal_level };
                    (level + noise.sample(&mut rng)).clamp(0.0, 1.0)
                })
                .collect();
            test.push(ScoreSeries {
                video_id: video_id.clone(),
                scene_id: scene(v),
                scores,
            });
            truth.push(GroundTruth { video_id, labels });
            confused.push(flipped);
        }

        let train = (0..cfg.train_videos)
            .map(|v| ScoreSeries {
                video_id: format!("train_{v:03}"),
                scene_id: scene(v),
                scores: (0..cfg.frames)
                    .map(|_| (cfg.normal_level + noise.sample(&mut rng)).clamp(0.0, 1.0))
                    .collect(),
            })
            .collect();

        Self {
            test,
            truth,
            train,
            confused,
        }
    }

    /// Oracle slow detector that knows this dataset's labels.
    pub fn oracle_chat(&self) -> OracleMockChat {
        oracle_for(&self.test, &self.truth, &self.train)
    }

    /// Writes `test_scores.csv`, `test_labels.csv` and `train_scores.csv`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        write_scores_csv(&self.test, BufWriter::new(File::create(dir.join("test_scores.csv"))?))?;
        write_labels_csv(&self.truth, BufWriter::new(File::create(dir.join("test_labels.csv"))?))?;
        write_scores_csv(&self.train, BufWriter::new(File::create(dir.join("train_scores.csv"))?))?;
        Ok(())
    }
}

/// Oracle mock over test videos with known labels plus training videos
/// (treated as all-normal).
pub fn oracle_for(test: &[ScoreSeries], truth: &[GroundTruth], train: &[ScoreSeries]) -> OracleMockChat {
    let mut chat = OracleMockChat::new();
    for s in train {
        chat.add_video(&s.video_id, &s.scene_id, vec![0; s.len()]);
    }
    for s in test {
        let labels = truth
            .iter()
            .find(|t| t.video_id == s.video_id)
            .map(|t| t.labels.clone())
            .unwrap_or_else(|| vec![0; s.len()]);
        chat.add_video(&s.video_id, &s.scene_id, labels);
    }
    chat
}
