//! Deterministic stand-ins for the remote models.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use sha2::{Digest, Sha256};

use super::client::{l2_normalize, ChatClient, ClientError, EmbeddingClient};
use crate::ingest::FrameRef;

pub const MOCK_EMBED_DIM: usize = 256;

/// Bag-of-tokens embedder: each lowercase alphanumeric token is hashed with
/// SHA-256 into 256 components of ±1, the token vectors are summed and the
/// result is L2-normalized.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashEmbedder;

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

impl EmbeddingClient for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ClientError> {
        let mut v = vec![0.0; MOCK_EMBED_DIM];
        let mut any = false;
        for token in tokenize(text) {
            any = true;
            let digest = Sha256::digest(token.as_bytes());
            for (i, slot) in v.iter_mut().enumerate() {
                let bit = (digest[i / 8] >> (i % 8)) & 1;
                *slot += if bit == 1 { 1.0 } else { -1.0 };
            }
        }
        if !any {
            return Err(ClientError::Malformed("cannot embed text without tokens".into()));
        }
        l2_normalize(&mut v)?;
        Ok(v)
    }

    fn dim(&self) -> usize {
        MOCK_EMBED_DIM
    }
}

/// Always answers with the same text.
#[derive(Debug, Clone)]
pub struct CannedChat(pub String);

impl ChatClient for CannedChat {
    fn complete(&self, _: &str, _: &[FrameRef], _: f64) -> Result<String, ClientError> {
        Ok(self.0.clone())
    }
}

/// Answers with the reply of the first rule whose needle occurs in the
/// prompt, else the fallback. A fallback of `None` makes unmatched prompts
/// fail.
#[derive(Debug, Clone, Default)]
pub struct ScriptedChat {
    pub rules: Vec<(String, String)>,
    pub fallback: Option<String>,
}

impl ScriptedChat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on(mut self, needle: &str, reply: &str) -> Self {
        self.rules.push((needle.to_string(), reply.to_string()));
        self
    }

    pub fn otherwise(mut self, reply: &str) -> Self {
        self.fallback = Some(reply.to_string());
        self
    }
}

impl ChatClient for ScriptedChat {
    fn complete(&self, prompt: &str, _: &[FrameRef], _: f64) -> Result<String, ClientError> {
        self.rules
            .iter()
            .find(|(needle, _)| prompt.contains(needle.as_str()))
            .map(|(_, reply)| reply.clone())
            .or_else(|| self.fallback.clone())
            .ok_or_else(|| ClientError::Other("scripted chat has no rule for prompt".into()))
    }
}

/// Normal activities and the abnormal counterpart predicted from each.
pub const ACTIVITIES: [(&str, &str); 4] = [
    ("a person walking slowly on the road", "a person riding a bicycle on the sidewalk"),
    ("a small group engaged in conversation", "a person running and chasing others"),
    ("a person carrying a bag across the square", "a car driving onto the pedestrian walkway"),
    ("two people strolling side by side", "a skateboarder weaving through pedestrians"),
];

/// Abnormal activities recognizable without scene knowledge. The other two
/// (cycling and skateboarding among pedestrians) are only abnormal by the
/// scene's rules.
const GENERIC_ABNORMAL: [&str; 2] = [ACTIVITIES[1].1, ACTIVITIES[2].1];

/// Normal activity that reads as suspicious without scene knowledge.
const AMBIGUOUS_NORMAL: &str = ACTIVITIES[2].0;

const SETTINGS: [&str; 4] = [
    "along a campus walkway lined with trees",
    "in an open plaza in front of a building entrance",
    "beside a row of parked bicycles near a gate",
    "on a wide avenue next to a lawn",
];

fn stable_hash(s: &str) -> usize {
    let d = Sha256::digest(s.as_bytes());
    u32::from_le_bytes([d[0], d[1], d[2], d[3]]) as usize
}

fn task_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^#\s*task:\s*([a-z_]+)").unwrap())
}

fn knowledge_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^1\. \[(normal|abnormal)\] (.+?)\s*$").unwrap())
}

#[derive(Debug, Clone)]
struct VideoTruth {
    scene_id: String,
    labels: Vec<u8>,
}

/// Mock vision/language model that sees the true frame labels.
///
/// It recognizes the task from the `# task: <name>` header of the built-in
/// templates. Descriptions follow the majority label of the submitted
/// frames. An assessment whose retrieved knowledge contains a pattern that
/// occurs in the description follows that pattern's label (0.9 / 0.1,
/// abnormal wins). Without matching knowledge the judgement is less sure:
/// generic anomalies 0.7, scene-dependent anomalies and one suspicious
/// looking normal activity 0.5, ordinary activity 0.3.
/// Unknown videos are treated as entirely normal.
#[derive(Debug, Clone, Default)]
pub struct OracleMockChat {
    videos: HashMap<String, VideoTruth>,
}

impl OracleMockChat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_video(mut self, video_id: &str, scene_id: &str, labels: Vec<u8>) -> Self {
        self.add_video(video_id, scene_id, labels);
        self
    }

    pub fn add_video(&mut self, video_id: &str, scene_id: &str, labels: Vec<u8>) {
        self.videos.insert(
            video_id.to_string(),
            VideoTruth {
                scene_id: scene_id.to_string(),
                labels,
            },
        );
    }

    fn describe(&self, images: &[FrameRef]) -> Result<String, ClientError> {
        let first = images
            .first()
            .ok_or_else(|| ClientError::Other("describe called without frames".into()))?;
        let truth = self.videos.get(&first.video_id);
        let anomalous = images
            .iter()
            .filter(|f| {
                truth
                    .and_then(|t| t.labels.get(f.frame_index))
                    .is_some_and(|&l| l == 1)
            })
            .count();
        let scene = truth.map(|t| t.scene_id.as_str()).unwrap_or("");
        let setting = SETTINGS[stable_hash(scene) % SETTINGS.len()];
        let pick = (first.frame_index / 8 + stable_hash(&first.video_id)) % ACTIVITIES.len();
        let text = if 2 * anomalous > images.len() {
            format!(
                "Temporal: a sudden burst of fast motion interrupts the steady flow. \
                 Foreground: {} {setting}. Background: the layout stays unchanged.",
                ACTIVITIES[pick].1
            )
        } else {
            format!(
                "Temporal: motion stays steady across all frames. \
                 Foreground: {} and {} {setting}. Background: the layout stays unchanged.",
                ACTIVITIES[pick].0,
                ACTIVITIES[(pick + 1) % ACTIVITIES.len()].0
            )
        };
        Ok(text)
    }

    fn extract_normal(prompt: &str) -> String {
        ACTIVITIES
            .iter()
            .filter(|(n, _)| prompt.contains(n))
            .map(|(n, _)| format!("- {n}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn predict_abnormal(prompt: &str) -> String {
        ACTIVITIES
            .iter()
            .filter(|(n, _)| prompt.contains(n))
            .map(|(_, a)| format!("- {a}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn assess(prompt: &str) -> String {
        let description = prompt
            .split_once("Description of the video clip:")
            .map(|(_, rest)| rest.split("Known behaviour patterns").next().unwrap_or(rest))
            .unwrap_or(prompt);
        let matched: Vec<(String, bool)> = knowledge_re()
            .captures_iter(prompt)
            .filter(|c| description.contains(&c[2]))
            .map(|c| (c[2].to_string(), &c[1] == "abnormal"))
            .collect();
        if let Some((text, _)) = matched.iter().find(|(_, abnormal)| *abnormal) {
            return format!("SCORE: 0.9\nREASONING: the clip matches the known abnormal pattern \"{text}\".");
        }
        if let Some((text, _)) = matched.first() {
            return format!("SCORE: 0.1\nREASONING: the clip matches the known normal pattern \"{text}\".");
        }
        let score = if GENERIC_ABNORMAL.iter().any(|a| description.contains(a)) {
            0.7
        } else if ACTIVITIES.iter().any(|(_, a)| description.contains(a)) || description.contains(AMBIGUOUS_NORMAL) {
            0.5
        } else {
            0.3
        };
        format!("SCORE: {score}\nREASONING: judged from the description alone.")
    }

    fn aggregate(prompt: &str) -> String {
        prompt
            .lines()
            .find_map(|l| l.trim().strip_prefix("- "))
            .unwrap_or("")
            .to_string()
    }
}

impl ChatClient for OracleMockChat {
    fn complete(&self, prompt: &str, images: &[FrameRef], _: f64) -> Result<String, ClientError> {
        let task = task_re()
            .captures(prompt)
            .map(|c| c[1].to_string())
            .ok_or_else(|| ClientError::Other("prompt has no `# task:` header".into()))?;
        let reply = match task.as_str() {
            "describe" => self.describe(images)?,
            "extract_normal" => Self::extract_normal(prompt),
            "predict_abnormal" => Self::predict_abnormal(prompt),
            "assess" => Self::assess(prompt),
            "aggregate" => Self::aggregate(prompt),
            other => return Err(ClientError::Other(format!("unknown task {other}"))),
        };
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge_base::cosine_sim;

    #[test]
    fn hash_embedder_is_deterministic_and_unit() {
        let e = HashEmbedder;
        let a = e.embed("A person walking").unwrap();
        assert_eq!(a, e.embed("a person, walking!").unwrap());
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(e.embed("  ...  ").is_err());
    }

    #[test]
    fn near_duplicates_are_close() {
        let e = HashEmbedder;
        let a = e.embed("a person walking slowly on the road").unwrap();
        let b = e.embed("a person walking slowly on the main road").unwrap();
        let c = e.embed("a car driving onto the pedestrian walkway").unwrap();
        assert!(cosine_sim(&a, &b).unwrap() > 0.85);
        assert!(cosine_sim(&a, &c).unwrap() < 0.6);
    }

    #[test]
    fn scripted_rules() {
        let s = ScriptedChat::new().on("describe", "d").otherwise("x");
        assert_eq!(s.complete("# task: describe", &[], 0.0).unwrap(), "d");
        assert_eq!(s.complete("other", &[], 0.0).unwrap(), "x");
        assert!(ScriptedChat::new().complete("q", &[], 0.0).is_err());
    }

    #[test]
    fn oracle_describes_by_majority() {
        let chat = OracleMockChat::new().with_video("v", "s", vec![0, 0, 0, 0, 1, 1, 1, 1, 1, 1]);
        let frames = |r: std::ops::Range<usize>| -> Vec<FrameRef> {
            r.map(|i| FrameRef { video_id: "v".into(), frame_index: i, uri: None }).collect()
        };
        let normal = chat.complete("# task: describe", &frames(0..4), 0.0).unwrap();
        assert!(ACTIVITIES.iter().any(|(n, _)| normal.contains(n)));
        let abnormal = chat.complete("# task: describe", &frames(4..10), 0.0).unwrap();
        assert!(ACTIVITIES.iter().any(|(_, a)| abnormal.contains(a)));
    }
}
