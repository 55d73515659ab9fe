//! One function per acceptance criterion. Each returns a short summary on
//! success and the first violation on failure.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::Value;

use slowfast_core::ablation::run_ablation;
use slowfast_core::entropy_gate::{differential_entropy, gate, EntropyMode, GateConfig, Theta, Trigger};
use slowfast_core::evaluation::{macro_auc, micro_auc, roc_auc, Scored};
use slowfast_core::fusion::{fuse, fuse_video, FusionConfig, SlowTrack};
use slowfast_core::gaussian::GaussianKernel;
use slowfast_core::ingest::{FrameRef, ScoreSeries};
use slowfast_core::knowledge_base::{
    cosine_sim, KnowledgeBase, Label, MedoidAggregator, Pattern, RawPattern, DEFAULT_TOP_K,
};
use slowfast_core::pipeline::{build_kb, Clients};
use slowfast_core::slow_detector::http::{
    Endpoint, HttpChatClient, HttpEmbeddingClient, ImageMode, ReqwestTransport, RetryPolicy, Transport,
};
use slowfast_core::slow_detector::mock::HashEmbedder;
use slowfast_core::slow_detector::{parse_verdict, ChatClient, ClientError, EmbeddingClient, SlowConfig};
use slowfast_core::synthetic::{SyntheticConfig, SyntheticDataset};
use slowfast_core::PipelineConfig;

use super::common::*;

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn series(id: &str, scores: Vec<f64>) -> ScoreSeries {
    ScoreSeries {
        video_id: id.into(),
        scene_id: "s".into(),
        scores,
    }
}

pub fn entropy_suite() -> Check {
    let start = Instant::now();
    for c in [0.0, 0.37, 1.0] {
        for mode in [EntropyMode::PerSample, EntropyMode::PerBin] {
            let h = differential_entropy(&[c; 8], 10, mode).map_err(|e| e.to_string())?;
            ensure!(h == 0.0, "constant window {c} gave H = {h}");
        }
    }
    let distinct = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 9.0];
    let h = differential_entropy(&distinct, 10, EntropyMode::PerSample).map_err(|e| e.to_string())?;
    ensure!(h == 3.0, "eight distinct bins gave H = {h}, expected 3.0");

    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let n = if i % 4 == 0 { r.random_range(2..=16) } else { 8 };
        let window: Vec<f64> = match i % 3 {
            0 => (0..n).map(|_| r.random::<f64>()).collect(),
            1 => (0..n).map(|_| r.random_range(0..5) as f64 / 4.0).collect(),
            _ => (0..n).map(|_| r.random_range(0..=1000) as f64 / 1000.0).collect(),
        };
        let got = differential_entropy(&window, 10, EntropyMode::PerSample).map_err(|e| e.to_string())?;
        let want = literal_entropy(&window, 10);
        worst = worst.max((got - want).abs());
        ensure!((got - want).abs() <= 1e-12, "window {window:?}: got {got}, oracle {want}");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("1000 windows, max |diff| {worst:.1e}, {elapsed:.2?}"))
}

pub fn gaussian_suite() -> Check {
    for sigma in [0.5, 1.0, 2.0, 5.0] {
        let k = GaussianKernel::new(sigma).ok_or("kernel rejected a valid sigma")?;
        let total: f64 = k.weights().iter().sum();
        ensure!((total - 1.0).abs() <= 1e-12, "sigma {sigma}: weights sum to {total}");
        ensure!(k.radius() == (3.0 * sigma).ceil() as usize, "sigma {sigma}: radius {}", k.radius());
        for c in [0.0, 0.123456789, 1.0] {
            for n in [1, 7, 40] {
                let x = vec![c; n];
                ensure!(k.smooth(&x) == x, "sigma {sigma}: constant {c} x{n} not a fixed point");
            }
        }
    }
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let sigma = [0.5, 1.0, 2.0, 5.0][r.random_range(0..4)];
        let n = r.random_range(1..=200);
        let x: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let got = GaussianKernel::new(sigma).unwrap().smooth(&x);
        let want = direct_convolution(&x, sigma);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs());
            ensure!((g - w).abs() <= 1e-12, "sigma {sigma}, n {n}: {g} vs {w}");
        }
    }
    Ok(format!("100 sequences, max |diff| {worst:.1e}"))
}

pub fn gating_monotonicity() -> Check {
    let mut r = rng(3);
    let thetas = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, f64::INFINITY];
    for s in 0..100 {
        let frames = r.random_range(16..=600);
        let scores: Vec<f64> = (0..frames)
            .map(|_| if r.random_bool(0.3) { r.random::<f64>() } else { 0.2 + 0.05 * r.random::<f64>() })
            .collect();
        let video = series(&format!("v{s}"), scores);
        let mut prev: Option<Vec<usize>> = None;
        for &t in &thetas {
            let cfg = GateConfig {
                theta: Theta::Absolute(t),
                period: None,
                ..GateConfig::default()
            };
            let sel: Vec<usize> = gate(&video, &cfg)
                .map_err(|e| e.to_string())?
                .selections
                .iter()
                .filter(|x| x.reason == Trigger::Entropy)
                .map(|x| x.window_index)
                .collect();
            if let Some(p) = &prev {
                ensure!(sel.iter().all(|w| p.contains(w)), "stream {s}: raising theta to {t} added windows");
            }
            prev = Some(sel);
        }
        for period in [1, 3, 10, 20] {
            let cfg = GateConfig {
                theta: Theta::Absolute(f64::INFINITY),
                period: Some(period),
                ..GateConfig::default()
            };
            let out = gate(&video, &cfg).map_err(|e| e.to_string())?;
            let w = out.window_count();
            let picks: Vec<usize> = out.selections.iter().map(|x| x.window_index).collect();
            ensure!(picks.len() == w.div_ceil(period), "stream {s}, T={period}: {} picks for {w} windows", picks.len());
            ensure!(picks.iter().all(|q| q % period == 0), "stream {s}, T={period}: off-grid pick");
            ensure!(
                out.selections.iter().all(|x| x.reason == Trigger::Periodic),
                "stream {s}: entropy trigger with theta = inf"
            );
        }
    }
    Ok("100 streams, 9 thresholds, 4 periods".into())
}

fn raw(scene: &str, label: Label, text: &str) -> RawPattern {
    RawPattern {
        scene_id: scene.into(),
        label,
        text: text.into(),
        embedding: HashEmbedder.embed(text).unwrap(),
    }
}

fn check_fixed_point(kb: &KnowledgeBase, tau: f64, raw_count: usize) -> Result<(), String> {
    for (scene, label) in kb.partition_keys() {
        let part: Vec<&Pattern> = kb.partition(&scene, label).collect();
        for (i, a) in part.iter().enumerate() {
            for b in &part[i + 1..] {
                let s = cosine_sim(&a.embedding, &b.embedding).map_err(|e| e.to_string())?;
                ensure!(s < tau, "{scene}/{label}: `{}` and `{}` at {s}", a.text, b.text);
            }
        }
    }
    let total: u32 = kb.entries.iter().map(|e| e.merged_count).sum();
    ensure!(total as usize == raw_count, "merged_count sums to {total}, {raw_count} inserted");
    Ok(())
}

pub fn kb_fixed_point() -> Check {
    let tau = 0.85;
    let mut r = rng(4);
    let mut merges = 0;
    for trial in 0..200 {
        let n = r.random_range(5..=40);
        let mut inputs: Vec<(String, Label)> = (0..n)
            .map(|_| {
                let scene = format!("scene{}", r.random_range(1..=2));
                let label = if r.random_bool(0.5) { Label::Normal } else { Label::Abnormal };
                (scene, label)
            })
            .collect();
        inputs.shuffle(&mut r);
        let inputs: Vec<(String, Label, String)> = inputs
            .into_iter()
            .map(|(s, l)| (s, l, random_pattern_text(&mut r)))
            .collect();

        let mut kb = KnowledgeBase::new(HashEmbedder.dim());
        for (s, l, t) in &inputs {
            kb.insert_with_aggregation(raw(s, *l, t), tau, &MedoidAggregator, &HashEmbedder)
                .map_err(|e| e.to_string())?;
        }
        kb.consolidate(tau, &MedoidAggregator, &HashEmbedder).map_err(|e| e.to_string())?;
        check_fixed_point(&kb, tau, n).map_err(|e| format!("trial {trial}: {e}"))?;
        merges += n - kb.len();

        let oracle = sequential_kb(&inputs, tau);
        ensure!(oracle.len() == kb.len(), "trial {trial}: {} entries, oracle {}", kb.len(), oracle.len());
        for (e, o) in kb.entries.iter().zip(&oracle) {
            ensure!(
                e.scene_id == o.scene && e.label == o.label && e.text == o.text && e.merged_count == o.count,
                "trial {trial}: entry `{}` x{} differs from oracle `{}` x{}",
                e.text,
                e.merged_count,
                o.text,
                o.count
            );
        }
    }

    // the same invariants after a full mock build
    let data = SyntheticDataset::generate(&SyntheticConfig::default());
    let clients = Clients::oracle(&data.test, &data.truth, &data.train);
    let (kb, summary) = build_kb(&PipelineConfig::default(), &clients, &data.train).map_err(|e| e.to_string())?;
    check_fixed_point(&kb, tau, summary.raw_normal + summary.raw_abnormal).map_err(|e| format!("mock build: {e}"))?;
    Ok(format!("200 insertion orders ({merges} merges) plus a mock build of {} patterns", kb.len()))
}

pub fn retrieval_oracle() -> Check {
    ensure!(DEFAULT_TOP_K == 6, "default K is {DEFAULT_TOP_K}");
    ensure!(SlowConfig::default().top_k == 6, "slow detector default K differs");
    ensure!(PipelineConfig::default().kb.top_k == 6, "pipeline default K differs");
    let dim = 256;
    let mut r = rng(5);
    for store_no in 0..500 {
        let n = r.random_range(1..=1000);
        let mut kb = KnowledgeBase::new(dim);
        let mut scenes = Vec::with_capacity(n);
        for i in 0..n {
            let embedding = if i > 0 && r.random_bool(0.2) {
                kb.entries[r.random_range(0..i)].embedding.clone()
            } else {
                random_unit(&mut r, dim)
            };
            let scene = format!("s{}", r.random_range(0..3));
            scenes.push(scene.clone());
            kb.entries.push(Pattern {
                id: format!("p{i:06}"),
                scene_id: scene,
                label: Label::Normal,
                text: format!("pattern {i}"),
                embedding,
                merged_count: 1,
            });
        }
        let query = if r.random_bool(0.3) {
            kb.entries[r.random_range(0..n)].embedding.clone()
        } else {
            random_unit(&mut r, dim)
        };
        let k = if store_no % 2 == 0 { DEFAULT_TOP_K } else { r.random_range(1..=12) };
        let scope = r.random_bool(0.3).then(|| format!("s{}", r.random_range(0..3)));

        let got = match kb.retrieve_topk(&query, k, scope.as_deref()) {
            Ok(g) => g,
            Err(e) => return Err(format!("store {store_no}: {e}")),
        };
        let candidates: Vec<usize> = (0..n).filter(|&i| scope.as_ref().is_none_or(|s| *s == scenes[i])).collect();
        let store: Vec<Vec<f64>> = candidates.iter().map(|&i| kb.entries[i].embedding.clone()).collect();
        let want: Vec<(usize, f64)> = brute_topk(&query, &store, k)
            .into_iter()
            .map(|(j, s)| (candidates[j], s))
            .collect();
        ensure!(got.items.len() == want.len(), "store {store_no}: {} items, oracle {}", got.items.len(), want.len());
        for (g, (idx, sim)) in got.items.iter().zip(&want) {
            ensure!(
                g.pattern.id == kb.entries[*idx].id && g.similarity == *sim,
                "store {store_no}: got {} ({}), oracle {} ({sim})",
                g.pattern.id,
                g.similarity,
                kb.entries[*idx].id
            );
        }
    }
    Ok("500 stores, dim 256, up to 1000 entries, default K = 6".into())
}

pub fn auc_oracle() -> Check {
    let mut r = rng(6);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let n = r.random_range(2..=300);
        let levels = [0, 2, 3, 5, 11][i % 5];
        let (s, l) = random_scored(&mut r, n, levels);
        let got = roc_auc(&s, &l).map_err(|e| e.to_string())?;
        let want = pairwise_auc(&s, &l);
        worst = worst.max((got - want).abs());
        ensure!((got - want).abs() <= 1e-12, "instance {i}: {got} vs pairwise {want}");
    }
    ensure!(matches!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]), Ok(a) if a == 1.0), "perfect separation");
    ensure!(matches!(roc_auc(&[0.3; 10], &[0, 1, 0, 1, 1, 0, 0, 0, 1, 1]), Ok(a) if a == 0.5), "all ties");

    // micro pools frames, macro averages per video and skips single-class videos
    for trial in 0..50 {
        let videos: Vec<(String, Vec<f64>, Vec<u8>)> = (0..r.random_range(2..6))
            .map(|v| {
                let n = r.random_range(5..60);
                let (s, mut l) = random_scored(&mut r, n, 4);
                if r.random_bool(0.2) {
                    l = vec![0; n];
                }
                (format!("v{v}"), s, l)
            })
            .collect();
        let scored: Vec<Scored> = videos
            .iter()
            .map(|(id, s, l)| Scored { video_id: id, scores: s, labels: l })
            .collect();
        let pooled_s: Vec<f64> = videos.iter().flat_map(|v| v.1.clone()).collect();
        let pooled_l: Vec<u8> = videos.iter().flat_map(|v| v.2.clone()).collect();
        let micro = micro_auc(&scored).map_err(|e| e.to_string())?;
        ensure!((micro - pairwise_auc(&pooled_s, &pooled_l)).abs() <= 1e-12, "trial {trial}: micro");
        let per: Vec<f64> = videos
            .iter()
            .filter(|v| v.2.contains(&0) && v.2.contains(&1))
            .map(|v| pairwise_auc(&v.1, &v.2))
            .collect();
        match macro_auc(&scored) {
            Ok(m) => {
                let mean = per.iter().sum::<f64>() / per.len() as f64;
                ensure!((m.mean - mean).abs() <= 1e-12, "trial {trial}: macro {} vs {mean}", m.mean);
                ensure!(m.skipped == videos.len() - per.len(), "trial {trial}: skip count");
            }
            Err(e) => ensure!(per.is_empty(), "trial {trial}: {e}"),
        }
    }
    Ok(format!("1000 instances, max |diff| {worst:.1e}"))
}

pub fn fusion_contracts() -> Check {
    let mut r = rng(7);
    for _ in 0..200 {
        let n = r.random_range(1..200);
        let fast: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let values: Vec<Option<f64>> = (0..n).map(|_| r.random_bool(0.4).then(|| r.random::<f64>())).collect();
        let track = SlowTrack { values: values.clone() };
        ensure!(fuse(&fast, &track, 0.0) == fast, "alpha = 0 changed the fast curve");
        let one = fuse(&fast, &track, 1.0);
        for i in 0..n {
            ensure!(one[i] == values[i].unwrap_or(fast[i]), "alpha = 1 at frame {i}");
        }
    }
    let fused = fuse(&[0.5, 0.5], &SlowTrack { values: vec![Some(1.0), None] }, 0.8);
    ensure!(fused == vec![0.9, 0.5], "alpha 0.8 gave {fused:?}");

    for sigma in [0.5, 2.0, 5.0] {
        let fast: Vec<f64> = (0..150).map(|_| r.random::<f64>()).collect();
        let video = series("v", fast.clone());
        let cfg = FusionConfig { alpha: 0.8, smooth_sigma: Some(sigma) };
        let out = fuse_video(&video, &[], &cfg).map_err(|e| e.to_string())?;
        let want = GaussianKernel::new(sigma).unwrap().smooth(&fast);
        ensure!(out.fused == want, "no-verdict run differs from smoothed fast (sigma {sigma})");
        ensure!(out.covered_frames() == 0, "coverage without verdicts");
    }
    Ok("boundary identities, 0.8*1.0 + 0.2*0.5 = 0.9, no-verdict runs bit-exact".into())
}

pub fn synthetic_benchmark() -> Check {
    let start = Instant::now();
    let data = SyntheticDataset::generate(&SyntheticConfig::default());
    ensure!(data.test.len() == 20 && data.test.iter().all(|s| s.len() == 400), "benchmark shape");
    let cfg = PipelineConfig::default();
    let clients = Clients::oracle(&data.test, &data.truth, &data.train);
    let (kb, _) = build_kb(&cfg, &clients, &data.train).map_err(|e| e.to_string())?;
    let report = run_ablation(&cfg, &clients, &data.test, &data.truth, &kb).map_err(|e| e.to_string())?;
    let fast = report.fast_only.micro_auc;
    let full = report.rows.last().ok_or("no ablation rows")?.micro_auc;
    let ladder: Vec<String> = report.rows.iter().map(|r| format!("{:.4}", r.micro_auc)).collect();
    let elapsed = start.elapsed();
    ensure!(full - fast >= 0.05, "fused {full:.4} vs fast {fast:.4}: gain below 0.05");
    ensure!(report.is_monotone(), "ladder not monotone: {}", ladder.join(" -> "));
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("fast {fast:.4}, ladder {}, {elapsed:.2?}", ladder.join(" -> ")))
}

pub fn fixture(name: &str) -> Value {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "core", "tests", "fixtures", name].iter().collect();
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

/// Returns canned responses in order and records every request.
pub struct ReplayTransport {
    pub replies: Mutex<Vec<Result<Value, ClientError>>>,
    pub seen: Mutex<Vec<(String, Option<String>, Value)>>,
}

impl ReplayTransport {
    pub fn new(replies: Vec<Result<Value, ClientError>>) -> Self {
        Self {
            replies: Mutex::new(replies),
            seen: Mutex::new(Vec::new()),
        }
    }
}

impl Transport for &ReplayTransport {
    fn post_json(&self, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value, ClientError> {
        self.seen
            .lock()
            .unwrap()
            .push((url.to_string(), api_key.map(str::to_string), body.clone()));
        self.replies.lock().unwrap().remove(0)
    }
}

fn frames() -> Vec<FrameRef> {
    [16, 17]
        .map(|i| FrameRef {
            video_id: "v01".into(),
            frame_index: i,
            uri: Some(format!("frames/v01/{i:06}.jpg")),
        })
        .to_vec()
}

fn endpoint(base: &str, model: &str) -> Endpoint {
    Endpoint {
        base_url: base.into(),
        api_key: Some("sk-test".into()),
        model: model.into(),
    }
}

fn quick_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 3,
        base_delay: Duration::from_millis(1),
    }
}

/// Minimal HTTP/1.1 server answering each connection with the next
/// `(status, body)`; returns the base URL and the captured requests.
pub fn loopback(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<(String, Value)>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut captured = Vec::new();
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut head = String::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            captured.push((head, serde_json::from_slice(&buf).unwrap()));
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            reader.get_mut().write_all(reply.as_bytes()).unwrap();
        }
        captured
    });
    (base, handle)
}

pub fn live_protocol() -> Check {
    // replayed chat call
    let replay = ReplayTransport::new(vec![Ok(fixture("chat_response.json"))]);
    let chat = HttpChatClient::new(&replay, endpoint("https://api.example.test/v1/", "vision-chat-1"), ImageMode::Url, quick_retry());
    let text = chat.complete("Describe the clip.", &frames(), 0.01).map_err(|e| e.to_string())?;
    let (url, key, body) = replay.seen.lock().unwrap()[0].clone();
    ensure!(url == "https://api.example.test/v1/chat/completions", "chat url {url}");
    ensure!(key.as_deref() == Some("sk-test"), "api key not forwarded");
    ensure!(body == fixture("chat_request.json"), "chat body differs from fixture:\n{body:#}");
    let verdict = parse_verdict(&text).map_err(|e| e.to_string())?;
    ensure!(verdict.score == 0.82 && verdict.reasoning.contains("bicycle"), "verdict {verdict:?}");

    // replayed embedding call
    let replay = ReplayTransport::new(vec![Ok(fixture("embed_response.json"))]);
    let embedder = HttpEmbeddingClient::new(&replay, endpoint("https://api.example.test/v1", "text-embed-1"), 8, quick_retry());
    let v = embedder.embed("a person riding a bicycle on the sidewalk").map_err(|e| e.to_string())?;
    let (url, _, body) = replay.seen.lock().unwrap()[0].clone();
    ensure!(url == "https://api.example.test/v1/embeddings", "embedding url {url}");
    ensure!(body == fixture("embed_request.json"), "embedding body differs from fixture:\n{body:#}");
    // squared norm of the fixture vector is 3
    let r3 = 3f64.sqrt();
    let want = [0.5 / r3, -0.5 / r3, 0.5 / r3, -0.5 / r3, 1.0 / r3, 0.0, 0.0, 1.0 / r3];
    ensure!(v.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15), "embedding {v:?}");

    // transient failures are retried, client errors are not
    let replay = ReplayTransport::new(vec![
        Err(ClientError::Status { status: 503, body: String::new() }),
        Err(ClientError::Status { status: 429, body: String::new() }),
        Ok(fixture("chat_response.json")),
    ]);
    let chat = HttpChatClient::new(&replay, endpoint("http://x", "vision-chat-1"), ImageMode::Url, quick_retry());
    chat.complete("Describe the clip.", &[], 0.7).map_err(|e| format!("retry: {e}"))?;
    ensure!(replay.seen.lock().unwrap().len() == 3, "expected three attempts");
    let replay = ReplayTransport::new(vec![Err(ClientError::Status { status: 400, body: String::new() })]);
    let chat = HttpChatClient::new(&replay, endpoint("http://x", "m"), ImageMode::Url, quick_retry());
    ensure!(chat.complete("q", &[], 0.7).is_err() && replay.seen.lock().unwrap().len() == 1, "400 was retried");

    // the real transport over loopback
    let response = serde_json::to_string(&fixture("chat_response.json")).unwrap();
    let (base, server) = loopback(vec![(503, "{}".into()), (200, response)]);
    let transport = ReqwestTransport::new(Duration::from_secs(10)).map_err(|e| e.to_string())?;
    let chat = HttpChatClient::new(transport, endpoint(&base, "vision-chat-1"), ImageMode::Url, quick_retry());
    let text = chat.complete("Describe the clip.", &frames(), 0.01).map_err(|e| format!("loopback: {e}"))?;
    let captured = server.join().map_err(|_| "loopback server panicked")?;
    ensure!(captured.len() == 2, "loopback saw {} requests", captured.len());
    let (head, body) = &captured[1];
    ensure!(head.starts_with("POST /v1/chat/completions "), "loopback request line: {head}");
    ensure!(head.to_ascii_lowercase().contains("authorization: bearer sk-test"), "no bearer token");
    ensure!(*body == fixture("chat_request.json"), "loopback body differs from fixture");
    ensure!(parse_verdict(&text).map_err(|e| e.to_string())?.score == 0.82, "loopback verdict");
    Ok("chat and embedding fixtures round-trip; retries on 429/5xx; loopback HTTP".into())
}
