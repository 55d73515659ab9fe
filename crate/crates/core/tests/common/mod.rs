//! Brute-force reference implementations written straight from the
//! definitions, plus random-input generators. Shared by the core
//! integration tests and the acceptance runner.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slowfast_core::knowledge_base::{cosine_sim, Label};
use slowfast_core::slow_detector::mock::HashEmbedder;
use slowfast_core::slow_detector::EmbeddingClient;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Bin of `x`: the `k` with `lo + k*w <= x < lo + (k+1)*w`, the last bin
/// closed on the right.
pub fn bin_of(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi == lo {
        return 0;
    }
    let w = (hi - lo) / bins as f64;
    for k in (1..bins).rev() {
        if x >= lo + k as f64 * w {
            return k;
        }
    }
    0
}

/// `-Σ_i p̂(s_i) log2 p̂(s_i)` summed over the samples of the window, where
/// `p̂(s_i)` is the share of samples landing in the bin of `s_i`.
pub fn literal_entropy(window: &[f64], bins: usize) -> f64 {
    let lo = window.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let b: Vec<usize> = window.iter().map(|&x| bin_of(x, lo, hi, bins)).collect();
    let m = window.len() as f64;
    let mut h = 0.0;
    for i in 0..window.len() {
        let same = b.iter().filter(|&&other| other == b[i]).count() as f64;
        let p = same / m;
        h -= p * p.log2();
    }
    h
}

/// Shannon entropy of the bin histogram.
pub fn shannon_entropy(window: &[f64], bins: usize) -> f64 {
    let lo = window.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0usize; bins];
    for &x in window {
        counts[bin_of(x, lo, hi, bins)] += 1;
    }
    let m = window.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / m;
            -p * p.log2()
        })
        .sum()
}

/// Normalized Gaussian taps for offsets `-Z..=Z`, `Z = ceil(3σ)`.
pub fn gaussian_weights(sigma: f64) -> Vec<f64> {
    let z = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-z..=z).map(|j| (-((j * j) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Direct convolution with replicate padding.
pub fn direct_convolution(x: &[f64], sigma: f64) -> Vec<f64> {
    let w = gaussian_weights(sigma);
    let z = (w.len() / 2) as i64;
    let n = x.len() as i64;
    (0..n)
        .map(|q| {
            (-z..=z)
                .map(|j| w[(j + z) as usize] * x[(q + j).clamp(0, n - 1) as usize])
                .sum()
        })
        .collect()
}

/// Pairwise Mann–Whitney AUC: each (positive, negative) pair scores 1 if
/// the positive is higher, 0.5 on a tie.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                credit += 1.0;
            } else if si == sj {
                credit += 0.5;
            }
        }
    }
    credit / pairs
}

/// Random scores drawn from `levels` evenly spaced values (heavy ties) or
/// continuous when `levels == 0`, with both classes present.
pub fn random_scored(rng: &mut impl Rng, n: usize, levels: usize) -> (Vec<f64>, Vec<u8>) {
    loop {
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        if labels.contains(&0) && labels.contains(&1) {
            let scores = (0..n)
                .map(|_| {
                    if levels == 0 {
                        rng.random::<f64>()
                    } else {
                        rng.random_range(0..levels) as f64 / (levels - 1).max(1) as f64
                    }
                })
                .collect();
            return (scores, labels);
        }
    }
}

/// Indices of the `k` best entries by a stable descending full sort.
pub fn brute_topk(query: &[f64], store: &[Vec<f64>], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = store
        .iter()
        .enumerate()
        .map(|(i, e)| (i, cosine_sim(query, e).unwrap()))
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1));
    all.truncate(k);
    all
}

pub fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

const BASES: [&str; 6] = [
    "a person walking slowly along the tree lined path",
    "two students chatting near the library entrance",
    "a cyclist riding fast through the crowded square",
    "a delivery van parked beside the main gate",
    "a group of people queuing at the food stall",
    "a skateboarder jumping over the low bench",
];
const MODIFIERS: [&str; 6] = ["today", "quietly", "again", "briefly", "alone", "outside"];

/// Pattern texts that frequently land within 0.85 of each other under the
/// hashing embedder: a base phrase plus at most one modifier word.
pub fn random_pattern_text(rng: &mut impl Rng) -> String {
    let base = BASES[rng.random_range(0..BASES.len())];
    match rng.random_range(0..MODIFIERS.len() + 1) {
        0 => base.to_string(),
        m => format!("{base} {}", MODIFIERS[m - 1]),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleEntry {
    pub scene: String,
    pub label: Label,
    pub text: String,
    pub embedding: Vec<f64>,
    pub count: u32,
}

fn medoid(texts: &[&str], embs: &[&[f64]]) -> String {
    let mut best = 0;
    let mut best_total = f64::NEG_INFINITY;
    for i in 0..embs.len() {
        let total: f64 = embs.iter().map(|e| cosine_sim(embs[i], e).unwrap()).sum();
        if total > best_total {
            best = i;
            best_total = total;
        }
    }
    texts[best].to_string()
}

fn fold(entries: &mut Vec<OracleEntry>, members: Vec<usize>, incoming: Option<OracleEntry>) {
    let mut group: Vec<OracleEntry> = members.iter().map(|&i| entries[i].clone()).collect();
    let mut sorted = members;
    sorted.sort_unstable();
    for i in sorted.into_iter().rev() {
        entries.remove(i);
    }
    group.extend(incoming);
    let texts: Vec<&str> = group.iter().map(|g| g.text.as_str()).collect();
    let embs: Vec<&[f64]> = group.iter().map(|g| g.embedding.as_slice()).collect();
    let text = medoid(&texts, &embs);
    let embedding = HashEmbedder.embed(&text).unwrap();
    entries.push(OracleEntry {
        scene: group[0].scene.clone(),
        label: group[0].label,
        text,
        embedding,
        count: group.iter().map(|g| g.count).sum(),
    });
}

/// Sequential insertion rule: merge the incoming pattern when its mean
/// similarity to its partition reaches `tau` (absorbing every member at or
/// above `tau`), otherwise append; then merge leftovers until every
/// partition is pairwise below `tau`.
pub fn sequential_kb(inputs: &[(String, Label, String)], tau: f64) -> Vec<OracleEntry> {
    let mut entries: Vec<OracleEntry> = Vec::new();
    for (scene, label, text) in inputs {
        let incoming = OracleEntry {
            scene: scene.clone(),
            label: *label,
            text: text.clone(),
            embedding: HashEmbedder.embed(text).unwrap(),
            count: 1,
        };
        let sims: Vec<(usize, f64)> = entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.scene == *scene && e.label == *label)
            .map(|(i, e)| (i, cosine_sim(&incoming.embedding, &e.embedding).unwrap()))
            .collect();
        let mean = sims.iter().map(|s| s.1).sum::<f64>() / sims.len().max(1) as f64;
        if sims.is_empty() || mean < tau {
            entries.push(incoming);
        } else {
            let members = sims.iter().filter(|s| s.1 >= tau).map(|s| s.0).collect();
            fold(&mut entries, members, Some(incoming));
        }
    }
    loop {
        let mut found = None;
        'outer: for i in 0..entries.len() {
            let mut members = vec![i];
            for j in 0..entries.len() {
                if j != i
                    && entries[i].scene == entries[j].scene
                    && entries[i].label == entries[j].label
                    && cosine_sim(&entries[i].embedding, &entries[j].embedding).unwrap() >= tau
                {
                    members.push(j);
                }
            }
            if members.len() > 1 {
                found = Some(members);
                break 'outer;
            }
        }
        match found {
            Some(members) => fold(&mut entries, members, None),
            None => return entries,
        }
    }
}
