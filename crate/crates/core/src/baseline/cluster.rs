use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embed::{cosine_distance, normalize, EmbeddingTrack};

/// Frames `[start, end)` attributed to one generic speaker label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSegment {
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

/// A single-speaker span found by change detection, with its mean embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub embedding: Vec<f64>,
}

/// `detect_changes`: splits the track's extent wherever adjacent windows are
/// more than `threshold` apart in cosine distance. Cuts fall midway between
/// the two window centers; the spans tile the extent exactly.
pub fn detect_changes(track: &EmbeddingTrack, threshold: f64) -> Vec<Span> {
    let (lo, hi) = track.extent;
    if track.embeddings.is_empty() || lo >= hi {
        return Vec::new();
    }
    let mut cuts = vec![lo];
    let mut groups: Vec<Vec<usize>> = vec![vec![0]];
    for i in 1..track.embeddings.len() {
        if cosine_distance(&track.embeddings[i - 1], &track.embeddings[i]) > threshold {
            let mid = (track.centers[i - 1] + track.centers[i]).div_ceil(2);
            cuts.push(mid.clamp(lo, hi));
            groups.push(Vec::new());
        }
        groups.last_mut().expect("non-empty").push(i);
    }
    cuts.push(hi);
    let mut out = Vec::with_capacity(groups.len());
    for (g, members) in groups.iter().enumerate() {
        let (start, end) = (cuts[g], cuts[g + 1]);
        if start >= end {
            continue;
        }
        let dim = track.embeddings[0].len();
        let mut mean = vec![0.0; dim];
        for &i in members {
            for (m, x) in mean.iter_mut().zip(&track.embeddings[i]) {
                *m += x;
            }
        }
        normalize(&mut mean);
        out.push(Span { start, end, embedding: mean });
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by Lloyd iterations. Labels are renumbered in
/// order of first appearance, so the first point is always label 0.
pub fn kmeans(points: &[Vec<f64>], k: usize, max_iters: usize, seed: u64) -> Vec<usize> {
    if points.is_empty() {
        return Vec::new();
    }
    if points.len() < k || k <= 1 {
        return vec![0; points.len()];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.gen_range(0..points.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let idx = if total <= 0.0 {
            // every point coincides with a center
            centers.len() % points.len()
        } else {
            let mut r = rng.gen_range(0.0..total);
            let mut pick = d.len() - 1;
            for (i, &w) in d.iter().enumerate() {
                if r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        };
        centers.push(points[idx].clone());
    }
    let mut labels = vec![0; points.len()];
    for it in 0..max_iters.max(1) {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed && it > 0 {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for (j, x) in center.iter_mut().enumerate() {
                *x = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    canonicalize(&labels)
}

fn canonicalize(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<Option<usize>> = vec![None; labels.iter().max().map_or(0, |m| m + 1)];
    let mut next = 0;
    labels
        .iter()
        .map(|&l| {
            *map[l].get_or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

/// `cluster_segments`: k-means over span embeddings.
pub fn cluster_segments(spans: &[Span], k: usize, max_iters: usize, seed: u64) -> Vec<LabeledSegment> {
    let points: Vec<Vec<f64>> = spans.iter().map(|s| s.embedding.clone()).collect();
    kmeans(&points, k, max_iters, seed)
        .into_iter()
        .zip(spans)
        .map(|(label, s)| LabeledSegment {
            start: s.start,
            end: s.end,
            label,
        })
        .collect()
}
