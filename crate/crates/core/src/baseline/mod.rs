//! Acoustic-only diarization: speech detection, window embeddings, change
//! detection, k-means, and reconciliation with recognized words.

mod cluster;
mod embed;
mod reconcile;
mod vad;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cluster::{cluster_segments, detect_changes, kmeans, LabeledSegment, Span};
pub use embed::{
    cosine_distance, embed_segment, embed_windows, normalize, Embedder, EmbedderKind, EmbeddingTrack, SpeakerEncoder,
    SpeakerEncoderConfig,
};
pub use reconcile::{map_labels_to_roles, reconcile};
pub use vad::{detect_speech, frame_energy, speech_energy_percentile, SpeechSegment, VadConfig};

use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::metrics::wder;
use crate::numerics::Matrix;
use crate::vocab::{DecoratedTranscript, Role};

pub const THRESHOLD_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub vad: VadConfig,
    /// Set the detector threshold from this percentile of training speech
    /// energies instead of `vad.threshold`.
    pub vad_percentile: Option<f64>,
    pub window_ms: usize,
    pub stride_ms: usize,
    pub change_threshold: f64,
    /// Grid-search the change threshold on the dev split.
    pub tune_threshold: bool,
    pub threshold_grid: Vec<f64>,
    pub clusters: usize,
    pub kmeans_iters: usize,
    pub embedder: EmbedderKind,
    pub speaker_encoder: SpeakerEncoderConfig,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            vad: VadConfig::default(),
            vad_percentile: Some(1.0),
            window_ms: 1000,
            stride_ms: 100,
            change_threshold: 0.5,
            tune_threshold: true,
            threshold_grid: THRESHOLD_GRID.to_vec(),
            clusters: 2,
            kmeans_iters: 100,
            embedder: EmbedderKind::WindowMean,
            speaker_encoder: SpeakerEncoderConfig::default(),
            seed: 0,
        }
    }
}

impl BaselineConfig {
    /// Window and stride in frames of `frame_ms`.
    pub fn window_frames(&self, frame_ms: usize) -> (usize, usize) {
        let f = frame_ms.max(1) as f64;
        let w = (self.window_ms as f64 / f).round().max(1.0) as usize;
        let s = (self.stride_ms as f64 / f).round().max(1.0) as usize;
        (w, s)
    }
}

/// Everything the pipeline decided for one conversation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diarization {
    pub speech: Vec<SpeechSegment>,
    pub change_points: Vec<usize>,
    pub segments: Vec<LabeledSegment>,
}

impl Diarization {
    /// One line per stage, for debugging.
    pub fn dump(&self) -> String {
        let spans = |v: Vec<(usize, usize)>| v.iter().map(|(s, e)| format!("[{s},{e})")).collect::<Vec<_>>().join(" ");
        let mut out = format!("speech {}\n", spans(self.speech.iter().map(|s| (s.start, s.end)).collect()));
        out.push_str(&format!(
            "changes {}\n",
            self.change_points.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
        ));
        for s in &self.segments {
            out.push_str(&format!("segment [{},{}) <spk:{}>\n", s.start, s.end, s.label));
        }
        out
    }
}

/// Speech segments with their embedding tracks; independent of the change
/// threshold, so tuning can reuse them.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedConversation {
    pub speech: Vec<SpeechSegment>,
    pub tracks: Vec<EmbeddingTrack>,
}

pub fn embed_conversation(frames: &Matrix<f32>, embedder: &Embedder, vad: &VadConfig, window: usize, stride: usize) -> EmbeddedConversation {
    let speech = detect_speech(frames, vad);
    let tracks = speech
        .iter()
        .map(|&s| embed_segment(frames, embedder, s, window, stride))
        .collect();
    EmbeddedConversation { speech, tracks }
}

/// Change detection within each speech segment, then clustering of all spans.
pub fn diarize(embedded: &EmbeddedConversation, threshold: f64, clusters: usize, iters: usize, seed: u64) -> Diarization {
    let mut spans = Vec::new();
    let mut change_points = Vec::new();
    for track in &embedded.tracks {
        let found = detect_changes(track, threshold);
        change_points.extend(found.iter().skip(1).map(|s| s.start));
        spans.extend(found);
    }
    Diarization {
        speech: embedded.speech.clone(),
        change_points,
        segments: cluster_segments(&spans, clusters, iters, seed),
    }
}

/// Concatenated frames of a conversation's ordered segments.
pub fn conversation_frames(segments: &[&Utterance]) -> Result<Matrix<f32>> {
    let cols = segments.first().map_or(0, |u| u.frames.cols());
    let mut data = Vec::new();
    let mut rows = 0;
    for u in segments {
        if u.start_frame != rows {
            return Err(Error::usage(format!("segment {} does not start at frame {rows}", u.id())));
        }
        data.extend_from_slice(u.frames.data());
        rows += u.frames.rows();
    }
    Matrix::from_vec(rows, cols, data)
}

/// Reference turns as labeled segments, one label per role in order of first
/// appearance. The oracle input for the reconciliation stage.
pub fn oracle_segments(segments: &[&Utterance]) -> Vec<LabeledSegment> {
    let mut labels: BTreeMap<Role, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for u in segments {
        for t in &u.turns {
            let Some((s, e)) = t.span else { continue };
            let next = labels.len();
            let label = *labels.entry(t.role.clone()).or_insert(next);
            out.push(LabeledSegment {
                start: s + u.start_frame,
                end: e + u.start_frame,
                label,
            });
        }
    }
    out
}

/// Speaker-labeled windows from training utterances, for the LSTM embedder.
/// Speakers are numbered in order of first appearance.
pub fn speaker_windows(utterances: &[Utterance], window: usize, stride: usize) -> (Vec<(&Matrix<f32>, usize, usize, usize)>, usize) {
    let mut speakers: BTreeMap<String, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for u in utterances {
        for t in &u.turns {
            let Some((s, e)) = t.span else { continue };
            let who = if t.role == Role::physician() { &u.physician_id } else { &u.patient_id };
            let next = speakers.len();
            let id = *speakers.entry(who.clone()).or_insert(next);
            let mut start = s;
            while start + window <= e {
                out.push((&u.frames, start, start + window, id));
                start += stride * 4;
            }
        }
    }
    (out, speakers.len())
}

/// Baseline output for one conversation: generic labels, then mapped roles.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineResult {
    pub diarization: Diarization,
    pub generic: DecoratedTranscript,
    pub mapped: DecoratedTranscript,
}

/// Reconciles timed words with the diarization and maps labels to roles.
pub fn label_words(words: &DecoratedTranscript, diarization: Diarization, reference: &DecoratedTranscript, roles: &[Role]) -> BaselineResult {
    let generic = reconcile(words, &diarization.segments);
    let mapped = map_labels_to_roles(&generic, reference, roles);
    BaselineResult {
        diarization,
        generic,
        mapped,
    }
}

/// One conversation for threshold tuning.
pub struct TuningItem<'a> {
    pub embedded: &'a EmbeddedConversation,
    pub words: &'a DecoratedTranscript,
    pub reference: &'a DecoratedTranscript,
}

/// Grid point with the fewest pooled role errors; ties go to the smaller
/// threshold. Returns the chosen threshold and the pooled WDER per point.
pub fn tune_change_threshold(items: &[TuningItem<'_>], config: &BaselineConfig, roles: &[Role]) -> (f64, Vec<(f64, Option<f64>)>) {
    let mut table = Vec::new();
    let mut best = (usize::MAX, config.change_threshold);
    for &th in &config.threshold_grid {
        let (errors, denom) = items
            .par_iter()
            .map(|it| {
                let d = diarize(it.embedded, th, config.clusters, config.kmeans_iters, config.seed);
                let r = label_words(it.words, d, it.reference, roles);
                let k = wder(it.reference, &r.mapped).1;
                (k.errors(), k.s + k.c)
            })
            .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        table.push((th, (denom > 0).then(|| errors as f64 / denom as f64)));
        if errors < best.0 {
            best = (errors, th);
        }
    }
    (best.1, table)
}
