use std::collections::BTreeSet;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{
    conversation_frames, diarize, embed_conversation, label_words, oracle_segments, speaker_windows,
    speech_energy_percentile, tune_change_threshold, BaselineConfig, Diarization, EmbeddedConversation, Embedder,
    EmbedderKind, SpeakerEncoder, TuningItem, VadConfig,
};
use crate::corpus::Utterance;
use crate::decoder::{decode_conversation, group_conversations, reference_transcript, DecodeMode};
use crate::error::{Error, Result};
use crate::metrics::{score_conversations, ScoreReport};
use crate::model::AnyModel;
use crate::vocab::{DecoratedTranscript, Vocabulary};

/// Transcripts keyed by conversation id, in corpus order.
pub type Transcripts = Vec<(String, DecoratedTranscript)>;

/// Fails when the vocabulary lacks a corpus role or shares no word with the
/// corpus. Out-of-vocabulary words alone are fine; they score as errors.
pub fn check_vocabulary(vocab: &Vocabulary, utterances: &[Utterance]) -> Result<()> {
    let mut words = BTreeSet::new();
    let mut missing_words = BTreeSet::new();
    let mut missing_roles = BTreeSet::new();
    for u in utterances {
        for t in &u.turns {
            if vocab.role_id(&t.role).is_none() {
                missing_roles.insert(t.role.token());
            }
            for w in &t.words {
                words.insert(w.as_str());
                if vocab.id(w).is_none() {
                    missing_words.insert(w.as_str());
                }
            }
        }
    }
    let disjoint = !words.is_empty() && missing_words.len() == words.len();
    if !disjoint && missing_roles.is_empty() {
        return Ok(());
    }
    let preview: Vec<&str> = missing_words.iter().take(10).copied().collect();
    Err(Error::usage(format!(
        "vocabulary mismatch: {} of {} corpus words missing (e.g. {:?}), roles missing {:?}",
        missing_words.len(),
        words.len(),
        preview,
        missing_roles
    )))
}

fn check_model_vocabulary(model: &AnyModel, vocab: &Vocabulary) -> Result<()> {
    let outputs = model.config().vocab_size;
    if outputs == vocab.len() {
        return Ok(());
    }
    Err(Error::usage(format!(
        "vocabulary mismatch: model has {outputs} outputs, vocabulary has {} tokens",
        vocab.len()
    )))
}

/// Decodes every conversation in `utterances` with `model`.
pub fn decode_all(model: &AnyModel, vocab: &Vocabulary, utterances: &[Utterance], mode: DecodeMode, max_symbols: usize) -> Result<Transcripts> {
    group_conversations(utterances)
        .par_iter()
        .map(|(id, segs)| {
            let t = match model {
                AnyModel::F32(m) => decode_conversation(m, vocab, segs, mode, max_symbols),
                AnyModel::F64(m) => decode_conversation(m, vocab, segs, mode, max_symbols),
            }?;
            Ok((id.clone(), t))
        })
        .collect()
}

pub fn references(utterances: &[Utterance]) -> Transcripts {
    group_conversations(utterances)
        .into_iter()
        .map(|(id, segs)| (id, reference_transcript(&segs)))
        .collect()
}

/// Pools scores over conversations; both lists must share ids and order.
pub fn score(references: &Transcripts, hypotheses: &Transcripts) -> Result<ScoreReport> {
    if references.len() != hypotheses.len() || references.iter().zip(hypotheses).any(|(r, h)| r.0 != h.0) {
        return Err(Error::usage("reference and hypothesis conversation ids differ"));
    }
    Ok(score_conversations(references.iter().zip(hypotheses).map(|((id, r), (_, h))| (id.as_str(), r, h))))
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: ScoreReport,
    pub transcripts: Transcripts,
}

/// `evaluate`: decodes and scores the joint system.
pub fn evaluate(model: &AnyModel, vocab: &Vocabulary, eval: &[Utterance], mode: DecodeMode, max_symbols: usize) -> Result<Evaluation> {
    if eval.is_empty() {
        return Err(Error::usage("evaluation split is empty"));
    }
    check_model_vocabulary(model, vocab)?;
    check_vocabulary(vocab, eval)?;
    let transcripts = decode_all(model, vocab, eval, mode, max_symbols)?;
    let report = score(&references(eval), &transcripts)?;
    Ok(Evaluation { report, transcripts })
}

/// Where the baseline's labeled segments come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiarizationSource {
    #[default]
    Pipeline,
    /// Reference turns; an upper bound that isolates recognition errors.
    Oracle,
}

#[derive(Clone, Debug)]
pub struct BaselineRun {
    pub report: ScoreReport,
    pub vad_threshold: f64,
    pub change_threshold: f64,
    /// Pooled dev WDER at each grid point, when tuned.
    pub tuning: Vec<(f64, Option<f64>)>,
    /// Words with generic `<spk:N>` labels before role mapping.
    pub generic: Transcripts,
    pub transcripts: Transcripts,
    pub diarizations: Vec<(String, Diarization)>,
}

/// Inputs to [`run_baseline`] beyond the recognizer.
pub struct BaselineData<'a> {
    /// Calibrates the speech detector and trains the LSTM embedder.
    pub train: &'a [Utterance],
    /// Tunes the change threshold.
    pub dev: &'a [Utterance],
    pub eval: &'a [Utterance],
    pub frame_ms: usize,
}

fn embed_split(
    utterances: &[Utterance],
    embedder: &Embedder,
    vad: &VadConfig,
    window: usize,
    stride: usize,
) -> Result<Vec<(String, EmbeddedConversation)>> {
    group_conversations(utterances)
        .par_iter()
        .map(|(id, segs)| {
            let frames = conversation_frames(segs)?;
            Ok((id.clone(), embed_conversation(&frames, embedder, vad, window, stride)))
        })
        .collect()
}

fn speech_mask(u: &Utterance) -> Vec<bool> {
    let mut mask = vec![false; u.num_frames()];
    for t in &u.turns {
        if let Some((s, e)) = t.span {
            mask[s..e].iter_mut().for_each(|m| *m = true);
        }
    }
    mask
}

/// `run_baseline`: role-free recognition, acoustic diarization, overlap
/// reconciliation and per-conversation label→role mapping, scored like the
/// joint system.
pub fn run_baseline(
    asr: &AnyModel,
    vocab: &Vocabulary,
    data: &BaselineData<'_>,
    config: &BaselineConfig,
    mode: DecodeMode,
    max_symbols: usize,
    source: DiarizationSource,
) -> Result<BaselineRun> {
    if data.eval.is_empty() {
        return Err(Error::usage("evaluation split is empty"));
    }
    check_model_vocabulary(asr, vocab)?;
    check_vocabulary(vocab, data.eval)?;
    let roles = vocab.roles().to_vec();
    let (window, stride) = config.window_frames(data.frame_ms);
    let mut vad = config.vad.clone();
    if let Some(p) = config.vad_percentile {
        vad.threshold = speech_energy_percentile(data.train.iter().map(|u| (&u.frames, speech_mask(u))), p)?;
    }
    let embedder = match config.embedder {
        EmbedderKind::WindowMean => Embedder::WindowMean,
        EmbedderKind::Lstm => {
            let (windows, speakers) = speaker_windows(data.train, window, stride);
            Embedder::Lstm(SpeakerEncoder::train(&windows, speakers, &config.speaker_encoder, config.seed)?)
        }
    };

    let mut change_threshold = config.change_threshold;
    let mut tuning = Vec::new();
    if config.tune_threshold && source == DiarizationSource::Pipeline && !data.dev.is_empty() {
        let words = decode_all(asr, vocab, data.dev, mode, max_symbols)?;
        let refs = references(data.dev);
        let embedded = embed_split(data.dev, &embedder, &vad, window, stride)?;
        let items: Vec<TuningItem<'_>> = embedded
            .iter()
            .zip(&words)
            .zip(&refs)
            .map(|((e, w), r)| TuningItem {
                embedded: &e.1,
                words: &w.1,
                reference: &r.1,
            })
            .collect();
        let (th, table) = tune_change_threshold(&items, config, &roles);
        info!("change threshold {th} chosen on dev");
        change_threshold = th;
        tuning = table;
    }

    let words = decode_all(asr, vocab, data.eval, mode, max_symbols)?;
    let refs = references(data.eval);
    let groups = group_conversations(data.eval);
    let results: Vec<_> = groups
        .par_iter()
        .zip(&words)
        .zip(&refs)
        .map(|(((id, segs), (_, w)), (_, r))| {
            let d = match source {
                DiarizationSource::Pipeline => {
                    let frames = conversation_frames(segs)?;
                    let e = embed_conversation(&frames, &embedder, &vad, window, stride);
                    diarize(&e, change_threshold, config.clusters, config.kmeans_iters, config.seed)
                }
                DiarizationSource::Oracle => Diarization {
                    speech: Vec::new(),
                    change_points: Vec::new(),
                    segments: oracle_segments(segs),
                },
            };
            Ok((id.clone(), label_words(w, d, r, &roles)))
        })
        .collect::<Result<_>>()?;
    let mut generic = Vec::new();
    let mut transcripts = Vec::new();
    let mut diarizations = Vec::new();
    for (id, r) in results {
        generic.push((id.clone(), r.generic));
        transcripts.push((id.clone(), r.mapped));
        diarizations.push((id, r.diarization));
    }
    let report = score(&refs, &transcripts)?;
    Ok(BaselineRun {
        report,
        vad_threshold: vad.threshold,
        change_threshold,
        tuning,
        generic,
        transcripts,
        diarizations,
    })
}
