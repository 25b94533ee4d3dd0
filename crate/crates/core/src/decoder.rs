//! Greedy and beam-search transducer decoding.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::lattice::BLANK;
use crate::model::{Model, PredictionState};
use crate::numerics::{log_add, log_softmax, Matrix, Real};
use crate::vocab::{parse_decorated_timed, DecoratedTranscript, DecoratedWord, Role, Vocabulary};

pub const DEFAULT_MAX_SYMBOLS: usize = 8;

/// Output distributions over encoder steps, as a function of the emitted prefix.
pub trait TransducerScorer {
    type State: Clone;

    fn time_steps(&self) -> usize;

    fn start(&self) -> Self::State;

    /// State after emitting `token`.
    fn advance(&self, state: &Self::State, token: usize) -> Result<Self::State>;

    /// Log-probabilities at encoder step `t`.
    fn log_probs(&self, t: usize, state: &Self::State) -> Vec<f64>;
}

/// A model with its encoder output for one utterance.
pub struct ModelScorer<'a, F> {
    model: &'a Model<F>,
    enc_proj: Matrix<F>,
}

impl<'a, F: Real> ModelScorer<'a, F> {
    pub fn new(model: &'a Model<F>, frames: &Matrix<F>) -> Result<Self> {
        let enc = model.encode(frames)?;
        Ok(Self {
            model,
            enc_proj: model.project_encoder(&enc)?,
        })
    }
}

impl<F: Real> TransducerScorer for ModelScorer<'_, F> {
    type State = PredictionState<F>;

    fn time_steps(&self) -> usize {
        self.enc_proj.rows()
    }

    fn start(&self) -> Self::State {
        self.model.prediction_start()
    }

    fn advance(&self, state: &Self::State, token: usize) -> Result<Self::State> {
        self.model.prediction_step(state, token)
    }

    fn log_probs(&self, t: usize, state: &Self::State) -> Vec<f64> {
        let logits: Vec<f64> = self
            .model
            .join_projected(self.enc_proj.row(t), state)
            .iter()
            .map(|x| x.as_f64())
            .collect();
        log_softmax(&logits)
    }
}

/// A decoded token sequence with the encoder step of each emission.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub emissions: Vec<usize>,
    pub score: f64,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Greedy search: at each step keep taking the argmax, emitting labels
/// until blank wins or `max_symbols` labels were emitted at this step.
pub fn greedy_search<S: TransducerScorer>(scorer: &S, max_symbols: usize) -> Result<Hypothesis> {
    let mut state = scorer.start();
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        emissions: Vec::new(),
        score: 0.0,
    };
    for t in 0..scorer.time_steps() {
        let mut emitted = 0;
        loop {
            let lp = scorer.log_probs(t, &state);
            let k = if emitted < max_symbols { argmax(&lp) } else { BLANK };
            hyp.score += lp[k];
            if k == BLANK {
                break;
            }
            state = scorer.advance(&state, k)?;
            hyp.tokens.push(k);
            hyp.emissions.push(t);
            emitted += 1;
        }
    }
    Ok(hyp)
}

/// `greedy_decode`.
pub fn greedy_decode<F: Real>(model: &Model<F>, frames: &Matrix<F>, max_symbols: usize) -> Result<Hypothesis> {
    greedy_search(&ModelScorer::new(model, frames)?, max_symbols)
}

struct Beam<S> {
    emissions: Vec<usize>,
    score: f64,
    emitted_here: usize,
    state: Option<S>,
    /// Parent state and the token to feed when `state` is still unknown.
    parent: Option<(S, usize)>,
}

fn merge<S>(into: &mut BTreeMap<Vec<usize>, Beam<S>>, prefix: Vec<usize>, beam: Beam<S>) {
    match into.get_mut(&prefix) {
        Some(old) => {
            let total = log_add(old.score, beam.score);
            if beam.score > old.score {
                *old = beam;
            }
            old.score = total;
        }
        None => {
            into.insert(prefix, beam);
        }
    }
}

/// Time-synchronous beam search with prefix merging.
///
/// At each encoder step, hypotheses are expanded shortest prefix first.
/// Each expansion sends the blank continuation to the next step and the
/// label continuations back into the current step; identical prefixes are
/// merged by log-sum-exp. After every expansion round both pools together are
/// pruned to `beam_width`, so a width of 1 follows the greedy path.
pub fn beam_search<S: TransducerScorer>(scorer: &S, beam_width: usize, max_symbols: usize) -> Result<Vec<Hypothesis>> {
    if beam_width == 0 {
        return Err(Error::usage("beam width must be at least 1"));
    }
    let mut live: BTreeMap<Vec<usize>, Beam<S::State>> = BTreeMap::new();
    live.insert(
        Vec::new(),
        Beam {
            emissions: Vec::new(),
            score: 0.0,
            emitted_here: 0,
            state: Some(scorer.start()),
            parent: None,
        },
    );
    for t in 0..scorer.time_steps() {
        let mut pending = std::mem::take(&mut live);
        for b in pending.values_mut() {
            b.emitted_here = 0;
        }
        let mut done: BTreeMap<Vec<usize>, Beam<S::State>> = BTreeMap::new();
        while let Some(len) = pending.keys().map(Vec::len).min() {
            let round: Vec<Vec<usize>> = pending.keys().filter(|k| k.len() == len).cloned().collect();
            for prefix in round {
                let mut b = pending.remove(&prefix).expect("listed");
                let state = match b.state.take() {
                    Some(s) => s,
                    None => {
                        let (p, tok) = b.parent.take().expect("parent or state");
                        scorer.advance(&p, tok)?
                    }
                };
                let lp = scorer.log_probs(t, &state);
                if b.emitted_here < max_symbols {
                    for (k, &l) in lp.iter().enumerate().skip(1) {
                        let mut p = prefix.clone();
                        p.push(k);
                        let mut em = b.emissions.clone();
                        em.push(t);
                        merge(
                            &mut pending,
                            p,
                            Beam {
                                emissions: em,
                                score: b.score + l,
                                emitted_here: b.emitted_here + 1,
                                state: None,
                                parent: Some((state.clone(), k)),
                            },
                        );
                    }
                }
                merge(
                    &mut done,
                    prefix,
                    Beam {
                        emissions: b.emissions,
                        score: b.score + lp[BLANK],
                        emitted_here: 0,
                        state: Some(state),
                        parent: None,
                    },
                );
            }
            prune(&mut pending, &mut done, beam_width);
        }
        live = done;
    }
    let mut out: Vec<Hypothesis> = live
        .into_iter()
        .map(|(tokens, b)| Hypothesis {
            tokens,
            emissions: b.emissions,
            score: b.score,
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens)));
    Ok(out)
}

fn prune<S>(pending: &mut BTreeMap<Vec<usize>, Beam<S>>, done: &mut BTreeMap<Vec<usize>, Beam<S>>, width: usize) {
    if pending.len() + done.len() <= width {
        return;
    }
    // (score, is_done, prefix), best first; finished entries win exact ties.
    let mut all: Vec<(f64, bool, &Vec<usize>)> = pending
        .iter()
        .map(|(k, b)| (b.score, false, k))
        .chain(done.iter().map(|(k, b)| (b.score, true, k)))
        .collect();
    all.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| b.1.cmp(&a.1))
            .then_with(|| a.2.cmp(b.2))
    });
    let keep_pending: BTreeSet<Vec<usize>> = all[..width].iter().filter(|e| !e.1).map(|e| e.2.clone()).collect();
    let keep_done: BTreeSet<Vec<usize>> = all[..width].iter().filter(|e| e.1).map(|e| e.2.clone()).collect();
    pending.retain(|k, _| keep_pending.contains(k));
    done.retain(|k, _| keep_done.contains(k));
}

/// `beam_search_decode`: N-best list, best first.
pub fn beam_search_decode<F: Real>(
    model: &Model<F>,
    frames: &Matrix<F>,
    beam_width: usize,
    max_symbols: usize,
) -> Result<Vec<Hypothesis>> {
    beam_search(&ModelScorer::new(model, frames)?, beam_width, max_symbols)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Greedy,
    Beam { width: usize },
}


/// Best hypothesis for one utterance under `mode`.
pub fn decode_utterance<F: Real>(model: &Model<F>, frames: &Matrix<F>, mode: DecodeMode, max_symbols: usize) -> Result<Hypothesis> {
    match mode {
        DecodeMode::Greedy => greedy_decode(model, frames, max_symbols),
        DecodeMode::Beam { width } => Ok(beam_search_decode(model, frames, width, max_symbols)?
            .into_iter()
            .next()
            .expect("beam search keeps at least one hypothesis")),
    }
}

/// Joins per-segment transcripts; word spans are shifted to conversation
/// frames. When a segment continues a turn from the previous segment, the
/// words ahead of its first role token take the previous segment's final role.
pub fn stitch_segments(
    segments: &[(&Utterance, &Hypothesis)],
    vocab: &Vocabulary,
    reduction: usize,
) -> Result<DecoratedTranscript> {
    let mut out = DecoratedTranscript::default();
    for (utt, hyp) in segments {
        let mut part = parse_decorated_timed(&hyp.tokens, &hyp.emissions, reduction, vocab)?;
        for w in &mut part.words {
            if let Some((s, e)) = w.span {
                w.span = Some((s + utt.start_frame, e + utt.start_frame));
            }
        }
        if utt.continues_turn {
            if let Some(prev) = out.words.last().map(|w| w.role.clone()) {
                let leading = hyp.tokens.iter().take_while(|&&t| vocab.role_of(t).is_none()).count();
                for w in &mut part.words[..leading] {
                    w.role = prev.clone();
                }
            }
        }
        out.words.extend(part.words);
    }
    Ok(out)
}

/// `decode_conversation`: decodes the ordered segments of one conversation
/// (in parallel) and stitches them.
pub fn decode_conversation<F: Real>(
    model: &Model<F>,
    vocab: &Vocabulary,
    segments: &[&Utterance],
    mode: DecodeMode,
    max_symbols: usize,
) -> Result<DecoratedTranscript> {
    let hyps: Vec<Hypothesis> = segments
        .par_iter()
        .map(|u| decode_utterance(model, &u.frames_as::<F>(), mode, max_symbols))
        .collect::<Result<_>>()?;
    let pairs: Vec<_> = segments.iter().copied().zip(&hyps).collect();
    stitch_segments(&pairs, vocab, model.config().time_reduction())
}

/// Groups utterances by conversation, each group ordered by segment index;
/// conversations appear in order of first occurrence.
pub fn group_conversations(utterances: &[Utterance]) -> Vec<(String, Vec<&Utterance>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&Utterance>> = BTreeMap::new();
    for u in utterances {
        let g = groups.entry(u.conversation_id.as_str()).or_default();
        if g.is_empty() {
            order.push(u.conversation_id.clone());
        }
        g.push(u);
    }
    order
        .into_iter()
        .map(|id| {
            let mut g = groups.remove(id.as_str()).expect("grouped");
            g.sort_by_key(|u| u.segment_index);
            (id, g)
        })
        .collect()
}

/// Reference transcript of a conversation with spans in conversation frames.
pub fn reference_transcript(segments: &[&Utterance]) -> DecoratedTranscript {
    DecoratedTranscript {
        words: segments
            .iter()
            .flat_map(|u| {
                u.turns.iter().flat_map(move |t| {
                    t.words.iter().map(move |w| DecoratedWord {
                        word: w.clone(),
                        role: t.role.clone(),
                        span: t.span.map(|(s, e)| (s + u.start_frame, e + u.start_frame)),
                    })
                })
            })
            .collect(),
    }
}

#[derive(Serialize, Deserialize)]
struct WordRecord {
    word: String,
    role: Role,
    #[serde(default)]
    start_frame: Option<usize>,
    #[serde(default)]
    end_frame: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct TranscriptRecord {
    conversation_id: String,
    words: Vec<WordRecord>,
}

/// Writes `{conversation_id, words: [{word, role, start_frame, end_frame}]}` lines.
pub fn write_transcripts(path: &Path, items: &[(String, DecoratedTranscript)]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for (id, t) in items {
        let rec = TranscriptRecord {
            conversation_id: id.clone(),
            words: t
                .words
                .iter()
                .map(|x| WordRecord {
                    word: x.word.clone(),
                    role: x.role.clone(),
                    start_frame: x.span.map(|s| s.0),
                    end_frame: x.span.map(|s| s.1),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_transcripts(path: &Path) -> Result<Vec<(String, DecoratedTranscript)>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TranscriptRecord =
            serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        let words = rec
            .words
            .into_iter()
            .map(|w| DecoratedWord {
                word: w.word,
                role: w.role,
                span: w.start_frame.zip(w.end_frame),
            })
            .collect();
        out.push((rec.conversation_id, DecoratedTranscript { words }));
    }
    Ok(out)
}
