use std::collections::VecDeque;

use super::Conversation;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Real};
use crate::vocab::{tokenize_turns, tokenize_words, DecoratedTranscript, Role, Turn, Vocabulary};

/// A training/decoding segment cut from a conversation.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub conversation_id: String,
    pub segment_index: usize,
    pub physician_id: String,
    pub patient_id: String,
    pub frames: Matrix<f32>,
    /// Turn spans are relative to the first frame of this utterance.
    pub turns: Vec<Turn>,
    /// A turn was cut at a word boundary because it exceeded the cap.
    pub fallback_split: bool,
    /// The first turn continues a turn begun in the previous segment.
    pub continues_turn: bool,
    /// Offset of this utterance in its conversation.
    pub start_frame: usize,
}

impl Utterance {
    pub fn id(&self) -> String {
        format!("{}#{}", self.conversation_id, self.segment_index)
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn frames_as<F: Real>(&self) -> Matrix<F> {
        self.frames.convert()
    }

    /// Role-decorated targets, or words only when `with_roles` is false.
    pub fn targets(&self, vocab: &Vocabulary, with_roles: bool) -> Result<Vec<usize>> {
        if with_roles {
            tokenize_turns(&self.turns, vocab)
        } else {
            Ok(tokenize_words(&self.turns, vocab))
        }
    }

    pub fn reference(&self) -> DecoratedTranscript {
        DecoratedTranscript::from_turns(&self.turns)
    }
}

struct Piece {
    role: Role,
    words: Vec<String>,
    word_spans: Vec<(usize, usize)>,
    start: usize,
    end: usize,
    split: bool,
    continued: bool,
}

/// `segment_conversation`: greedily packs whole turns into segments of at
/// most `max_frames`, cutting only between turns. A turn that cannot fit on
/// its own is cut between words and the affected utterances are flagged.
pub fn segment_conversation(conv: &Conversation, max_frames: usize) -> Result<Vec<Utterance>> {
    if max_frames == 0 {
        return Err(Error::usage("max_frames must be positive"));
    }
    let mut queue: VecDeque<Piece> = conv
        .turns
        .iter()
        .map(|t| Piece {
            role: t.role.clone(),
            words: t.words.clone(),
            word_spans: t.word_spans.clone(),
            start: t.span.0,
            end: t.span.1,
            split: false,
            continued: false,
        })
        .collect();
    let mut out = Vec::new();
    let mut pos = 0;
    let mut cur: Vec<Piece> = Vec::new();
    let close = |cur: &mut Vec<Piece>, start: usize, end: usize, out: &mut Vec<Utterance>| {
        let frames = slice_rows(&conv.frames, start, end);
        let fallback_split = cur.iter().any(|p| p.split);
        let continues_turn = cur.first().is_some_and(|p| p.continued);
        let turns = cur
            .drain(..)
            .map(|p| Turn {
                role: p.role,
                words: p.words,
                span: Some((p.start - start, p.end - start)),
            })
            .collect();
        out.push(Utterance {
            conversation_id: conv.id.clone(),
            segment_index: out.len(),
            physician_id: conv.physician_id.clone(),
            patient_id: conv.patient_id.clone(),
            frames,
            turns,
            fallback_split,
            continues_turn,
            start_frame: start,
        });
    };
    while let Some(p) = queue.pop_front() {
        if p.end - pos <= max_frames {
            cur.push(p);
            continue;
        }
        if let Some(last) = cur.last() {
            let end = last.end;
            close(&mut cur, pos, end, &mut out);
            pos = end;
            queue.push_front(p);
            continue;
        }
        let k = p.word_spans.iter().take_while(|s| s.1 - pos <= max_frames).count();
        if k == 0 {
            return Err(Error::usage(format!(
                "a word of {} frames in {} does not fit in {max_frames} frames",
                p.word_spans[0].1 - p.word_spans[0].0,
                conv.id
            )));
        }
        let head_end = p.word_spans[k - 1].1;
        let head = Piece {
            role: p.role.clone(),
            words: p.words[..k].to_vec(),
            word_spans: p.word_spans[..k].to_vec(),
            start: p.start,
            end: head_end,
            split: true,
            continued: p.continued,
        };
        let tail = Piece {
            role: p.role,
            words: p.words[k..].to_vec(),
            word_spans: p.word_spans[k..].to_vec(),
            start: p.word_spans[k].0,
            end: p.end,
            split: true,
            continued: true,
        };
        cur.push(head);
        close(&mut cur, pos, head_end, &mut out);
        pos = head_end;
        queue.push_front(tail);
    }
    if !cur.is_empty() || pos < conv.frames.rows() {
        close(&mut cur, pos, conv.frames.rows(), &mut out);
    }
    Ok(out)
}

fn slice_rows(m: &Matrix<f32>, start: usize, end: usize) -> Matrix<f32> {
    let c = m.cols();
    Matrix::from_vec(end - start, c, m.data()[start * c..end * c].to_vec()).expect("sized")
}

#[cfg(test)]
mod tests {
    use super::super::{derive_seed, Generator, GeneratorConfig};
    use super::*;

    #[test]
    fn short_conversation_is_one_segment() {
        let g = Generator::new(GeneratorConfig {
            turns_per_conversation: [2, 2],
            ..GeneratorConfig::default()
        })
        .unwrap();
        let c = g.conversation("c", 1);
        let segs = segment_conversation(&c, 1500).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].frames, c.frames);
        assert!(!segs[0].fallback_split);
    }

    #[test]
    fn cap_respected_and_targets_reconstruct() {
        let g = Generator::new(GeneratorConfig::default()).unwrap();
        for i in 0..5 {
            let c = g.conversation("c", derive_seed(3, i));
            let segs = segment_conversation(&c, 1500).unwrap();
            let mut turns = Vec::new();
            let mut next = 0;
            for s in &segs {
                assert!(s.num_frames() <= 1500);
                assert_eq!(s.start_frame, next);
                next += s.num_frames();
                for t in &s.turns {
                    let (a, b) = t.span.unwrap();
                    assert!(a < b && b <= s.num_frames());
                    turns.push((t.role.clone(), t.words.clone()));
                }
            }
            assert_eq!(next, c.frames.rows());
            let orig: Vec<_> = c.turns.iter().map(|t| (t.role.clone(), t.words.clone())).collect();
            assert_eq!(turns, orig);
        }
    }

    #[test]
    fn forty_second_conversation_under_fifteen_second_cap() {
        let g = Generator::new(GeneratorConfig::default()).unwrap();
        let mut seed = 0;
        let c = loop {
            let c = g.conversation("c", seed);
            if c.frames.rows() >= 4000 {
                break c;
            }
            seed += 1;
        };
        let segs = segment_conversation(&c, 1500).unwrap();
        assert!(segs.len() >= 3);
        assert!(segs.iter().all(|s| s.num_frames() <= 1500));
    }

    #[test]
    fn long_turn_falls_back_to_word_cuts() {
        let g = Generator::new(GeneratorConfig {
            words_per_turn: [12, 12],
            turns_per_conversation: [3, 3],
            ..GeneratorConfig::compact()
        })
        .unwrap();
        let c = g.conversation("c", 4);
        let longest = c.turns.iter().map(|t| t.span.1 - t.span.0).max().unwrap();
        let cap = longest / 2 + 8;
        let segs = segment_conversation(&c, cap).unwrap();
        assert!(segs.iter().any(|s| s.fallback_split));
        assert!(segs.iter().any(|s| s.continues_turn));
        for s in &segs {
            assert!(s.num_frames() <= cap || s.fallback_split);
        }
        let words: Vec<String> = segs.iter().flat_map(|s| s.turns.iter().flat_map(|t| t.words.clone())).collect();
        let orig: Vec<String> = c.turns.iter().flat_map(|t| t.words.clone()).collect();
        assert_eq!(words, orig);
        assert!(segment_conversation(&c, 2).is_err());
    }

    fn mean_turns(cfg: GeneratorConfig) -> f64 {
        let g = Generator::new(cfg.clone()).unwrap();
        let (mut turns, mut segs) = (0, 0);
        for c in g.corpus("c", 100, 21) {
            for u in segment_conversation(&c, cfg.max_segment_frames).unwrap() {
                assert!(u.num_frames() <= cfg.max_segment_frames || u.fallback_split);
                turns += u.turns.len();
                segs += 1;
            }
        }
        turns as f64 / segs as f64
    }

    #[test]
    fn about_four_turns_per_segment() {
        for cfg in [GeneratorConfig::default(), GeneratorConfig::compact()] {
            let m = mean_turns(cfg);
            eprintln!("mean turns per segment {m:.3}");
            assert!((3.0..=5.0).contains(&m), "{m}");
        }
    }
}
