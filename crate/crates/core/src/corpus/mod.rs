//! Synthetic physician–patient conversations.
//!
//! Each role draws words from its own lexicon (with a configurable shared
//! fraction), so the words themselves hint at the speaker. Each speaker adds a
//! fixed offset vector to every frame they utter, which is the acoustic cue.
//! Either cue can be switched off independently.

mod io;
mod segment;

pub use io::{read_corpus, write_corpus, FrameStorage};
pub use segment::{segment_conversation, Utterance};

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::vocab::{Role, Turn};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub feature_dim: usize,
    /// Nominal frame period; only used to express durations.
    pub frame_ms: usize,
    /// Inclusive ranges.
    pub frames_per_word: [usize; 2],
    pub words_per_turn: [usize; 2],
    pub turns_per_conversation: [usize; 2],
    /// Silence before every turn.
    pub gap_frames: [usize; 2],
    /// Words per role lexicon, shared words included.
    pub lexicon_size: usize,
    /// Fraction of each role lexicon shared with the other role.
    pub lexical_overlap: f64,
    /// Standard deviation of per-speaker offsets; 0 disables acoustic cues.
    pub offset_scale: f64,
    pub noise_scale: f64,
    /// Probability that the next turn switches role.
    pub alternation_prob: f64,
    pub physicians: usize,
    pub patients: usize,
    /// Fixes word prototypes and speaker offsets.
    pub world_seed: u64,
    /// Segment cap used by [`segment_conversation`] callers.
    pub max_segment_frames: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            frame_ms: 10,
            frames_per_word: [20, 40],
            words_per_turn: [4, 15],
            turns_per_conversation: [20, 40],
            gap_frames: [10, 40],
            lexicon_size: 20,
            lexical_overlap: 0.8,
            offset_scale: 0.5,
            noise_scale: 0.3,
            alternation_prob: 0.9,
            physicians: 40,
            patients: 400,
            world_seed: 7,
            max_segment_frames: 1500,
        }
    }
}

impl GeneratorConfig {
    /// Same conversations at a 60 ms frame period: word and gap durations
    /// shrink six-fold and the 15 s cap becomes 250 frames.
    pub fn compact() -> Self {
        Self {
            frame_ms: 60,
            frames_per_word: [3, 7],
            gap_frames: [2, 7],
            max_segment_frames: 250,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("frames_per_word", self.frames_per_word),
            ("words_per_turn", self.words_per_turn),
            ("turns_per_conversation", self.turns_per_conversation),
            ("gap_frames", self.gap_frames),
        ];
        for (name, [lo, hi]) in ranges {
            if lo > hi {
                return Err(Error::Config(format!("generator.{name} has min {lo} > max {hi}")));
            }
        }
        for (name, v) in [
            ("frames_per_word", self.frames_per_word[0]),
            ("words_per_turn", self.words_per_turn[0]),
            ("turns_per_conversation", self.turns_per_conversation[0]),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("generator.{name} minimum must be positive")));
            }
        }
        if self.feature_dim == 0 || self.frame_ms == 0 {
            return Err(Error::Config("generator.feature_dim and frame_ms must be positive".into()));
        }
        if self.lexicon_size == 0 {
            return Err(Error::usage("role lexicons are empty (lexicon_size = 0)"));
        }
        if !(0.0..=1.0).contains(&self.lexical_overlap) || !(0.0..=1.0).contains(&self.alternation_prob) {
            return Err(Error::Config(
                "generator.lexical_overlap and alternation_prob must lie in [0, 1]".into(),
            ));
        }
        if !(self.offset_scale >= 0.0 && self.noise_scale >= 0.0) {
            return Err(Error::Config("generator.offset_scale and noise_scale must be non-negative".into()));
        }
        if self.physicians == 0 || self.patients == 0 {
            return Err(Error::Config("generator speaker pools must be non-empty".into()));
        }
        Ok(())
    }
}

const PHYSICIAN_WORDS: &[&str] = &[
    "how", "when", "where", "does", "did", "often", "long", "describe", "tell", "worse", "better",
    "medication", "dose", "prescribe", "refill", "exam", "check", "pressure", "test", "results",
    "follow", "appointment", "recommend", "effects", "history", "symptoms", "any", "schedule",
    "referral", "therapy",
];

const PATIENT_WORDS: &[&str] = &[
    "pain", "ache", "tired", "dizzy", "nausea", "headache", "sleep", "cough", "fever", "swelling",
    "stomach", "chest", "back", "knee", "anxious", "worried", "struggling", "hurts", "sore", "weak",
    "itchy", "burning", "numb", "cramps", "breathing", "appetite", "weight", "mood", "sad", "awake",
];

const SHARED_WORDS: &[&str] = &[
    "yes", "no", "okay", "well", "think", "maybe", "really", "just", "about", "week", "day",
    "months", "little", "bit", "more", "today", "right", "feel", "time", "good", "also", "so",
    "then", "now", "again", "still", "because", "night", "morning", "lately",
];

fn pick_words(list: &[&str], prefix: &str, n: usize) -> Vec<String> {
    (0..n)
        .map(|i| match list.get(i) {
            Some(w) => w.to_string(),
            None => format!("{prefix}{i}"),
        })
        .collect()
}

/// A word and its fixed rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct LexiconEntry {
    pub word: String,
    pub prototype: Matrix<f32>,
}

/// Word prototypes, role lexicons and speaker offsets, all fixed by the
/// generator config.
#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    entries: Vec<LexiconEntry>,
    /// Indices into `entries` per role: physician, patient.
    lexicons: [Vec<usize>; 2],
    physician_offsets: Vec<Vec<f32>>,
    patient_offsets: Vec<Vec<f32>>,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            (z * scale) as f32
        })
        .collect()
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let n_shared = (config.lexical_overlap * config.lexicon_size as f64).round() as usize;
        let n_own = config.lexicon_size - n_shared;
        let shared = pick_words(SHARED_WORDS, "sx", n_shared);
        let own = [
            pick_words(PHYSICIAN_WORDS, "dx", n_own),
            pick_words(PATIENT_WORDS, "px", n_own),
        ];
        let mut words: Vec<String> = shared.clone();
        words.extend(own[0].iter().cloned());
        words.extend(own[1].iter().cloned());
        let mut rng = ChaCha8Rng::seed_from_u64(config.world_seed);
        let d = config.feature_dim;
        let entries: Vec<LexiconEntry> = words
            .into_iter()
            .map(|word| {
                let len = rng.gen_range(config.frames_per_word[0]..=config.frames_per_word[1]);
                let data = normal_vec(&mut rng, len * d, 1.0);
                LexiconEntry {
                    word,
                    prototype: Matrix::from_vec(len, d, data).expect("sized"),
                }
            })
            .collect();
        let lexicons = [
            (0..n_shared).chain(n_shared..n_shared + n_own).collect(),
            (0..n_shared).chain(n_shared + n_own..n_shared + 2 * n_own).collect(),
        ];
        let mut speaker_rng = ChaCha8Rng::seed_from_u64(config.world_seed);
        speaker_rng.set_stream(1);
        let physician_offsets = (0..config.physicians)
            .map(|_| normal_vec(&mut speaker_rng, d, config.offset_scale))
            .collect();
        let patient_offsets = (0..config.patients)
            .map(|_| normal_vec(&mut speaker_rng, d, config.offset_scale))
            .collect();
        Ok(Self {
            config,
            entries,
            lexicons,
            physician_offsets,
            patient_offsets,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn lexicon(&self) -> &[LexiconEntry] {
        &self.entries
    }

    /// Words available to `role` (physician or patient).
    pub fn role_lexicon(&self, role: &Role) -> Vec<&str> {
        let idx = if *role == Role::physician() { 0 } else { 1 };
        self.lexicons[idx].iter().map(|&i| self.entries[i].word.as_str()).collect()
    }

    /// Samples the speakers and turn contents without rendering frames.
    pub fn plan(&self, seed: u64) -> ConversationPlan {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let physician = rng.gen_range(0..c.physicians);
        let patient = rng.gen_range(0..c.patients);
        let n_turns = rng.gen_range(c.turns_per_conversation[0]..=c.turns_per_conversation[1]);
        let mut role = rng.gen_range(0..2usize);
        let mut turns = Vec::with_capacity(n_turns);
        for i in 0..n_turns {
            if i > 0 && rng.gen_bool(c.alternation_prob) {
                role = 1 - role;
            }
            let n_words = rng.gen_range(c.words_per_turn[0]..=c.words_per_turn[1]);
            let lex = &self.lexicons[role];
            let words = (0..n_words).map(|_| lex[rng.gen_range(0..lex.len())]).collect();
            let gap = rng.gen_range(c.gap_frames[0]..=c.gap_frames[1]);
            turns.push(PlannedTurn { role, words, gap });
        }
        ConversationPlan {
            physician,
            patient,
            turns,
        }
    }

    /// `generate_conversation`.
    pub fn conversation(&self, id: impl Into<String>, seed: u64) -> Conversation {
        let c = &self.config;
        let plan = self.plan(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let d = c.feature_dim;
        let total: usize = plan
            .turns
            .iter()
            .map(|t| t.gap + t.words.iter().map(|&w| self.entries[w].prototype.rows()).sum::<usize>())
            .sum();
        let mut data = Vec::with_capacity(total * d);
        let mut speech_mask = Vec::with_capacity(total);
        let mut turns = Vec::with_capacity(plan.turns.len());
        let noise = |rng: &mut ChaCha8Rng| -> f32 {
            if c.noise_scale == 0.0 {
                0.0
            } else {
                let z: f64 = StandardNormal.sample(rng);
                (z * c.noise_scale) as f32
            }
        };
        for t in &plan.turns {
            for _ in 0..t.gap * d {
                data.push(noise(&mut rng));
            }
            speech_mask.extend(std::iter::repeat(false).take(t.gap));
            let offset = if t.role == 0 {
                &self.physician_offsets[plan.physician]
            } else {
                &self.patient_offsets[plan.patient]
            };
            let start = speech_mask.len();
            let mut word_spans = Vec::with_capacity(t.words.len());
            for &w in &t.words {
                let proto = &self.entries[w].prototype;
                let ws = speech_mask.len();
                for r in 0..proto.rows() {
                    for (k, &p) in proto.row(r).iter().enumerate() {
                        data.push(p + offset[k] + noise(&mut rng));
                    }
                }
                speech_mask.extend(std::iter::repeat(true).take(proto.rows()));
                word_spans.push((ws, speech_mask.len()));
            }
            turns.push(ConversationTurn {
                role: role_of(t.role),
                words: t.words.iter().map(|&w| self.entries[w].word.clone()).collect(),
                span: (start, speech_mask.len()),
                word_spans,
            });
        }
        let frames = Matrix::from_vec(speech_mask.len(), d, data).expect("sized");
        Conversation {
            id: id.into(),
            physician_id: format!("dr{:03}", plan.physician),
            patient_id: format!("pt{:03}", plan.patient),
            turns,
            frames,
            speech_mask,
        }
    }

    /// `count` conversations with ids `{prefix}{i:05}`; conversation `i` uses
    /// a seed derived from `(base_seed, i)` so the result does not depend on
    /// thread scheduling.
    pub fn corpus(&self, prefix: &str, count: usize, base_seed: u64) -> Vec<Conversation> {
        (0..count)
            .into_par_iter()
            .map(|i| self.conversation(format!("{prefix}{i:05}"), derive_seed(base_seed, i as u64)))
            .collect()
    }
}

/// Per-item seed from a base seed and an index.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index);
    rng.gen()
}

fn role_of(idx: usize) -> Role {
    if idx == 0 {
        Role::physician()
    } else {
        Role::patient()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannedTurn {
    /// 0 physician, 1 patient.
    pub role: usize,
    /// Lexicon entry indices.
    pub words: Vec<usize>,
    pub gap: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConversationPlan {
    pub physician: usize,
    pub patient: usize,
    pub turns: Vec<PlannedTurn>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversationTurn {
    pub role: Role,
    pub words: Vec<String>,
    /// `[start, end)` in conversation frames.
    pub span: (usize, usize),
    pub word_spans: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conversation {
    pub id: String,
    pub physician_id: String,
    pub patient_id: String,
    pub turns: Vec<ConversationTurn>,
    pub frames: Matrix<f32>,
    pub speech_mask: Vec<bool>,
}

impl Conversation {
    pub fn plain_turns(&self) -> Vec<Turn> {
        self.turns
            .iter()
            .map(|t| Turn {
                role: t.role.clone(),
                words: t.words.clone(),
                span: Some(t.span),
            })
            .collect()
    }
}

/// `generate_conversation`: builds the world from `config` and renders one
/// conversation.
pub fn generate_conversation(config: &GeneratorConfig, seed: u64) -> Result<Conversation> {
    Ok(Generator::new(config.clone())?.conversation(format!("conv{seed}"), seed))
}

/// Train, dev and eval parts with disjoint physicians.
#[derive(Clone, Debug, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub eval: Vec<T>,
}

/// `split_corpus`: `dev_count` and `eval_count` physicians (chosen by `seed`)
/// go to dev and eval; everyone else's conversations go to train.
pub fn split_corpus(conversations: Vec<Conversation>, dev_count: usize, eval_count: usize, seed: u64) -> Result<Split<Conversation>> {
    split_by_key(conversations, |c| c.physician_id.clone(), dev_count, eval_count, seed)
}

/// [`split_corpus`] over any item with a physician key.
pub fn split_by_key<T>(
    items: Vec<T>,
    key: impl Fn(&T) -> String,
    dev_count: usize,
    eval_count: usize,
    seed: u64,
) -> Result<Split<T>> {
    use rand::seq::SliceRandom;
    let ids: BTreeSet<String> = items.iter().map(&key).collect();
    if ids.len() < dev_count + eval_count + 1 {
        return Err(Error::usage(format!(
            "{} distinct physicians cannot cover {dev_count} dev + {eval_count} eval + at least one train",
            ids.len()
        )));
    }
    let mut ids: Vec<String> = ids.into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let dev: BTreeSet<&String> = ids[..dev_count].iter().collect();
    let eval: BTreeSet<&String> = ids[dev_count..dev_count + eval_count].iter().collect();
    let mut out = Split {
        train: Vec::new(),
        dev: Vec::new(),
        eval: Vec::new(),
    };
    for item in items {
        let k = key(&item);
        if dev.contains(&k) {
            out.dev.push(item);
        } else if eval.contains(&k) {
            out.eval.push(item);
        } else {
            out.train.push(item);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_word() -> GeneratorConfig {
        GeneratorConfig {
            words_per_turn: [1, 1],
            turns_per_conversation: [1, 1],
            gap_frames: [0, 0],
            noise_scale: 0.0,
            offset_scale: 0.0,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn degenerate_generator_reproduces_prototype() {
        let g = Generator::new(single_word()).unwrap();
        let c = g.conversation("c", 3);
        let word = &c.turns[0].words[0];
        let entry = g.lexicon().iter().find(|e| &e.word == word).unwrap();
        assert_eq!(c.frames, entry.prototype);
        assert!(c.speech_mask.iter().all(|&m| m));
    }

    #[test]
    fn deterministic_per_seed() {
        let g = Generator::new(GeneratorConfig::compact()).unwrap();
        assert_eq!(g.conversation("a", 5), g.conversation("a", 5));
        assert_ne!(g.conversation("a", 5).frames, g.conversation("a", 6).frames);
        let a = g.corpus("c", 4, 9);
        let b: Vec<_> = (0..4).map(|i| g.conversation(format!("c{i:05}"), derive_seed(9, i))).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn spans_and_mask_agree() {
        let g = Generator::new(GeneratorConfig::compact()).unwrap();
        let c = g.conversation("a", 1);
        let mut mask = vec![false; c.frames.rows()];
        let mut last = 0;
        for t in &c.turns {
            assert!(t.span.0 >= last && t.span.0 < t.span.1);
            last = t.span.1;
            for m in &mut mask[t.span.0..t.span.1] {
                *m = true;
            }
            assert_eq!(t.word_spans.first().unwrap().0, t.span.0);
            assert_eq!(t.word_spans.last().unwrap().1, t.span.1);
        }
        assert_eq!(mask, c.speech_mask);
        assert_eq!(last, c.frames.rows());
        assert!(c.frames.all_finite());
    }

    #[test]
    fn lexicons_overlap_as_configured() {
        let g = Generator::new(GeneratorConfig {
            lexical_overlap: 0.3,
            ..GeneratorConfig::default()
        })
        .unwrap();
        let dr: BTreeSet<_> = g.role_lexicon(&Role::physician()).into_iter().collect();
        let pt: BTreeSet<_> = g.role_lexicon(&Role::patient()).into_iter().collect();
        assert_eq!(dr.len(), 20);
        assert_eq!(pt.len(), 20);
        assert_eq!(dr.intersection(&pt).count(), 6);
        let big = Generator::new(GeneratorConfig {
            lexicon_size: 50,
            lexical_overlap: 0.3,
            ..GeneratorConfig::default()
        })
        .unwrap();
        assert_eq!(big.lexicon().len(), 15 + 2 * 35);
        assert!(Generator::new(GeneratorConfig {
            lexicon_size: 0,
            ..GeneratorConfig::default()
        })
        .is_err());
    }

    #[test]
    fn offsets_vanish_without_acoustic_cues() {
        let cfg = GeneratorConfig {
            offset_scale: 0.0,
            noise_scale: 0.0,
            ..GeneratorConfig::compact()
        };
        let g = Generator::new(cfg).unwrap();
        let c = g.conversation("a", 2);
        for t in &c.turns {
            for (w, &(s, e)) in t.words.iter().zip(&t.word_spans) {
                let proto = &g.lexicon().iter().find(|x| &x.word == w).unwrap().prototype;
                for r in s..e {
                    assert_eq!(c.frames.row(r), proto.row(r - s));
                }
            }
        }
    }

    #[test]
    fn both_roles_nearly_always_present() {
        let g = Generator::new(GeneratorConfig::default()).unwrap();
        let both = (0..1000)
            .filter(|&i| {
                let p = g.plan(derive_seed(1, i));
                p.turns.iter().any(|t| t.role == 0) && p.turns.iter().any(|t| t.role == 1)
            })
            .count();
        assert!(both >= 990, "{both}");
    }

    #[test]
    fn split_is_physician_disjoint() {
        let g = Generator::new(GeneratorConfig {
            physicians: 10,
            turns_per_conversation: [1, 2],
            ..GeneratorConfig::compact()
        })
        .unwrap();
        let convs = g.corpus("c", 200, 4);
        let s = split_corpus(convs.clone(), 2, 2, 11).unwrap();
        let ids = |v: &[Conversation]| v.iter().map(|c| c.physician_id.clone()).collect::<BTreeSet<_>>();
        let (tr, dv, ev) = (ids(&s.train), ids(&s.dev), ids(&s.eval));
        assert_eq!((tr.len(), dv.len(), ev.len()), (6, 2, 2));
        assert!(tr.is_disjoint(&dv) && tr.is_disjoint(&ev) && dv.is_disjoint(&ev));
        assert_eq!(s.train.len() + s.dev.len() + s.eval.len(), 200);
        assert_eq!(split_corpus(convs.clone(), 2, 2, 11).unwrap(), s);
        assert!(matches!(split_corpus(convs, 5, 5, 1), Err(Error::Usage(_))));
    }
}
