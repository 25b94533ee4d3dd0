//! Output symbol inventory, turn tokenization and role-decorated transcripts.
//!
//! A target stream lists each turn's words followed by that turn's role
//! token: `hello dr jekyll <spk:pt> hello mr hyde ... <spk:dr>`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::BLANK;

pub const BLANK_TOKEN: &str = "<blank>";
pub const UNK_TOKEN: &str = "<unk>";

/// Speaker role, e.g. `dr` for the token `<spk:dr>`. Generic diarization
/// labels are roles named `0`, `1`, ...
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Role(String);

impl Role {
    pub fn new(name: impl Into<String>) -> Self {
        Role(name.into())
    }

    pub fn physician() -> Self {
        Role::new("dr")
    }

    pub fn patient() -> Self {
        Role::new("pt")
    }

    /// Marker for words whose role could not be determined.
    pub fn unknown() -> Self {
        Role::new("unk")
    }

    /// Generic speaker tag produced by clustering.
    pub fn generic(label: usize) -> Self {
        Role(label.to_string())
    }

    pub fn name(&self) -> &str {
        &self.0
    }

    pub fn is_unknown(&self) -> bool {
        self.0 == "unk"
    }

    pub fn token(&self) -> String {
        format!("<spk:{}>", self.0)
    }

    pub fn from_token(token: &str) -> Option<Self> {
        token
            .strip_prefix("<spk:")
            .and_then(|s| s.strip_suffix('>'))
            .filter(|s| !s.is_empty())
            .map(Role::new)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The two roles of a clinical conversation.
pub fn default_roles() -> Vec<Role> {
    vec![Role::physician(), Role::patient()]
}

/// One speaker turn.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub words: Vec<String>,
    /// `[start, end)` in frames of the enclosing utterance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
}

impl Turn {
    pub fn new(role: Role, text: &str) -> Self {
        Self {
            role,
            words: text.split_whitespace().map(str::to_string).collect(),
            span: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    roles: Vec<Role>,
    unk: usize,
}

/// `build_vocab`: blank, the roles, `<unk>`, then the `max_size` most
/// frequent words (ties alphabetical).
pub fn build_vocab<'a>(
    turns: impl IntoIterator<Item = &'a Turn>,
    roles: &[Role],
    max_size: usize,
) -> Result<Vocabulary> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut any = false;
    for turn in turns {
        any = true;
        for w in &turn.words {
            *counts.entry(w.as_str()).or_default() += 1;
        }
    }
    if !any {
        return Err(Error::usage("cannot build a vocabulary from an empty corpus"));
    }
    let mut words: Vec<(&str, usize)> = counts.into_iter().collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    words.truncate(max_size);
    let mut tokens = vec![BLANK_TOKEN.to_string()];
    tokens.extend(roles.iter().map(Role::token));
    tokens.push(UNK_TOKEN.to_string());
    tokens.extend(words.into_iter().map(|(w, _)| w.to_string()));
    Vocabulary::from_tokens(tokens)
}

impl Vocabulary {
    /// Builds from an id-ordered token list, checking the reserved layout.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(BLANK_TOKEN) {
            return Err(Error::usage(format!("token 0 must be {BLANK_TOKEN}")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        let mut roles = Vec::new();
        let mut unk = None;
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::usage(format!("token {i} is empty or contains whitespace")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::usage(format!("token `{t}` appears twice (role colliding with a word?)")));
            }
            if i == 0 {
                continue;
            }
            if let Some(r) = Role::from_token(t) {
                if unk.is_some() || i != roles.len() + 1 {
                    return Err(Error::usage(format!("role token `{t}` must precede {UNK_TOKEN}")));
                }
                roles.push(r);
            } else if t == UNK_TOKEN {
                unk = Some(i);
            } else if unk.is_none() {
                return Err(Error::usage(format!("word `{t}` appears before {UNK_TOKEN}")));
            } else if t.starts_with('<') && t.ends_with('>') {
                return Err(Error::usage(format!("word `{t}` looks like a reserved token")));
            }
        }
        let unk = unk.ok_or_else(|| Error::usage(format!("vocabulary lacks {UNK_TOKEN}")))?;
        Ok(Self {
            tokens,
            index,
            roles,
            unk,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn unk_id(&self) -> usize {
        self.unk
    }

    pub fn role_id(&self, role: &Role) -> Option<usize> {
        self.id(&role.token())
    }

    /// The role carried by `id`, if it is a role token.
    pub fn role_of(&self, id: usize) -> Option<&Role> {
        if id >= 1 && id <= self.roles.len() {
            Some(&self.roles[id - 1])
        } else {
            None
        }
    }

    /// Word-unit id, `<unk>` for out-of-vocabulary words.
    pub fn word_id(&self, word: &str) -> usize {
        match self.id(word) {
            Some(id) if id > self.unk => id,
            _ => self.unk,
        }
    }

    pub fn word_count(&self) -> usize {
        self.tokens.len() - self.unk - 1
    }

    /// One token per line.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// `tokenize_turns`: words of each turn, then the turn's role token.
pub fn tokenize_turns(turns: &[Turn], vocab: &Vocabulary) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for turn in turns {
        out.extend(turn.words.iter().map(|w| vocab.word_id(w)));
        let role = vocab
            .role_id(&turn.role)
            .ok_or_else(|| Error::usage(format!("role `{}` not in vocabulary", turn.role)))?;
        out.push(role);
    }
    Ok(out)
}

/// Role-free targets for an ASR-only model.
pub fn tokenize_words(turns: &[Turn], vocab: &Vocabulary) -> Vec<usize> {
    turns
        .iter()
        .flat_map(|t| t.words.iter().map(|w| vocab.word_id(w)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoratedWord {
    pub word: String,
    pub role: Role,
    /// `[start, end)` in input frames.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DecoratedTranscript {
    pub words: Vec<DecoratedWord>,
}

impl DecoratedTranscript {
    pub fn from_turns(turns: &[Turn]) -> Self {
        Self {
            words: turns
                .iter()
                .flat_map(|t| {
                    t.words.iter().map(|w| DecoratedWord {
                        word: w.clone(),
                        role: t.role.clone(),
                        span: None,
                    })
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word_strings(&self) -> Vec<&str> {
        self.words.iter().map(|w| w.word.as_str()).collect()
    }

    /// Checks that spans, where present, are ordered and non-overlapping.
    pub fn validate_spans(&self) -> Result<()> {
        let mut last_end = 0;
        for (i, w) in self.words.iter().enumerate() {
            if let Some((s, e)) = w.span {
                if s > e || s < last_end {
                    return Err(Error::usage(format!("word {i} span [{s},{e}) is out of order")));
                }
                last_end = e;
            }
        }
        Ok(())
    }

    /// Applies `f` to every role.
    pub fn map_roles(&self, mut f: impl FnMut(&Role) -> Role) -> Self {
        Self {
            words: self
                .words
                .iter()
                .map(|w| DecoratedWord {
                    role: f(&w.role),
                    ..w.clone()
                })
                .collect(),
        }
    }
}

/// `parse_decorated`: each word takes the role of the next role token;
/// trailing words take the last seen role, or unknown.
pub fn parse_decorated(tokens: &[usize], vocab: &Vocabulary) -> Result<DecoratedTranscript> {
    parse_with_spans(tokens, None, vocab)
}

/// As [`parse_decorated`], attaching frame spans derived from emission
/// indices. A word emitted at encoder step `e` covers `[e·R, (e+1)·R)`;
/// several words emitted at the same step share that span in equal parts.
pub fn parse_decorated_timed(
    tokens: &[usize],
    emissions: &[usize],
    reduction: usize,
    vocab: &Vocabulary,
) -> Result<DecoratedTranscript> {
    if emissions.len() != tokens.len() {
        return Err(Error::usage(format!(
            "{} tokens but {} emission indices",
            tokens.len(),
            emissions.len()
        )));
    }
    if emissions.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::usage("emission indices must be non-decreasing"));
    }
    parse_with_spans(tokens, Some((emissions, reduction)), vocab)
}

fn parse_with_spans(
    tokens: &[usize],
    timing: Option<(&[usize], usize)>,
    vocab: &Vocabulary,
) -> Result<DecoratedTranscript> {
    let mut words: Vec<DecoratedWord> = Vec::new();
    let mut word_frames = Vec::new();
    let mut pending = 0;
    let mut last_role: Option<Role> = None;
    for (i, &id) in tokens.iter().enumerate() {
        if id == BLANK {
            return Err(Error::usage(format!("blank at position {i} of a decoded stream")));
        }
        let token = vocab
            .token(id)
            .ok_or_else(|| Error::usage(format!("token id {id} outside vocabulary")))?;
        if let Some(role) = vocab.role_of(id) {
            for w in &mut words[pending..] {
                w.role = role.clone();
            }
            pending = words.len();
            last_role = Some(role.clone());
        } else {
            words.push(DecoratedWord {
                word: token.to_string(),
                role: Role::unknown(),
                span: None,
            });
            if let Some((em, _)) = timing {
                word_frames.push(em[i]);
            }
        }
    }
    let tail = last_role.unwrap_or_else(Role::unknown);
    for w in &mut words[pending..] {
        w.role = tail.clone();
    }
    if let Some((_, r)) = timing {
        let mut i = 0;
        while i < words.len() {
            let e = word_frames[i];
            let n = word_frames[i..].iter().take_while(|&&x| x == e).count();
            for k in 0..n {
                let start = e * r + k * r / n;
                let end = e * r + (k + 1) * r / n;
                words[i + k].span = Some((start, end));
            }
            i += n;
        }
    }
    Ok(DecoratedTranscript { words })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fig_turns() -> Vec<Turn> {
        vec![
            Turn::new(Role::patient(), "hello dr jekyll"),
            Turn::new(Role::physician(), "hello mr hyde what brings you here today"),
            Turn::new(Role::patient(), "i am struggling again with my bipolar disorder"),
        ]
    }

    fn fig_vocab() -> Vocabulary {
        build_vocab(&fig_turns(), &default_roles(), 100).unwrap()
    }

    #[test]
    fn reserved_layout() {
        let v = fig_vocab();
        assert_eq!(v.token(0), Some(BLANK_TOKEN));
        assert_eq!(v.id("<spk:dr>"), Some(1));
        assert_eq!(v.id("<spk:pt>"), Some(2));
        assert_eq!(v.unk_id(), 3);
        // "hello" is the only repeated word
        assert_eq!(v.token(4), Some("hello"));
        assert_eq!(v.token(5), Some("again"));
        assert_eq!(v.word_count(), 18);
    }

    #[test]
    fn frequency_then_alphabetical() {
        let turns = vec![Turn::new(Role::physician(), "b a c b a")];
        let v = build_vocab(&turns, &default_roles(), 2).unwrap();
        assert_eq!(&v.tokens()[4..], ["a", "b"]);
    }

    #[test]
    fn role_collision_rejected() {
        let turns = vec![Turn::new(Role::physician(), "<spk:dr> x")];
        assert!(matches!(
            build_vocab(&turns, &default_roles(), 10),
            Err(Error::Usage(_))
        ));
        assert!(build_vocab(&[], &default_roles(), 10).is_err());
    }

    #[test]
    fn figure_stream() {
        let v = fig_vocab();
        let ids = tokenize_turns(&fig_turns(), &v).unwrap();
        let text: Vec<&str> = ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(
            text.join(" "),
            "hello dr jekyll <spk:pt> hello mr hyde what brings you here today <spk:dr> \
             i am struggling again with my bipolar disorder <spk:pt>"
        );
        let parsed = parse_decorated(&ids, &v).unwrap();
        assert_eq!(parsed, DecoratedTranscript::from_turns(&fig_turns()));
        assert_eq!(parsed.words[1].word, "dr");
        assert_eq!(parsed.words[1].role, Role::patient());
        assert_eq!(parsed.words[3].role, Role::physician());
    }

    #[test]
    fn empty_and_oov() {
        let v = fig_vocab();
        assert!(tokenize_turns(&[], &v).unwrap().is_empty());
        assert!(parse_decorated(&[], &v).unwrap().is_empty());
        let ids = tokenize_turns(&[Turn::new(Role::physician(), "hello zebra")], &v).unwrap();
        assert_eq!(ids, vec![4, v.unk_id(), 1]);
        let ids = tokenize_turns(&[Turn::new(Role::physician(), "")], &v).unwrap();
        assert_eq!(ids, vec![1]);
        assert!(tokenize_turns(&[Turn::new(Role::new("nurse"), "x")], &v).is_err());
    }

    #[test]
    fn trailing_words_inherit_last_role() {
        let v = fig_vocab();
        let a = v.id("hello").unwrap();
        let b = v.id("today").unwrap();
        let t = parse_decorated(&[a, 1, b], &v).unwrap();
        assert_eq!(t.words[0].role, Role::physician());
        assert_eq!(t.words[1].role, Role::physician());
        let t = parse_decorated(&[a, b], &v).unwrap();
        assert!(t.words.iter().all(|w| w.role.is_unknown()));
        assert!(parse_decorated(&[a, 0], &v).is_err());
    }

    #[test]
    fn timed_spans() {
        let v = fig_vocab();
        let a = v.id("hello").unwrap();
        let t = parse_decorated_timed(&[a, a, 2, a], &[1, 1, 1, 3], 4, &v).unwrap();
        let spans: Vec<_> = t.words.iter().map(|w| w.span.unwrap()).collect();
        assert_eq!(spans, vec![(4, 6), (6, 8), (12, 16)]);
        t.validate_spans().unwrap();
        assert!(parse_decorated_timed(&[a, a], &[2, 1], 4, &v).is_err());
    }

    #[test]
    fn file_round_trip() {
        let v = fig_vocab();
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
        assert!(Vocabulary::from_text("a\n<unk>\n").is_err());
    }

    proptest! {
        #[test]
        fn round_trip(turns in proptest::collection::vec(
            (0usize..2, proptest::collection::vec(0usize..6, 1..5)), 0..6)
        ) {
            let words = ["a", "b", "c", "d", "e", "f"];
            let roles = default_roles();
            let turns: Vec<Turn> = turns
                .into_iter()
                .map(|(r, ws)| Turn {
                    role: roles[r].clone(),
                    words: ws.into_iter().map(|w| words[w].to_string()).collect(),
                    span: None,
                })
                .collect();
            let all = vec![Turn::new(Role::physician(), "a b c d e f")];
            let v = build_vocab(&all, &roles, 10).unwrap();
            let ids = tokenize_turns(&turns, &v).unwrap();
            prop_assert!(!ids.contains(&BLANK));
            prop_assert_eq!(ids.iter().filter(|&&i| v.role_of(i).is_some()).count(), turns.len());
            prop_assert_eq!(parse_decorated(&ids, &v).unwrap(), DecoratedTranscript::from_turns(&turns));
        }
    }
}
