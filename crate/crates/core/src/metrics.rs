//! Word error rate and word diarization error rate.
//!
//! WDER is `(S_IS + C_IS) / (S + C)`: among substituted (S) and correct (C)
//! words of the word-level alignment, the fraction whose speaker role
//! differs from the reference. Deleted and inserted words are excluded.

use serde::{Deserialize, Serialize};

use crate::vocab::DecoratedTranscript;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EditOp {
    Match { reference: usize, hypothesis: usize },
    Sub { reference: usize, hypothesis: usize },
    Del { reference: usize },
    Ins { hypothesis: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WordAlignment {
    pub ops: Vec<EditOp>,
}

impl WordAlignment {
    /// Number of non-match operations.
    pub fn cost(&self) -> usize {
        self.ops
            .iter()
            .filter(|op| !matches!(op, EditOp::Match { .. }))
            .count()
    }

    pub fn counts(&self) -> EditCounts {
        let mut c = EditCounts::default();
        for op in &self.ops {
            match op {
                EditOp::Match { .. } => c.matches += 1,
                EditOp::Sub { .. } => c.substitutions += 1,
                EditOp::Del { .. } => c.deletions += 1,
                EditOp::Ins { .. } => c.insertions += 1,
            }
        }
        c
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub matches: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

/// `align_words`: a minimal-edit alignment. Ties are resolved during the
/// backtrace (which runs from the end) by preferring match, then
/// substitution, insertion and deletion.
pub fn align_words<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> WordAlignment {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let up = d[(i - 1) * w + j] + 1;
            let left = d[i * w + j - 1] + 1;
            d[i * w + j] = diag.min(up).min(left);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            let diag = d[(i - 1) * w + j - 1];
            if same && diag == here {
                ops.push(EditOp::Match {
                    reference: i - 1,
                    hypothesis: j - 1,
                });
                i -= 1;
                j -= 1;
                continue;
            }
            if !same && diag + 1 == here {
                ops.push(EditOp::Sub {
                    reference: i - 1,
                    hypothesis: j - 1,
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i * w + j - 1] + 1 == here {
            ops.push(EditOp::Ins { hypothesis: j - 1 });
            j -= 1;
        } else {
            ops.push(EditOp::Del { reference: i - 1 });
            i -= 1;
        }
    }
    ops.reverse();
    WordAlignment { ops }
}

/// Error rates relative to the reference length; `None` when undefined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WerRates {
    pub wer: Option<f64>,
    pub del: Option<f64>,
    pub ins: Option<f64>,
    pub sub: Option<f64>,
}

/// `wer`: `(D + I + S) / N`. An empty reference gives 0 if the hypothesis
/// is also empty and undefined otherwise.
pub fn wer(alignment: &WordAlignment, ref_len: usize) -> WerRates {
    let c = alignment.counts();
    rates(c.deletions, c.insertions, c.substitutions, ref_len)
}

fn rates(del: usize, ins: usize, sub: usize, n: usize) -> WerRates {
    if n == 0 {
        let v = if del + ins + sub == 0 { Some(0.0) } else { None };
        return WerRates {
            wer: v,
            del: v,
            ins: v,
            sub: v,
        };
    }
    let r = |x: usize| Some(x as f64 / n as f64);
    WerRates {
        wer: r(del + ins + sub),
        del: r(del),
        ins: r(ins),
        sub: r(sub),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WderCounts {
    pub s_is: usize,
    pub c_is: usize,
    pub s: usize,
    pub c: usize,
}

impl WderCounts {
    pub fn wder(&self) -> Option<f64> {
        let denom = self.s + self.c;
        (denom > 0).then(|| (self.s_is + self.c_is) as f64 / denom as f64)
    }

    pub fn errors(&self) -> usize {
        self.s_is + self.c_is
    }
}

/// Role errors over an alignment computed on word strings only.
pub fn wder_counts(reference: &DecoratedTranscript, hypothesis: &DecoratedTranscript, alignment: &WordAlignment) -> WderCounts {
    let mut k = WderCounts::default();
    for op in &alignment.ops {
        match *op {
            EditOp::Match {
                reference: i,
                hypothesis: j,
            } => {
                k.c += 1;
                k.c_is += usize::from(reference.words[i].role != hypothesis.words[j].role);
            }
            EditOp::Sub {
                reference: i,
                hypothesis: j,
            } => {
                k.s += 1;
                k.s_is += usize::from(reference.words[i].role != hypothesis.words[j].role);
            }
            _ => {}
        }
    }
    k
}

/// `wder`: counts and ratio (`None` when `S + C = 0`).
pub fn wder(reference: &DecoratedTranscript, hypothesis: &DecoratedTranscript) -> (Option<f64>, WderCounts) {
    let al = align_words(&reference.word_strings(), &hypothesis.word_strings());
    let k = wder_counts(reference, hypothesis, &al);
    (k.wder(), k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversationScore {
    pub conversation_id: String,
    pub wder: Option<f64>,
    pub wer: Option<f64>,
}

/// Corpus-level scores; counts are pooled across conversations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub wer: Option<f64>,
    pub del: Option<f64>,
    pub ins: Option<f64>,
    pub sub: Option<f64>,
    pub wder: Option<f64>,
    pub s_is: usize,
    pub c_is: usize,
    pub s: usize,
    pub c: usize,
    pub per_conversation: Vec<ConversationScore>,
}

/// Scores `(id, reference, hypothesis)` triples in the given order.
pub fn score_conversations<'a>(
    items: impl IntoIterator<Item = (&'a str, &'a DecoratedTranscript, &'a DecoratedTranscript)>,
) -> ScoreReport {
    let mut edits = EditCounts::default();
    let mut ref_words = 0;
    let mut k = WderCounts::default();
    let mut per_conversation = Vec::new();
    for (id, r, h) in items {
        let al = align_words(&r.word_strings(), &h.word_strings());
        let e = al.counts();
        let kc = wder_counts(r, h, &al);
        per_conversation.push(ConversationScore {
            conversation_id: id.to_string(),
            wder: kc.wder(),
            wer: wer(&al, r.len()).wer,
        });
        edits.deletions += e.deletions;
        edits.insertions += e.insertions;
        edits.substitutions += e.substitutions;
        ref_words += r.len();
        k.s_is += kc.s_is;
        k.c_is += kc.c_is;
        k.s += kc.s;
        k.c += kc.c;
    }
    let r = rates(edits.deletions, edits.insertions, edits.substitutions, ref_words);
    ScoreReport {
        wer: r.wer,
        del: r.del,
        ins: r.ins,
        sub: r.sub,
        wder: k.wder(),
        s_is: k.s_is,
        c_is: k.c_is,
        s: k.s,
        c: k.c,
        per_conversation,
    }
}


#[cfg(test)]
mod tests {
    use super::oracle::*;
    use super::*;
    use crate::vocab::{DecoratedWord, Role};
    use proptest::prelude::*;

    fn t(pairs: &[(&str, &str)]) -> DecoratedTranscript {
        DecoratedTranscript {
            words: pairs
                .iter()
                .map(|(w, r)| DecoratedWord {
                    word: w.to_string(),
                    role: Role::new(*r),
                    span: None,
                })
                .collect(),
        }
    }

    #[test]
    fn identical_sequences() {
        let al = align_words(&["a", "b", "c"], &["a", "b", "c"]);
        assert_eq!(al.counts().matches, 3);
        assert_eq!(wer(&al, 3).wer, Some(0.0));
    }

    #[test]
    fn single_deletion() {
        let al = align_words(&["a", "b", "c"], &["a", "c"]);
        assert_eq!(
            al.ops,
            vec![
                EditOp::Match {
                    reference: 0,
                    hypothesis: 0
                },
                EditOp::Del { reference: 1 },
                EditOp::Match {
                    reference: 2,
                    hypothesis: 1
                },
            ]
        );
        let r = wer(&al, 3);
        assert!((r.wer.unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.del.unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!((r.ins, r.sub), (Some(0.0), Some(0.0)));
    }

    #[test]
    fn empty_reference() {
        let al = align_words::<&str>(&[], &["x"]);
        assert_eq!(al.ops, vec![EditOp::Ins { hypothesis: 0 }]);
        assert_eq!(wer(&al, 0).wer, None);
        assert_eq!(wer(&align_words::<&str>(&[], &[]), 0).wer, Some(0.0));
    }

    #[test]
    fn hand_wder_case() {
        let r = t(&[("hello", "dr"), ("how", "dr"), ("are", "dr"), ("you", "pt")]);
        let h = t(&[("hello", "pt"), ("who", "dr"), ("are", "dr"), ("you", "pt")]);
        let (w, k) = wder(&r, &h);
        assert_eq!(
            k,
            WderCounts {
                s_is: 0,
                c_is: 1,
                s: 1,
                c: 3
            }
        );
        assert_eq!(w, Some(0.25));
        assert_eq!(wder(&r, &r).0, Some(0.0));
    }

    #[test]
    fn all_roles_flipped() {
        let r = t(&[("a", "dr"), ("b", "pt"), ("c", "dr")]);
        let h = r.map_roles(|x| if x.name() == "dr" { Role::patient() } else { Role::physician() });
        assert_eq!(wder(&r, &h).0, Some(1.0));
    }

    #[test]
    fn undefined_wder() {
        let r = t(&[]);
        let h = t(&[("a", "dr")]);
        assert_eq!(wder(&r, &h).0, None);
        let report = score_conversations([("c0", &r, &h)]);
        let json = serde_json::to_value(&report).unwrap();
        assert!(json["wder"].is_null());
        assert!(json["wer"].is_null());
    }

    #[test]
    fn report_pools_counts() {
        let r1 = t(&[("a", "dr"), ("b", "dr")]);
        let h1 = t(&[("a", "pt"), ("b", "dr")]);
        let r2 = t(&[("c", "pt"), ("d", "pt")]);
        let h2 = t(&[("c", "pt")]);
        let rep = score_conversations([("x", &r1, &h1), ("y", &r2, &h2)]);
        assert_eq!(rep.per_conversation.len(), 2);
        assert_eq!(rep.wer, Some(0.25));
        assert_eq!(rep.del, Some(0.25));
        assert_eq!(rep.wder, Some(1.0 / 3.0));
        assert_eq!(rep.per_conversation[0].wder, Some(0.5));
        assert_eq!(rep.per_conversation[1].wer, Some(0.5));
        let json = serde_json::to_string(&rep).unwrap();
        for key in ["wer", "del", "ins", "sub", "wder", "s_is", "c_is", "\"s\"", "\"c\"", "per_conversation"] {
            assert!(json.contains(key), "{key}");
        }
    }

    fn transcript() -> impl Strategy<Value = DecoratedTranscript> {
        proptest::collection::vec((0usize..4, 0usize..2), 0..=8).prop_map(|v| DecoratedTranscript {
            words: v
                .into_iter()
                .map(|(w, r)| DecoratedWord {
                    word: ["a", "b", "c", "d"][w].to_string(),
                    role: [Role::physician(), Role::patient()][r].clone(),
                    span: None,
                })
                .collect(),
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matches_brute_force(r in transcript(), h in transcript()) {
            let rw = r.word_strings();
            let hw = h.word_strings();
            let al = align_words(&rw, &hw);
            prop_assert_eq!(&al, &brute_force_align(&rw, &hw));
            prop_assert_eq!(wder(&r, &h), brute_force_wder(&r, &h));
            let k = wder(&r, &h).1;
            prop_assert!(k.errors() <= k.s + k.c);
        }

        #[test]
        fn relabel_invariance(r in transcript(), h in transcript()) {
            let flip = |x: &Role| if x.name() == "dr" { Role::patient() } else { Role::physician() };
            prop_assert_eq!(wder(&r, &h), wder(&r.map_roles(flip), &h.map_roles(flip)));
        }

        #[test]
        fn alignment_is_monotone_and_minimal(r in transcript(), h in transcript()) {
            let rw = r.word_strings();
            let hw = h.word_strings();
            let al = align_words(&rw, &hw);
            let (mut ri, mut hi) = (0, 0);
            for op in &al.ops {
                match *op {
                    EditOp::Match { reference, hypothesis } | EditOp::Sub { reference, hypothesis } => {
                        prop_assert_eq!((reference, hypothesis), (ri, hi));
                        ri += 1;
                        hi += 1;
                    }
                    EditOp::Del { reference } => { prop_assert_eq!(reference, ri); ri += 1; }
                    EditOp::Ins { hypothesis } => { prop_assert_eq!(hypothesis, hi); hi += 1; }
                }
            }
            prop_assert_eq!((ri, hi), (rw.len(), hw.len()));
            prop_assert_eq!(al.cost(), brute_force_align(&rw, &hw).cost());
        }
    }
}
