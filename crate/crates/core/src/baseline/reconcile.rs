use std::collections::BTreeMap;

use super::cluster::LabeledSegment;
use crate::metrics::{align_words, EditOp};
use crate::vocab::{DecoratedTranscript, Role};

fn overlap(a: (usize, usize), b: (usize, usize)) -> usize {
    a.1.min(b.1).saturating_sub(a.0.max(b.0))
}

fn gap(a: (usize, usize), b: (usize, usize)) -> usize {
    b.0.saturating_sub(a.1).max(a.0.saturating_sub(b.1))
}

/// `reconcile`: each word takes the generic label of the segment it overlaps
/// most. Ties go to the earlier segment; a word touching no segment takes
/// the nearest one. Words without a span, or any word when there are no
/// segments, are labeled unknown.
pub fn reconcile(words: &DecoratedTranscript, segments: &[LabeledSegment]) -> DecoratedTranscript {
    let mut segs = segments.to_vec();
    segs.sort_by_key(|s| (s.start, s.end));
    let mut out = words.clone();
    for w in &mut out.words {
        w.role = match (w.span, segs.is_empty()) {
            (Some(span), false) => {
                let mut best = 0;
                let mut best_ov = 0;
                for (i, s) in segs.iter().enumerate() {
                    let ov = overlap(span, (s.start, s.end));
                    if ov > best_ov {
                        best_ov = ov;
                        best = i;
                    }
                }
                if best_ov == 0 {
                    let mut best_gap = usize::MAX;
                    for (i, s) in segs.iter().enumerate() {
                        let d = gap(span, (s.start, s.end));
                        if d < best_gap {
                            best_gap = d;
                            best = i;
                        }
                    }
                }
                Role::generic(segs[best].label)
            }
            _ => Role::unknown(),
        };
    }
    out
}

/// Distinct non-unknown hypothesis roles, generic labels in numeric order.
fn hypothesis_labels(hyp: &DecoratedTranscript) -> Vec<Role> {
    let mut labels: Vec<Role> = hyp.words.iter().filter(|w| !w.role.is_unknown()).map(|w| w.role.clone()).collect();
    labels.sort_by_key(|r| (r.name().parse::<usize>().unwrap_or(usize::MAX), r.name().to_string()));
    labels.dedup();
    labels
}

/// Next injective index tuple in lexicographic order.
fn next_injection(cur: &mut [usize], n: usize) -> bool {
    let k = cur.len();
    for pos in (0..k).rev() {
        let mut v = cur[pos] + 1;
        while v < n && cur[..pos].contains(&v) {
            v += 1;
        }
        if v < n {
            cur[pos] = v;
            let mut next = 0;
            for slot in pos + 1..k {
                while cur[..slot].contains(&next) {
                    next += 1;
                }
                cur[slot] = next;
                next += 1;
            }
            return true;
        }
    }
    false
}

/// `map_labels_to_roles`: the label→role map with the fewest role errors
/// against `reference`. Among injective maps the first in lexicographic
/// order wins ties, so the identity is preferred. Labels beyond the number
/// of roles each take their best role independently. Unknown stays unknown.
pub fn map_labels_to_roles(hyp: &DecoratedTranscript, reference: &DecoratedTranscript, roles: &[Role]) -> DecoratedTranscript {
    let labels = hypothesis_labels(hyp);
    if labels.is_empty() || roles.is_empty() {
        return hyp.clone();
    }
    let index: BTreeMap<&Role, usize> = labels.iter().enumerate().map(|(i, r)| (r, i)).collect();
    // cost[l][r]: aligned words labeled l whose reference role is not r
    let mut cost = vec![vec![0usize; roles.len()]; labels.len()];
    let al = align_words(&reference.word_strings(), &hyp.word_strings());
    for op in &al.ops {
        let (i, j) = match *op {
            EditOp::Match { reference, hypothesis } | EditOp::Sub { reference, hypothesis } => (reference, hypothesis),
            _ => continue,
        };
        if let Some(&l) = index.get(&hyp.words[j].role) {
            for (r, role) in roles.iter().enumerate() {
                cost[l][r] += usize::from(reference.words[i].role != *role);
            }
        }
    }
    let k = labels.len().min(roles.len());
    let mut cur: Vec<usize> = (0..k).collect();
    let mut best = cur.clone();
    let mut best_cost = usize::MAX;
    loop {
        let c: usize = cur.iter().enumerate().map(|(l, &r)| cost[l][r]).sum();
        if c < best_cost {
            best_cost = c;
            best.clone_from(&cur);
        }
        if !next_injection(&mut cur, roles.len()) {
            break;
        }
    }
    for row in &cost[k..] {
        let r = (0..roles.len()).min_by_key(|&r| row[r]).expect("roles non-empty");
        best.push(r);
    }
    hyp.map_roles(|r| match index.get(r) {
        Some(&l) => roles[best[l]].clone(),
        None => r.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::wder;
    use crate::vocab::DecoratedWord;
    use proptest::prelude::*;

    fn timed(spans: &[(usize, usize)]) -> DecoratedTranscript {
        DecoratedTranscript {
            words: spans
                .iter()
                .enumerate()
                .map(|(i, &s)| DecoratedWord {
                    word: format!("w{i}"),
                    role: Role::unknown(),
                    span: Some(s),
                })
                .collect(),
        }
    }

    fn seg(start: usize, end: usize, label: usize) -> LabeledSegment {
        LabeledSegment { start, end, label }
    }

    #[test]
    fn overlap_rules() {
        let segs = [seg(0, 6, 0), seg(6, 20, 1)];
        let r = reconcile(&timed(&[(0, 10), (1, 11), (8, 9), (25, 30)]), &segs);
        let labels: Vec<&str> = r.words.iter().map(|w| w.role.name()).collect();
        assert_eq!(labels, ["0", "0", "1", "1"]);
        let tie = reconcile(&timed(&[(1, 11)]), &[seg(6, 20, 1), seg(0, 6, 0)]);
        assert_eq!(tie.words[0].role, Role::generic(0));
    }

    #[test]
    fn reconcile_keeps_words_and_spans() {
        let t = timed(&[(0, 3), (3, 9)]);
        let r = reconcile(&t, &[seg(0, 4, 1)]);
        assert_eq!(r.word_strings(), t.word_strings());
        for (a, b) in r.words.iter().zip(&t.words) {
            assert_eq!(a.span, b.span);
        }
        assert!(reconcile(&t, &[]).words.iter().all(|w| w.role.is_unknown()));
    }

    fn transcript(words: &[(&str, Role)]) -> DecoratedTranscript {
        DecoratedTranscript {
            words: words
                .iter()
                .map(|(w, r)| DecoratedWord {
                    word: w.to_string(),
                    role: r.clone(),
                    span: None,
                })
                .collect(),
        }
    }

    #[test]
    fn flip_and_tie() {
        let (dr, pt) = (Role::physician(), Role::patient());
        let (g0, g1) = (Role::generic(0), Role::generic(1));
        let reference = transcript(&[("a", dr.clone()), ("b", dr.clone()), ("c", pt.clone())]);
        let hyp = transcript(&[("a", g1.clone()), ("b", g1.clone()), ("c", g0.clone())]);
        let mapped = map_labels_to_roles(&hyp, &reference, &[dr.clone(), pt.clone()]);
        assert_eq!(mapped, reference);
        let reference = transcript(&[("a", dr.clone()), ("b", pt.clone())]);
        let hyp = transcript(&[("a", g0.clone()), ("b", g0.clone())]);
        let mapped = map_labels_to_roles(&hyp, &reference, &[dr.clone(), pt.clone()]);
        assert!(mapped.words.iter().all(|w| w.role == dr));
    }

    #[test]
    fn surplus_labels_choose_independently() {
        let (dr, pt) = (Role::physician(), Role::patient());
        let reference = transcript(&[("a", dr.clone()), ("b", pt.clone()), ("c", pt.clone())]);
        let hyp = transcript(&[("a", Role::generic(0)), ("b", Role::generic(1)), ("c", Role::generic(2))]);
        let mapped = map_labels_to_roles(&hyp, &reference, &[dr, pt]);
        assert_eq!(mapped, reference);
    }

    #[test]
    fn injections_enumerated_in_order() {
        let mut cur = vec![0, 1];
        let mut all = vec![cur.clone()];
        while next_injection(&mut cur, 3) {
            all.push(cur.clone());
        }
        assert_eq!(all, vec![vec![0, 1], vec![0, 2], vec![1, 0], vec![1, 2], vec![2, 0], vec![2, 1]]);
    }

    fn all_injections(k: usize, n: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for prefix in all_injections(k - 1, n) {
            for v in 0..n {
                if !prefix.contains(&v) {
                    let mut p = prefix.clone();
                    p.push(v);
                    out.push(p);
                }
            }
        }
        out
    }

    fn case() -> impl Strategy<Value = (Vec<(u8, u8)>, Vec<(u8, u8)>, usize)> {
        (
            prop::collection::vec((0u8..3, 0u8..3), 0..8),
            prop::collection::vec((0u8..3, 0u8..4), 0..8),
            2usize..4,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn matches_exhaustive_search((r, h, nroles) in case()) {
            let roles: Vec<Role> = ["dr", "pt", "nurse"].iter().take(nroles).map(|n| Role::new(*n)).collect();
            let reference = transcript(&r.iter().map(|&(w, s)| (["x", "y", "z"][w as usize], roles[s as usize % nroles].clone())).collect::<Vec<_>>());
            let hyp = transcript(&h.iter().map(|&(w, l)| (["x", "y", "z"][w as usize], Role::generic(l as usize))).collect::<Vec<_>>());
            let labels = hypothesis_labels(&hyp);
            prop_assume!(labels.len() <= nroles);
            let mapped = map_labels_to_roles(&hyp, &reference, &roles);
            let got = wder(&reference, &mapped).1.errors();
            let mut best = usize::MAX;
            for m in all_injections(labels.len(), nroles) {
                let cand = hyp.map_roles(|x| roles[m[labels.iter().position(|l| l == x).unwrap()]].clone());
                best = best.min(wder(&reference, &cand).1.errors());
            }
            prop_assert_eq!(got, best);
            prop_assert_eq!(mapped.word_strings(), hyp.word_strings());
        }
    }
}
