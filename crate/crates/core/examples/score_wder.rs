//! Scores a hypothesis against a reference: word alignment, WER breakdown and
//! word diarization error rate.
//!
//! ```text
//! cargo run --example score_wder
//! ```

use rnnt_diar::metrics::{align_words, wder, wer};
use rnnt_diar::vocab::{DecoratedTranscript, Role, Turn};

fn transcript(turns: &[(Role, &str)]) -> DecoratedTranscript {
    let turns: Vec<Turn> = turns.iter().map(|(r, t)| Turn::new(r.clone(), t)).collect();
    DecoratedTranscript::from_turns(&turns)
}

fn show(name: &str, reference: &DecoratedTranscript, hypothesis: &DecoratedTranscript) {
    let al = align_words(&reference.word_strings(), &hypothesis.word_strings());
    let rates = wer(&al, reference.len());
    let (rate, counts) = wder(reference, hypothesis);
    println!("{name}");
    println!("  ops  {:?}", al.ops);
    println!("  WER  {:?}  (del {:?} ins {:?} sub {:?})", rates.wer, rates.del, rates.ins, rates.sub);
    println!(
        "  WDER {:?}  (S_IS {} C_IS {} S {} C {})",
        rate, counts.s_is, counts.c_is, counts.s, counts.c
    );
}

fn main() {
    let (dr, pt) = (Role::physician(), Role::patient());
    let reference = transcript(&[(dr.clone(), "any chest pain"), (pt.clone(), "no")]);

    let flipped_and_sub = transcript(&[(dr.clone(), "any"), (pt.clone(), "chest"), (dr.clone(), "pains"), (pt.clone(), "no")]);
    show("one role flip, one substitution", &reference, &flipped_and_sub);

    let all_flipped = transcript(&[(pt.clone(), "any chest pain"), (dr.clone(), "no")]);
    show("every role flipped", &reference, &all_flipped);

    let dropped = transcript(&[(dr, "any pain"), (pt, "no thanks")]);
    show("deletion and insertion", &reference, &dropped);
}
