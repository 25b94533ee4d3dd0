//! Greedy versus beam search. Without arguments a hand-built scorer shows a
//! case where greedy commits to a locally likely label and beam search
//! recovers the more probable sequence. Given a checkpoint and a corpus file
//! it decodes the first few segments both ways.
//!
//! ```text
//! cargo run --release --example beam_search -- [checkpoint corpus.jsonl [width]]
//! ```

use rnnt_diar::corpus::read_corpus;
use rnnt_diar::decoder::{beam_search, greedy_search, ModelScorer, TransducerScorer};
use rnnt_diar::model::{load_checkpoint, AnyModel};
use rnnt_diar::vocab::{parse_decorated, Vocabulary};
use rnnt_diar::Result;

/// Two encoder steps over {blank, a, b}. After `a` the second step is
/// uncertain; after `b` it is confidently blank.
struct Toy;

impl TransducerScorer for Toy {
    type State = Vec<usize>;

    fn time_steps(&self) -> usize {
        2
    }

    fn start(&self) -> Vec<usize> {
        Vec::new()
    }

    fn advance(&self, state: &Vec<usize>, token: usize) -> Result<Vec<usize>> {
        let mut s = state.clone();
        s.push(token);
        Ok(s)
    }

    fn log_probs(&self, t: usize, state: &Vec<usize>) -> Vec<f64> {
        let p: [f64; 3] = match (t, state.as_slice()) {
            (0, []) => [0.1, 0.5, 0.4],
            (_, [.., 1]) if t == 1 => [0.4, 0.3, 0.3],
            (_, [.., 2]) if t == 1 => [0.95, 0.025, 0.025],
            _ => [0.9, 0.05, 0.05],
        };
        p.iter().map(|x| x.ln()).collect()
    }
}

fn names(tokens: &[usize]) -> String {
    tokens.iter().map(|&t| ["_", "a", "b"][t]).collect::<Vec<_>>().join(" ")
}

fn toy() -> anyhow::Result<()> {
    let g = greedy_search(&Toy, 4)?;
    println!("greedy: [{}] log p = {:.4}", names(&g.tokens), g.score);
    for (i, h) in beam_search(&Toy, 4, 4)?.iter().enumerate() {
        println!("beam #{i}: [{}] log p = {:.4}", names(&h.tokens), h.score);
    }
    Ok(())
}

fn words(tokens: &[usize], vocab: &Vocabulary) -> anyhow::Result<String> {
    let t = parse_decorated(tokens, vocab)?;
    Ok(t.words.iter().map(|w| format!("{}/{}", w.word, w.role)).collect::<Vec<_>>().join(" "))
}

fn with_model<F: rnnt_diar::numerics::Real>(
    model: &rnnt_diar::model::Model<F>,
    vocab: &Vocabulary,
    corpus: &str,
    width: usize,
) -> anyhow::Result<()> {
    for u in read_corpus(corpus.as_ref())?.iter().take(3) {
        let scorer = ModelScorer::new(model, &u.frames_as::<F>())?;
        let g = greedy_search(&scorer, 8)?;
        let b = beam_search(&scorer, width, 8)?;
        println!("{}", u.id());
        println!("  ref    {}", u.reference().words.iter().map(|w| format!("{}/{}", w.word, w.role)).collect::<Vec<_>>().join(" "));
        println!("  greedy {:.2}  {}", g.score, words(&g.tokens, vocab)?);
        println!("  beam   {:.2}  {}", b[0].score, words(&b[0].tokens, vocab)?);
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 2 {
        return toy();
    }
    let ck = load_checkpoint(args[0].as_ref())?;
    let vocab = Vocabulary::from_tokens(ck.vocabulary.clone())?;
    let width = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(4);
    match &ck.model {
        AnyModel::F32(m) => with_model(m, &vocab, &args[1], width),
        AnyModel::F64(m) => with_model(m, &vocab, &args[1], width),
    }
}
