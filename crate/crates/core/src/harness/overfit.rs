use serde::{Deserialize, Serialize};

use super::eval::evaluate;
use super::train::{train, LossPoint, TrainConfig};
use crate::corpus::{segment_conversation, Generator, GeneratorConfig, Utterance};
use crate::decoder::{decode_utterance, DecodeMode};
use crate::error::{Error, Result};
use crate::model::{AnyModel, Model, ModelConfig, Precision};
use crate::numerics::Real;
use crate::vocab::{build_vocab, default_roles, parse_decorated, Vocabulary};

/// Memorization check: a small model trained on a handful of segments
/// should drive its loss near zero and decode every segment exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverfitConfig {
    pub generator: GeneratorConfig,
    pub conversation_seed: u64,
    pub utterances: usize,
    pub train: TrainConfig,
    pub max_symbols: usize,
}

impl Default for OverfitConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig {
                max_segment_frames: 80,
                ..GeneratorConfig::compact()
            },
            conversation_seed: 3,
            utterances: 10,
            train: TrainConfig {
                model: ModelConfig {
                    conv_filters: 16,
                    encoder_lstm_units: 24,
                    embedding_dim: 8,
                    pred_lstm_units: 24,
                    pred_output_dim: 24,
                    joint_dim: 32,
                    ..ModelConfig::default()
                },
                learning_rate: 3e-3,
                warmup_steps: 50,
                batch_size: 10,
                max_steps: 2000,
                eval_interval: 500,
                precision: Precision::F32,
                ..TrainConfig::default()
            },
            max_symbols: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverfitReport {
    /// Mean loss at initialization.
    pub initial_loss: f64,
    /// Mean loss of the trained model over the whole set.
    pub final_loss: f64,
    /// Segments whose greedy decode equals the reference.
    pub exact: usize,
    pub total: usize,
    pub wer: Option<f64>,
    pub wder: Option<f64>,
    pub curve: Vec<LossPoint>,
}

/// The first `utterances` segments of one generated conversation and a
/// vocabulary built from them.
pub fn overfit_set(config: &OverfitConfig) -> Result<(Vec<Utterance>, Vocabulary)> {
    let g = Generator::new(config.generator.clone())?;
    let conv = g.conversation("overfit", config.conversation_seed);
    let utts: Vec<Utterance> = segment_conversation(&conv, config.generator.max_segment_frames)?
        .into_iter()
        .take(config.utterances)
        .collect();
    if utts.len() < config.utterances {
        return Err(Error::Config(format!(
            "conversation yields {} segments, {} requested",
            utts.len(),
            config.utterances
        )));
    }
    let vocab = build_vocab(utts.iter().flat_map(|u| &u.turns), &default_roles(), 1000)?;
    Ok((utts, vocab))
}

fn exact_and_loss<F: Real>(model: &Model<F>, utts: &[Utterance], vocab: &Vocabulary, max_symbols: usize) -> Result<(usize, f64)> {
    let mut exact = 0;
    let mut loss = 0.0;
    for u in utts {
        let frames = u.frames_as::<F>();
        let hyp = decode_utterance(model, &frames, DecodeMode::Greedy, max_symbols)?;
        exact += usize::from(parse_decorated(&hyp.tokens, vocab)? == u.reference());
        loss += model.loss(&frames, &u.targets(vocab, true)?)?;
    }
    Ok((exact, loss / utts.len() as f64))
}

pub fn overfit(config: &OverfitConfig) -> Result<OverfitReport> {
    let (utts, vocab) = overfit_set(config)?;
    let mut tc = config.train.clone();
    tc.model.feature_dim = config.generator.feature_dim;
    tc.model.vocab_size = vocab.len();
    tc.with_roles = true;
    let initial = AnyModel::init(tc.model.clone(), tc.seed, tc.precision)?;
    let out = train(&tc, &utts, &[], &vocab)?;
    let ((_, initial_loss), (exact, final_loss)) = match (&initial, &out.model) {
        (AnyModel::F32(a), AnyModel::F32(b)) => (
            exact_and_loss(a, &utts, &vocab, config.max_symbols)?,
            exact_and_loss(b, &utts, &vocab, config.max_symbols)?,
        ),
        (AnyModel::F64(a), AnyModel::F64(b)) => (
            exact_and_loss(a, &utts, &vocab, config.max_symbols)?,
            exact_and_loss(b, &utts, &vocab, config.max_symbols)?,
        ),
        _ => unreachable!("training keeps the precision"),
    };
    let ev = evaluate(&out.model, &vocab, &utts, DecodeMode::Greedy, config.max_symbols)?;
    Ok(OverfitReport {
        initial_loss,
        final_loss,
        exact,
        total: utts.len(),
        wer: ev.report.wer,
        wder: ev.report.wder,
        curve: out.curve,
    })
}
