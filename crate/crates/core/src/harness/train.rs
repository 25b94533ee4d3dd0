use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, AnyModel, Checkpoint, Model, ModelConfig, ParamGrads, Precision};
use crate::numerics::{Matrix, Real};
use crate::optim::{clip_global_norm, Adam, AdamConfig};
use crate::vocab::Vocabulary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub learning_rate: f64,
    /// Linear warmup from 0 over this many steps.
    pub warmup_steps: usize,
    /// Final learning rate as a fraction of the peak, reached by linear decay
    /// at `max_steps`. 1.0 keeps the rate constant after warmup.
    pub final_lr_fraction: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_interval: usize,
    /// Dev utterances scored at each evaluation (0 = all).
    pub dev_loss_utterances: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub checkpoint_dir: Option<PathBuf>,
    pub precision: Precision,
    /// Worker threads for per-example gradients; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Train on role-decorated targets; `false` gives a plain recognizer.
    pub with_roles: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            learning_rate: 1e-3,
            warmup_steps: 100,
            final_lr_fraction: 1.0,
            adam: AdamConfig::default(),
            batch_size: 16,
            max_steps: 1000,
            eval_interval: 100,
            dev_loss_utterances: 0,
            clip_norm: 5.0,
            seed: 0,
            checkpoint_dir: None,
            precision: Precision::F64,
            threads: None,
            with_roles: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::Config("final_lr_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Learning rate used at 1-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let warm = if self.warmup_steps > 0 {
            (step as f64 / self.warmup_steps as f64).min(1.0)
        } else {
            1.0
        };
        let decay = if step > self.warmup_steps && self.max_steps > self.warmup_steps {
            let p = (step - self.warmup_steps) as f64 / (self.max_steps - self.warmup_steps) as f64;
            1.0 - (1.0 - self.final_lr_fraction) * p.min(1.0)
        } else {
            1.0
        };
        self.learning_rate * warm * decay
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    /// Mean loss over the step's batch.
    pub train_loss: f64,
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: AnyModel,
    pub curve: Vec<LossPoint>,
    pub checkpoint: Option<PathBuf>,
}

/// Mean of a smoothing window over the train loss curve.
pub fn smoothed_losses(curve: &[LossPoint], window: usize) -> Vec<f64> {
    curve
        .chunks(window.max(1))
        .map(|c| c.iter().map(|p| p.train_loss).sum::<f64>() / c.len() as f64)
        .collect()
}

struct Example {
    id: String,
    index: usize,
    target: Vec<usize>,
}

fn examples(utts: &[Utterance], vocab: &Vocabulary, with_roles: bool) -> Result<Vec<Example>> {
    utts.iter()
        .enumerate()
        .map(|(i, u)| {
            Ok(Example {
                id: u.id(),
                index: i,
                target: u.targets(vocab, with_roles)?,
            })
        })
        .collect()
}

fn example_loss_grad<F: Real>(model: &Model<F>, utts: &[Utterance], ex: &Example) -> Result<(f64, ParamGrads<F>)> {
    let (loss, grads) = model.loss_and_gradients(&utts[ex.index].frames_as::<F>(), &ex.target)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss} on utterance {}", ex.id)));
    }
    Ok((loss, grads))
}

fn mean_loss<F: Real>(model: &Model<F>, utts: &[Utterance], exs: &[Example]) -> Result<f64> {
    let losses: Vec<f64> = exs
        .par_iter()
        .map(|ex| {
            let l = model.loss(&utts[ex.index].frames_as::<F>(), &ex.target)?;
            if !l.is_finite() {
                return Err(Error::NonFinite(format!("dev loss {l} on utterance {}", ex.id)));
            }
            Ok(l)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

fn write_checkpoint(dir: &Path, name: &str, model: &AnyModel, vocab: &Vocabulary) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    save_checkpoint(
        &path,
        &Checkpoint {
            model: model.clone(),
            vocabulary: vocab.tokens().to_vec(),
        },
    )?;
    Ok(path)
}

fn train_typed<F: Real>(
    mut model: Model<F>,
    config: &TrainConfig,
    train: &[Utterance],
    dev: &[Utterance],
    vocab: &Vocabulary,
    wrap: fn(Model<F>) -> AnyModel,
) -> Result<TrainOutcome> {
    let train_ex = examples(train, vocab, config.with_roles)?;
    let mut dev_ex = examples(dev, vocab, config.with_roles)?;
    if config.dev_loss_utterances > 0 {
        dev_ex.truncate(config.dev_loss_utterances);
    }
    let mut opt = Adam::new(config.adam, model.parameters().iter().map(|p| p.value.shape()));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut curve = Vec::with_capacity(config.max_steps);
    let mut last_checkpoint = None;
    for step in 1..=config.max_steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size.min(train_ex.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&train_ex[order[cursor]]);
            cursor += 1;
        }
        let results: Vec<(f64, ParamGrads<F>)> = batch
            .par_iter()
            .map(|ex| example_loss_grad(&model, train, ex))
            .collect::<Result<_>>()?;
        let n = results.len() as f64;
        let mut grads = model.zero_grads();
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += l;
            for (acc, gi) in grads.iter_mut().zip(g) {
                acc.add_assign(gi);
            }
        }
        let inv = F::lit(1.0 / n);
        for g in &mut grads {
            g.scale(inv);
        }
        let norm = clip_global_norm(&mut grads, config.clip_norm);
        opt.step(model.parameters_mut().iter_mut().map(|p| &mut p.value), &grads, config.lr_at(step));
        if !model.parameters().iter().all(|p| p.value.all_finite()) {
            return Err(Error::NonFinite(format!("parameters after step {step}")));
        }
        let mut point = LossPoint {
            step,
            train_loss: loss / n,
            grad_norm: norm,
            dev_loss: None,
        };
        debug!("step {step} loss {:.4} |g| {norm:.3}", point.train_loss);
        let at_eval = config.eval_interval > 0 && step % config.eval_interval == 0;
        if at_eval || step == config.max_steps {
            if !dev_ex.is_empty() {
                point.dev_loss = Some(mean_loss(&model, dev, &dev_ex)?);
            }
            info!(
                "step {step}: train loss {:.4}, dev loss {}",
                point.train_loss,
                point.dev_loss.map_or("-".into(), |d| format!("{d:.4}"))
            );
            if let Some(dir) = &config.checkpoint_dir {
                let name = if step == config.max_steps { "final.ckpt" } else { "latest.ckpt" };
                last_checkpoint = Some(write_checkpoint(dir, name, &wrap(model.clone()), vocab)?);
            }
        }
        curve.push(point);
    }
    Ok(TrainOutcome {
        model: wrap(model),
        curve,
        checkpoint: last_checkpoint,
    })
}

/// `train`: minimizes the mean per-utterance transducer loss with Adam.
/// Per-example gradients may be computed concurrently but are summed in
/// batch order, so results do not depend on the thread count.
pub fn train(config: &TrainConfig, train: &[Utterance], dev: &[Utterance], vocab: &Vocabulary) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::usage("training split is empty"));
    }
    if config.model.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "model.vocab_size is {} but the vocabulary has {} tokens",
            config.model.vocab_size,
            vocab.len()
        )));
    }
    let run = || match config.precision {
        Precision::F32 => train_typed(Model::<f32>::init(config.model.clone(), config.seed)?, config, train, dev, vocab, AnyModel::F32),
        Precision::F64 => train_typed(Model::<f64>::init(config.model.clone(), config.seed)?, config, train, dev, vocab, AnyModel::F64),
    };
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

/// Parameters as raw matrices, for comparisons in tests.
pub fn parameter_values(model: &AnyModel) -> Vec<Matrix<f64>> {
    model.to_f64().parameters().iter().map(|p| p.value.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        let c = TrainConfig {
            warmup_steps: 10,
            max_steps: 110,
            final_lr_fraction: 0.1,
            ..TrainConfig::default()
        };
        assert!((c.lr_at(5) - 5e-4).abs() < 1e-15);
        assert!((c.lr_at(10) - 1e-3).abs() < 1e-15);
        assert!((c.lr_at(110) - 1e-4).abs() < 1e-15);
        let flat = TrainConfig::default();
        assert_eq!(flat.lr_at(900), 1e-3);
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = TrainConfig::default();
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }
}
