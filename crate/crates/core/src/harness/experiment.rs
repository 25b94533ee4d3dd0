use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, run_baseline, BaselineData, DiarizationSource};
use super::train::{train, LossPoint, TrainConfig};
use crate::baseline::BaselineConfig;
use crate::corpus::{derive_seed, read_corpus, segment_conversation, split_by_key, write_corpus, FrameStorage, Generator, GeneratorConfig, Split, Utterance};
use crate::decoder::{write_transcripts, DecodeMode, DEFAULT_MAX_SYMBOLS};
use crate::error::{Error, Result};
use crate::metrics::ScoreReport;
use crate::model::{save_checkpoint, Checkpoint, ModelConfig, Precision};
use crate::vocab::{build_vocab, default_roles, Turn, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub conversations: usize,
    pub dev_physicians: usize,
    pub eval_physicians: usize,
    pub seed: u64,
    pub max_vocab: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            conversations: 300,
            dev_physicians: 3,
            eval_physicians: 4,
            seed: 1,
            max_vocab: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    #[serde(flatten)]
    pub mode: DecodeMode,
    pub max_symbols: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            mode: DecodeMode::Greedy,
            max_symbols: DEFAULT_MAX_SYMBOLS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub data: DataConfig,
    /// Joint model; the role-free recognizer uses the same settings with
    /// roles removed from its targets.
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    pub decode: DecodeConfig,
    /// Run the baseline on reference turns instead of its own diarization.
    pub oracle_diarization: bool,
    /// Read a saved corpus instead of generating one.
    pub corpus_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::compact(),
            data: DataConfig {
                conversations: 360,
                ..DataConfig::default()
            },
            train: TrainConfig {
                model: ModelConfig {
                    conv_filters: 32,
                    encoder_lstm_units: 32,
                    embedding_dim: 16,
                    pred_lstm_units: 32,
                    pred_output_dim: 32,
                    joint_dim: 32,
                    ..ModelConfig::default()
                },
                learning_rate: 3e-3,
                final_lr_fraction: 0.1,
                batch_size: 8,
                max_steps: 6000,
                eval_interval: 500,
                dev_loss_utterances: 32,
                precision: Precision::F32,
                ..TrainConfig::default()
            },
            baseline: BaselineConfig::default(),
            decode: DecodeConfig::default(),
            oracle_diarization: false,
            corpus_dir: None,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// A few-minute end-to-end run.
    pub fn smoke() -> Self {
        let mut c = Self::default();
        c.data.conversations = 40;
        c.data.dev_physicians = 2;
        c.data.eval_physicians = 2;
        c.train.max_steps = 200;
        c.train.batch_size = 8;
        c.train.eval_interval = 100;
        c.train.dev_loss_utterances = 16;
        c
    }

    /// Speaker offsets switched off, so only word choice reveals the role.
    pub fn is_lexical_ablation(&self) -> bool {
        self.generator.offset_scale == 0.0
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Generated, segmented and split corpus with its vocabulary.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub split: Split<Utterance>,
    pub vocab: Vocabulary,
}

/// Generates conversations, segments them, splits by physician and builds
/// the vocabulary from the training part.
pub fn prepare_data(generator: &GeneratorConfig, data: &DataConfig) -> Result<PreparedData> {
    let g = Generator::new(generator.clone())?;
    let convs = g.corpus("conv", data.conversations, data.seed);
    let split = split_by_key(convs, |c| c.physician_id.clone(), data.dev_physicians, data.eval_physicians, derive_seed(data.seed, u64::MAX))?;
    let seg = |cs: Vec<crate::corpus::Conversation>| -> Result<Vec<Utterance>> {
        let parts: Vec<Vec<Utterance>> = cs
            .par_iter()
            .map(|c| segment_conversation(c, generator.max_segment_frames))
            .collect::<Result<_>>()?;
        Ok(parts.into_iter().flatten().collect())
    };
    let split = Split {
        train: seg(split.train)?,
        dev: seg(split.dev)?,
        eval: seg(split.eval)?,
    };
    let turns: Vec<&Turn> = split.train.iter().flat_map(|u| &u.turns).collect();
    let vocab = build_vocab(turns, &default_roles(), data.max_vocab)?;
    Ok(PreparedData { split, vocab })
}

const SPLIT_NAMES: [&str; 3] = ["train", "dev", "eval"];

impl PreparedData {
    /// Writes `train.jsonl`, `dev.jsonl`, `eval.jsonl` and `vocab.txt`.
    pub fn save(&self, dir: &Path, storage: FrameStorage) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.vocab.save(&dir.join("vocab.txt"))?;
        for (name, part) in SPLIT_NAMES.iter().zip([&self.split.train, &self.split.dev, &self.split.eval]) {
            write_corpus(&dir.join(format!("{name}.jsonl")), part, storage)?;
        }
        Ok(())
    }

    /// Reads a directory written by [`PreparedData::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let vocab = Vocabulary::load(&dir.join("vocab.txt"))?;
        let mut parts = SPLIT_NAMES
            .iter()
            .map(|name| read_corpus(&dir.join(format!("{name}.jsonl"))))
            .collect::<Result<Vec<_>>>()?
            .into_iter();
        let mut next = || parts.next().unwrap_or_default();
        Ok(Self {
            split: Split {
                train: next(),
                dev: next(),
                eval: next(),
            },
            vocab,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WderRow {
    pub conversation_id: String,
    pub joint: Option<f64>,
    pub baseline: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub train_utterances: usize,
    pub dev_utterances: usize,
    pub eval_utterances: usize,
    pub vocab_size: usize,
    pub eval_conversations: Vec<String>,
}

/// Everything in `report.json`; wall-clock times live in [`Timing`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub joint: ScoreReport,
    pub baseline: ScoreReport,
    pub lexical_ablation: bool,
    pub baseline_vad_threshold: f64,
    pub baseline_change_threshold: f64,
    pub baseline_tuning: Vec<(f64, Option<f64>)>,
    pub joint_loss_curve: Vec<LossPoint>,
    pub asr_loss_curve: Vec<LossPoint>,
    pub corpus: CorpusSummary,
    pub wder_table: Vec<WderRow>,
    /// The run's configuration without its output location.
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stages: Vec<(String, f64)>,
    pub total_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub timing: Timing,
}

struct Clock {
    start: Instant,
    lap: Instant,
    timing: Timing,
}

impl Clock {
    fn new() -> Self {
        let now = Instant::now();
        Self {
            start: now,
            lap: now,
            timing: Timing::default(),
        }
    }

    fn stage(&mut self, name: &str) {
        let now = Instant::now();
        let secs = (now - self.lap).as_secs_f64();
        info!("stage {name} took {secs:.1}s");
        self.timing.stages.push((name.to_string(), secs));
        self.lap = now;
    }

    fn finish(mut self) -> Timing {
        self.timing.total_seconds = self.start.elapsed().as_secs_f64();
        self.timing
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `run_experiment`: corpus, joint and role-free training, both
/// evaluations on the same eval conversations.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let mut clock = Clock::new();
    let data = match &config.corpus_dir {
        Some(dir) => PreparedData::load(dir),
        None => prepare_data(&config.generator, &config.data),
    }
    .map_err(|e| e.in_stage("gen-data"))?;
    run_experiment_on(config, data, &mut clock).map(|report| ExperimentOutcome {
        report,
        timing: clock.finish(),
    })
}

fn run_experiment_on(config: &ExperimentConfig, data: PreparedData, clock: &mut Clock) -> Result<ExperimentReport> {
    let out = config.output_dir.as_deref();
    if let Some(dir) = out {
        data.save(&dir.join("corpus"), FrameStorage::Blob).map_err(|e| e.in_stage("gen-data"))?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        std::fs::write(dir.join("config.toml"), config.to_toml()?).map_err(|e| Error::io(dir, e))?;
    }
    clock.stage("gen-data");
    let PreparedData { split, vocab } = data;

    let mut joint_cfg = config.train.clone();
    joint_cfg.model.vocab_size = vocab.len();
    joint_cfg.with_roles = true;
    joint_cfg.checkpoint_dir = out.map(|d| d.join("joint"));
    let joint = train(&joint_cfg, &split.train, &split.dev, &vocab).map_err(|e| e.in_stage("train-joint"))?;
    clock.stage("train-joint");

    let mut asr_cfg = joint_cfg.clone();
    asr_cfg.with_roles = false;
    asr_cfg.checkpoint_dir = out.map(|d| d.join("asr"));
    let asr = train(&asr_cfg, &split.train, &split.dev, &vocab).map_err(|e| e.in_stage("train-asr"))?;
    clock.stage("train-asr");

    let mode = config.decode.mode;
    let max_symbols = config.decode.max_symbols;
    let joint_eval = evaluate(&joint.model, &vocab, &split.eval, mode, max_symbols).map_err(|e| e.in_stage("evaluate"))?;
    clock.stage("evaluate");

    let source = if config.oracle_diarization {
        DiarizationSource::Oracle
    } else {
        DiarizationSource::Pipeline
    };
    let bdata = BaselineData {
        train: &split.train,
        dev: &split.dev,
        eval: &split.eval,
        frame_ms: config.generator.frame_ms,
    };
    let base = run_baseline(&asr.model, &vocab, &bdata, &config.baseline, mode, max_symbols, source).map_err(|e| e.in_stage("baseline"))?;
    clock.stage("baseline");

    let wder_table = joint_eval
        .report
        .per_conversation
        .iter()
        .zip(&base.report.per_conversation)
        .map(|(j, b)| WderRow {
            conversation_id: j.conversation_id.clone(),
            joint: j.wder,
            baseline: b.wder,
        })
        .collect();
    let report = ExperimentReport {
        joint: joint_eval.report,
        baseline: base.report,
        lexical_ablation: config.is_lexical_ablation(),
        baseline_vad_threshold: base.vad_threshold,
        baseline_change_threshold: base.change_threshold,
        baseline_tuning: base.tuning,
        joint_loss_curve: joint.curve,
        asr_loss_curve: asr.curve,
        corpus: CorpusSummary {
            train_utterances: split.train.len(),
            dev_utterances: split.dev.len(),
            eval_utterances: split.eval.len(),
            vocab_size: vocab.len(),
            eval_conversations: joint_eval.transcripts.iter().map(|(id, _)| id.clone()).collect(),
        },
        wder_table,
        config: ExperimentConfig {
            output_dir: None,
            ..config.clone()
        },
    };
    if let Some(dir) = out {
        for (name, model) in [("joint.ckpt", &joint.model), ("asr.ckpt", &asr.model)] {
            save_checkpoint(
                &dir.join(name),
                &Checkpoint {
                    model: model.clone(),
                    vocabulary: vocab.tokens().to_vec(),
                },
            )?;
        }
        write_transcripts(&dir.join("joint_hyp.jsonl"), &joint_eval.transcripts)?;
        write_transcripts(&dir.join("baseline_hyp.jsonl"), &base.transcripts)?;
        write_transcripts(&dir.join("baseline_generic.jsonl"), &base.generic)?;
        let dump: String = base
            .diarizations
            .iter()
            .map(|(id, d)| format!("# {id}\n{}", d.dump()))
            .collect();
        std::fs::write(dir.join("baseline_diarization.txt"), dump).map_err(|e| Error::io(dir, e))?;
        let mut table = String::from("conversation_id\tjoint_wder\tbaseline_wder\n");
        let cell = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.6}"));
        for r in &report.wder_table {
            table.push_str(&format!("{}\t{}\t{}\n", r.conversation_id, cell(r.joint), cell(r.baseline)));
        }
        std::fs::write(dir.join("wder_table.tsv"), table).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("report.json"), &report)?;
    }
    Ok(report)
}

/// Writes `timing.json` next to the report.
pub fn write_timing(dir: &Path, timing: &Timing) -> Result<()> {
    write_json(&dir.join("timing.json"), timing)
}
