use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rnnt_diar::corpus::{read_corpus, FrameStorage};
use rnnt_diar::decoder::{read_transcripts, write_transcripts, DecodeMode};
use rnnt_diar::harness::{
    decode_all, evaluate, prepare_data, references, run_baseline, run_experiment, score, train, write_timing, BaselineData,
    DiarizationSource, ExperimentConfig, PreparedData,
};
use rnnt_diar::model::{load_checkpoint, Precision};
use rnnt_diar::vocab::Vocabulary;

#[derive(Parser)]
#[command(name = "rnnt-diar", version, about = "Joint recognition and speaker-role diarization")]
struct Cli {
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, segment and split a synthetic corpus.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        conversations: Option<usize>,
        /// Store frames inside the JSONL records instead of side files.
        #[arg(long)]
        inline: bool,
    },
    /// Train a model on a corpus directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, overrides_with = "no_roles")]
        roles: bool,
        /// Train a plain recognizer without role tokens.
        #[arg(long)]
        no_roles: bool,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        precision: Option<Precision>,
    },
    /// Decode a corpus file with a checkpoint.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A corpus JSONL file, or a corpus directory (its eval split).
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        decode: DecodeArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also print a score report against the corpus references.
        #[arg(long)]
        score: bool,
    },
    /// Score hypothesis transcripts against references.
    Score {
        /// Transcript JSONL, or a corpus JSONL whose references are used.
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
    },
    /// Run the diarization baseline on a corpus directory.
    Baseline {
        #[arg(long)]
        asr_checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        decode: DecodeArgs,
        /// Use reference turns as the diarization.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full joint-versus-baseline comparison.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Start from the small smoke configuration.
        #[arg(long)]
        smoke: bool,
        /// Disable acoustic speaker offsets.
        #[arg(long)]
        ablation: bool,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Greedy,
    Beam,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    max_symbols: Option<usize>,
}

impl DecodeArgs {
    fn apply(&self, config: &mut ExperimentConfig) {
        let width = self.beam_width.unwrap_or(match config.decode.mode {
            DecodeMode::Beam { width } => width,
            DecodeMode::Greedy => 4,
        });
        match self.mode {
            Some(ModeArg::Greedy) => config.decode.mode = DecodeMode::Greedy,
            Some(ModeArg::Beam) => config.decode.mode = DecodeMode::Beam { width },
            None if self.beam_width.is_some() => config.decode.mode = DecodeMode::Beam { width },
            None => {}
        }
        if let Some(m) = self.max_symbols {
            config.decode.max_symbols = m;
        }
    }
}

fn load_config(path: Option<&Path>, smoke: bool) -> anyhow::Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(ExperimentConfig::from_toml(&text)?)
        }
        None if smoke => Ok(ExperimentConfig::smoke()),
        None => Ok(ExperimentConfig::default()),
    }
}

fn apply_seed(config: &mut ExperimentConfig, seed: Option<u64>) {
    if let Some(s) = seed {
        config.data.seed = s;
        config.train.seed = s;
        config.baseline.seed = s;
    }
}

fn print_json(value: &impl Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn check_vocab(checkpoint_vocab: &[String], path: &Path) -> anyhow::Result<Vocabulary> {
    Ok(Vocabulary::from_tokens(checkpoint_vocab.to_vec()).with_context(|| format!("vocabulary stored in {}", path.display()))?)
}

fn corpus_part(path: &Path) -> anyhow::Result<Vec<rnnt_diar::corpus::Utterance>> {
    if path.is_dir() {
        Ok(read_corpus(&path.join("eval.jsonl"))?)
    } else {
        Ok(read_corpus(path)?)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData {
            config,
            out,
            conversations,
            inline,
        } => {
            let mut c = load_config(config.as_deref(), false)?;
            apply_seed(&mut c, cli.seed);
            if let Some(n) = conversations {
                c.data.conversations = n;
            }
            let data = prepare_data(&c.generator, &c.data)?;
            data.save(&out, if inline { FrameStorage::Inline } else { FrameStorage::Blob })?;
            eprintln!(
                "wrote {} train, {} dev, {} eval segments and {} tokens to {}",
                data.split.train.len(),
                data.split.dev.len(),
                data.split.eval.len(),
                data.vocab.len(),
                out.display()
            );
        }
        Command::Train {
            config,
            corpus,
            out,
            roles: _,
            no_roles,
            max_steps,
            learning_rate,
            batch_size,
            precision,
        } => {
            let mut c = load_config(config.as_deref(), false)?;
            apply_seed(&mut c, cli.seed);
            let data = PreparedData::load(&corpus)?;
            let mut t = c.train;
            t.model.vocab_size = data.vocab.len();
            t.with_roles = !no_roles;
            t.checkpoint_dir = Some(out.clone());
            t.max_steps = max_steps.unwrap_or(t.max_steps);
            t.learning_rate = learning_rate.unwrap_or(t.learning_rate);
            t.batch_size = batch_size.unwrap_or(t.batch_size);
            t.precision = precision.unwrap_or(t.precision);
            let outcome = train(&t, &data.split.train, &data.split.dev, &data.vocab)?;
            let curve = out.join("loss_curve.json");
            std::fs::write(&curve, serde_json::to_string_pretty(&outcome.curve)?)?;
            match outcome.checkpoint {
                Some(p) => eprintln!("checkpoint {}", p.display()),
                None => bail!("no checkpoint was written"),
            }
        }
        Command::Decode {
            checkpoint,
            corpus,
            decode,
            out,
            score: with_score,
        } => {
            let mut c = ExperimentConfig::default();
            decode.apply(&mut c);
            let ck = load_checkpoint(&checkpoint)?;
            let vocab = check_vocab(&ck.vocabulary, &checkpoint)?;
            let utts = corpus_part(&corpus)?;
            if with_score {
                let ev = evaluate(&ck.model, &vocab, &utts, c.decode.mode, c.decode.max_symbols)?;
                if let Some(o) = &out {
                    write_transcripts(o, &ev.transcripts)?;
                }
                print_json(&ev.report)?;
            } else {
                rnnt_diar::harness::check_vocabulary(&vocab, &utts)?;
                let hyps = decode_all(&ck.model, &vocab, &utts, c.decode.mode, c.decode.max_symbols)?;
                match &out {
                    Some(o) => write_transcripts(o, &hyps)?,
                    None => {
                        for (id, t) in &hyps {
                            println!("{id}\t{}", t.words.iter().map(|w| format!("{}/{}", w.word, w.role)).collect::<Vec<_>>().join(" "));
                        }
                    }
                }
            }
        }
        Command::Score { reference, hyp } => {
            let refs = match read_transcripts(&reference) {
                Ok(r) => r,
                Err(_) => references(&read_corpus(&reference)?),
            };
            let hyps = read_transcripts(&hyp)?;
            print_json(&score(&refs, &hyps)?)?;
        }
        Command::Baseline {
            asr_checkpoint,
            corpus,
            config,
            decode,
            oracle,
            out,
        } => {
            let mut c = load_config(config.as_deref(), false)?;
            apply_seed(&mut c, cli.seed);
            decode.apply(&mut c);
            let ck = load_checkpoint(&asr_checkpoint)?;
            let vocab = check_vocab(&ck.vocabulary, &asr_checkpoint)?;
            let data = PreparedData::load(&corpus)?;
            let bdata = BaselineData {
                train: &data.split.train,
                dev: &data.split.dev,
                eval: &data.split.eval,
                frame_ms: c.generator.frame_ms,
            };
            let source = if oracle { DiarizationSource::Oracle } else { DiarizationSource::Pipeline };
            let run = run_baseline(&ck.model, &vocab, &bdata, &c.baseline, c.decode.mode, c.decode.max_symbols, source)?;
            if let Some(dir) = &out {
                std::fs::create_dir_all(dir)?;
                write_transcripts(&dir.join("baseline_hyp.jsonl"), &run.transcripts)?;
                write_transcripts(&dir.join("baseline_generic.jsonl"), &run.generic)?;
                let dump: String = run.diarizations.iter().map(|(id, d)| format!("# {id}\n{}", d.dump())).collect();
                std::fs::write(dir.join("baseline_diarization.txt"), dump)?;
            }
            print_json(&run.report)?;
        }
        Command::Experiment {
            config,
            out,
            smoke,
            ablation,
            threads,
        } => {
            let mut c = load_config(config.as_deref(), smoke)?;
            apply_seed(&mut c, cli.seed);
            if ablation {
                c.generator.offset_scale = 0.0;
            }
            if threads.is_some() {
                c.train.threads = threads;
            }
            if out.is_some() {
                c.output_dir = out;
            }
            let outcome = run_experiment(&c)?;
            if let Some(dir) = &c.output_dir {
                write_timing(dir, &outcome.timing)?;
            }
            print_json(&outcome.report.joint)?;
            print_json(&outcome.report.baseline)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ErrorLine {
    error: String,
    chain: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = ErrorLine {
                error: e.to_string(),
                chain: e.chain().skip(1).map(|c| c.to_string()).collect(),
            };
            eprintln!("{}", serde_json::to_string(&line).unwrap_or_else(|_| format!("{{\"error\":{:?}}}", e.to_string())));
            ExitCode::FAILURE
        }
    }
}
