//! Training, evaluation and the end-to-end comparison.

mod eval;
mod experiment;
mod overfit;
mod train;

pub use eval::{
    check_vocabulary, decode_all, evaluate, references, run_baseline, score, BaselineData, BaselineRun, DiarizationSource,
    Evaluation, Transcripts,
};
pub use experiment::{
    prepare_data, run_experiment, write_timing, CorpusSummary, DataConfig, DecodeConfig, ExperimentConfig, ExperimentOutcome,
    ExperimentReport, PreparedData, Timing, WderRow,
};
pub use overfit::{overfit, overfit_set, OverfitConfig, OverfitReport};
pub use train::{parameter_values, smoothed_losses, train, LossPoint, TrainConfig, TrainOutcome};
