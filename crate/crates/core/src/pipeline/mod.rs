//! Stage orchestration, training, evaluation and attention.

mod attention;
mod desk;
mod eval;
mod predict;
mod train;
mod verify;

pub use attention::{attention_combine, ensemble_average, AttentionWeights};
pub use desk::{desk_data, run_desk, DeskConfig, DeskData, DeskOutcome, DESK_SYMBOLS, DESK_WORDS};
pub use eval::{
    evaluate, evaluate_samples, summarize, write_results_csv, EvalOptions, EvalReport, LabelledImage, Runtime,
    SampleResult, StageCounts,
};
pub use predict::{predict_block, PredictOptions, PredictionRecord, Stage, Stages};
pub use train::{load_samples, train, AttentionConfig, LossRecord, Sample, Target, TrainLog, TrainOptions};
pub use verify::{layer_checks, network_checks, NamedReport};
