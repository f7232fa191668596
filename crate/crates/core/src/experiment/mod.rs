//! Declarative experiment runner: one TOML file describes a study, which is
//! expanded into seeded repetitions whose results are aggregated into
//! summary tables.

mod config;
mod run;
mod summary;

pub use config::{
    default_loss_grid, DatasetConfig, ExperimentConfig, ExperimentKind, Method, SplitConfig, StageSeeds, CONFIG_VERSION, DATA_ROOT_ENV,
};
pub use run::{
    load_records, loss_condition_name, run_experiment, summarize_dir, ConditionResult, RunOptions, RunRecord, Timing, CONDITION_MS_SOURCE,
    CONDITION_MS_TARGET, CONDITION_MT_TARGET, CONDITION_RANDOM, CONDITION_SOURCE_REFERENCE, CONDITION_UNTRAINED, HASH_FILE,
};
pub use summary::{series_csv, summarize, summary_csv, table_csv, write_summary, Stats, Summary, SummaryRow};

use std::path::PathBuf;

use crate::data::DataError;
use crate::eval::EvalError;
use crate::model::ModelError;
use crate::training::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("{dir} holds results of config {existing}; refusing to overwrite with config {requested}")]
    HashMismatch { dir: PathBuf, existing: String, requested: String },
    #[error("inconsistent run records: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}
