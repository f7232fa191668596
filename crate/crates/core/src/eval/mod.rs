//! Classification metrics, ROC curves and embedding export.

mod export;
mod metrics;
mod report;
mod roc;

pub use export::{export_embeddings, write_embeddings, EMBEDDING_HEADER_PREFIX};
pub use metrics::{confusion, ovr_metrics, ovr_metrics_with, Averaging, ClassMetrics, ConfusionMatrix, OvrMetrics};
pub use report::{evaluate, evaluate_scores, MetricsReport};
pub use roc::{roc_auc, RocCurve};

use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("nothing to evaluate")]
    Empty,
    #[error("window {pair_id} has no label")]
    MissingLabel { pair_id: u64 },
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("length mismatch: {0}")]
    Mismatch(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}
