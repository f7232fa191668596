use super::fit::{fit, History};
use super::{target_init, TrainConfig, TrainError};
use crate::data::Window;
use crate::model::{ModelParams, Trainable};

fn init_for(source: &ModelParams, data: &[Window], cfg: &TrainConfig) -> Result<ModelParams, TrainError> {
    let first = data.first().ok_or(TrainError::Empty("labeled target"))?;
    target_init(source, first.samples.shape()[0], cfg.seed)
}

/// Retrains only the classifier on labeled target windows; the embedder is
/// the source embedder.
pub fn linear_probe(source: &ModelParams, data: &[Window], cfg: &TrainConfig) -> Result<(ModelParams, History), TrainError> {
    fit(init_for(source, data, cfg)?, data, cfg, Trainable::CLASSIFIER)
}

/// Retrains every parameter on labeled target windows, starting from `source`.
pub fn fine_tune(source: &ModelParams, data: &[Window], cfg: &TrainConfig) -> Result<(ModelParams, History), TrainError> {
    fit(init_for(source, data, cfg)?, data, cfg, Trainable::ALL)
}

/// Linear probing followed by fine-tuning with the same configuration.
pub fn lp_ft(source: &ModelParams, data: &[Window], cfg: &TrainConfig) -> Result<(ModelParams, History), TrainError> {
    let (probed, _) = linear_probe(source, data, cfg)?;
    fine_tune(&probed, data, cfg)
}
