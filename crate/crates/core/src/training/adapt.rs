use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fit::{evaluate, holdout, optimize, Objective};
use super::{replication_loss_on_tape, rng_for, streams, subsample, LossSpec, TrainConfig, TrainError};
use crate::data::UnlabeledPair;
use crate::model::{batch_input, embed_batch, transplant_classifier, BoundModel, ConvLayer, Domain, ModelParams, Trainable};
use crate::numerics::{Tape, Tensor, Var};

/// Outcome of one adaptation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    /// Replication loss of the returned embedder over all adaptation pairs.
    pub final_loss: f64,
    /// Mean training replication loss per epoch.
    pub trajectory: Vec<f64>,
    pub validation: Vec<f64>,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub pairs: usize,
}

/// A target-domain model initialised from `source`: every layer is copied
/// except the first convolution, which is freshly initialised when the
/// channel counts differ.
pub fn target_init(source: &ModelParams, target_channels: usize, seed: u64) -> Result<ModelParams, TrainError> {
    source.validate()?;
    let mut model = source.clone();
    model.meta.input_channels = target_channels;
    model.meta.domain = Domain::Target;
    if target_channels != source.meta.input_channels {
        let arch = &source.meta.arch;
        model.embedder.conv[0] = ConvLayer::init(&mut rng_for(seed, streams::FIRST_LAYER), target_channels, arch.conv_filters, arch.kernel);
    }
    model.validate()?;
    Ok(model)
}

struct Replication<'a> {
    targets: Vec<&'a Tensor>,
    source_embeddings: Vec<f32>,
    dim: usize,
    channels: usize,
    window_len: usize,
    spec: LossSpec,
    weight_indices: Vec<usize>,
}

impl Objective for Replication<'_> {
    fn batch_loss(&self, tape: &mut Tape, bound: &BoundModel, items: &[usize], _train: Option<&mut ChaCha8Rng>) -> Result<Var, TrainError> {
        let d = self.dim;
        let signals: Vec<&Tensor> = items.iter().map(|&i| self.targets[i]).collect();
        let x = tape.constant(batch_input(&signals, self.channels, self.window_len)?);
        let e_t = bound.embed(tape, x)?;
        let e_s = tape.constant(Tensor::new(
            vec![items.len(), d],
            items.iter().flat_map(|&i| self.source_embeddings[i * d..(i + 1) * d].iter().copied()).collect(),
        )?);
        let vars = bound.vars();
        let weights: Vec<Var> = self.weight_indices.iter().map(|&i| vars[i]).collect();
        replication_loss_on_tape(tape, e_s, e_t, &self.spec, &weights)
    }
}

/// Trains a target embedder so its embeddings of target windows replicate
/// the frozen source model's embeddings of the simultaneous source
/// windows, then gives it the source classifier unchanged.
pub fn adapt_unsupervised(
    source: &ModelParams,
    pairs: &[UnlabeledPair],
    spec: &LossSpec,
    cfg: &TrainConfig,
) -> Result<(ModelParams, AdaptReport), TrainError> {
    cfg.validate()?;
    spec.validate()?;
    source.validate()?;
    let pairs = subsample(pairs, cfg.fraction, cfg.seed);
    let first = pairs.first().ok_or(TrainError::Empty("paired adaptation"))?;
    let window_len = source.meta.window_len;
    let channels = first.target.shape()[0];
    for p in &pairs {
        if p.target.shape() != [channels, window_len] {
            return Err(TrainError::Config(format!(
                "pair {} target shape {:?}, expected {:?}",
                p.pair_id,
                p.target.shape(),
                [channels, window_len]
            )));
        }
    }
    let sources: Vec<&Tensor> = pairs.iter().map(|p| &p.source).collect();
    let source_embeddings: Vec<f32> = embed_batch(source, &sources)?.iter().flat_map(|e| e.values().to_vec()).collect();

    let mut target = target_init(source, channels, cfg.seed)?;
    let obj = Replication {
        targets: pairs.iter().map(|p| &p.target).collect(),
        source_embeddings,
        dim: source.meta.arch.embedding_dim(),
        channels,
        window_len,
        spec: *spec,
        weight_indices: target.embedder.weight_indices(),
    };
    let (train, val) = holdout(pairs.len(), cfg);
    let history = optimize(&mut target, Trainable::EMBEDDER, &obj, &train, &val, cfg)?;
    let all: Vec<usize> = (0..pairs.len()).collect();
    let final_loss = evaluate(&target, &obj, &all, cfg.batch_size)?;
    let target = transplant_classifier(source, &target)?;
    Ok((
        target,
        AdaptReport {
            final_loss,
            trajectory: history.train_loss,
            validation: history.val_loss,
            epochs_run: history.epochs_run,
            best_epoch: history.best_epoch,
            pairs: pairs.len(),
        },
    ))
}
