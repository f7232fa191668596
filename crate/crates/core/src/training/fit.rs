use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{rng_for, streams, subsample, TrainConfig, TrainError};
use crate::data::Window;
use crate::model::{batch_input, embed_batch, BoundModel, ModelParams, Trainable};
use crate::numerics::{clip_global_norm, Rmsprop, Tape, Tensor, Var};

/// Per-epoch losses of one optimisation run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    /// Empty when there was no validation slice.
    pub val_loss: Vec<f64>,
    /// Epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

impl History {
    /// Running minimum of the validation loss.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.val_loss
            .iter()
            .map(|&v| {
                best = best.min(v);
                best
            })
            .collect()
    }
}

/// A loss over a set of indexed items.
pub(crate) trait Objective {
    fn batch_loss(&self, tape: &mut Tape, bound: &BoundModel, items: &[usize], train: Option<&mut ChaCha8Rng>) -> Result<Var, TrainError>;
}

/// Splits `0..n` into (train, validation) index sets.
pub(crate) fn holdout(n: usize, cfg: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let n_val = ((cfg.validation_fraction * n as f64).round() as usize).min(n.saturating_sub(1));
    if n_val == 0 {
        return (idx, Vec::new());
    }
    idx.shuffle(&mut rng_for(cfg.seed, streams::VALIDATION));
    let mut val = idx.split_off(n - n_val);
    idx.sort_unstable();
    val.sort_unstable();
    (idx, val)
}

/// Mean loss over `items` with nothing trainable.
pub(crate) fn evaluate(model: &ModelParams, obj: &impl Objective, items: &[usize], batch: usize) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for chunk in items.chunks(batch) {
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, model, Trainable::NONE);
        let loss = obj.batch_loss(&mut tape, &bound, chunk, None)?;
        total += tape.value(loss).item() as f64 * chunk.len() as f64;
    }
    Ok(total / items.len().max(1) as f64)
}

/// Minibatch RMSprop over the `trainable` parameter groups with early
/// stopping on `val`. Leaves the best-validation parameters in `model`.
pub(crate) fn optimize(
    model: &mut ModelParams,
    trainable: Trainable,
    obj: &impl Objective,
    train: &[usize],
    val: &[usize],
    cfg: &TrainConfig,
) -> Result<History, TrainError> {
    let n_embedder = model.embedder.tensors().len();
    let selected: Vec<usize> = (0..model.tensors().len())
        .filter(|&i| if i < n_embedder { trainable.embedder } else { trainable.classifier })
        .collect();
    let mut optimizer = {
        let all = model.tensors();
        Rmsprop::new(cfg.rmsprop(), selected.iter().map(|&i| all[i]))
    };
    let mut shuffle_rng = rng_for(cfg.seed, streams::SHUFFLE);
    let mut dropout_rng = rng_for(cfg.seed, streams::DROPOUT);
    let mut history = History::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut since_best = 0;
    let mut order = train.to_vec();

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = BoundModel::bind(&mut tape, model, trainable);
            let loss = obj.batch_loss(&mut tape, &bound, batch, Some(&mut dropout_rng))?;
            total += tape.value(loss).item() as f64 * batch.len() as f64;
            let grads = tape.backward(loss)?;
            let vars = bound.vars();
            let mut params = model.tensors_mut();
            let mut step_grads: Vec<Tensor> = selected
                .iter()
                .map(|&i| grads.get_or_zeros(vars[i], params[i].shape()))
                .collect();
            clip_global_norm(&mut step_grads, cfg.clip_norm);
            let mut chosen: Vec<&mut Tensor> = Vec::with_capacity(selected.len());
            let mut next = selected.iter().peekable();
            for (i, p) in params.drain(..).enumerate() {
                if next.peek() == Some(&&i) {
                    chosen.push(p);
                    next.next();
                }
            }
            optimizer.step(&mut chosen, &step_grads)?;
        }
        history.train_loss.push(total / order.len().max(1) as f64);
        history.epochs_run = epoch + 1;

        if val.is_empty() {
            continue;
        }
        let v = evaluate(model, obj, val, cfg.batch_size)?;
        history.val_loss.push(v);
        log::debug!("epoch {} train {:.6} val {:.6}", epoch, history.train_loss[epoch], v);
        if best.as_ref().map(|(b, _)| v < *b).unwrap_or(true) {
            best = Some((v, model.clone()));
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    match best {
        Some((_, params)) => *model = params,
        None => history.best_epoch = history.epochs_run.checked_sub(1),
    }
    Ok(history)
}

/// Cross-entropy over labeled windows, with dropout before the dense layer
/// while training. Embeddings are cached when the embedder is frozen.
struct Supervised<'a> {
    signals: Vec<&'a Tensor>,
    labels: Vec<usize>,
    channels: usize,
    window_len: usize,
    dropout: f32,
    cached: Option<(Vec<f32>, usize)>,
}

impl Objective for Supervised<'_> {
    fn batch_loss(&self, tape: &mut Tape, bound: &BoundModel, items: &[usize], train: Option<&mut ChaCha8Rng>) -> Result<Var, TrainError> {
        let mut e = match &self.cached {
            Some((values, d)) => {
                let data = items.iter().flat_map(|&i| values[i * d..(i + 1) * d].iter().copied()).collect();
                tape.constant(Tensor::new(vec![items.len(), *d], data)?)
            }
            None => {
                let signals: Vec<&Tensor> = items.iter().map(|&i| self.signals[i]).collect();
                let x = tape.constant(batch_input(&signals, self.channels, self.window_len)?);
                bound.embed(tape, x)?
            }
        };
        if let Some(rng) = train {
            if self.dropout > 0.0 {
                let keep = 1.0 / (1.0 - self.dropout);
                let mask = (0..tape.value(e).len())
                    .map(|_| if rng.gen::<f32>() < self.dropout { 0.0 } else { keep })
                    .collect();
                e = tape.dropout(e, mask)?;
            }
        }
        let logits = bound.logits(tape, e)?;
        let labels: Vec<usize> = items.iter().map(|&i| self.labels[i]).collect();
        Ok(tape.softmax_cross_entropy(logits, &labels)?)
    }
}

/// Cross-entropy training of the `trainable` groups of `model` on labeled
/// windows, after taking `cfg.fraction` of them.
pub(crate) fn fit(mut model: ModelParams, data: &[Window], cfg: &TrainConfig, trainable: Trainable) -> Result<(ModelParams, History), TrainError> {
    cfg.validate()?;
    model.validate()?;
    let data = subsample(data, cfg.fraction, cfg.seed);
    if data.is_empty() {
        return Err(TrainError::Empty("labeled"));
    }
    let classes = model.meta.num_classes;
    let mut labels = Vec::with_capacity(data.len());
    for w in &data {
        let l = w.label.ok_or(TrainError::MissingLabel { pair_id: w.pair_id })?;
        if l >= classes {
            return Err(TrainError::LabelOutOfRange { label: l, classes });
        }
        labels.push(l);
    }
    if labels.iter().all(|&l| l == labels[0]) {
        log::warn!("all {} training windows carry class {}", labels.len(), labels[0]);
    }
    let signals: Vec<&Tensor> = data.iter().map(|w| &w.samples).collect();
    let cached = if trainable.embedder {
        None
    } else {
        let values = embed_batch(&model, &signals)?.iter().flat_map(|e| e.values().to_vec()).collect();
        Some((values, model.meta.arch.embedding_dim()))
    };
    let obj = Supervised {
        signals,
        labels,
        channels: model.meta.input_channels,
        window_len: model.meta.window_len,
        dropout: cfg.dropout,
        cached,
    };
    let (train, val) = holdout(data.len(), cfg);
    let history = optimize(&mut model, trainable, &obj, &train, &val, cfg)?;
    Ok((model, history))
}

/// Trains every parameter of `init` by cross-entropy on labeled windows.
pub fn train_supervised(init: ModelParams, data: &[Window], cfg: &TrainConfig) -> Result<(ModelParams, History), TrainError> {
    fit(init, data, cfg, Trainable::ALL)
}
