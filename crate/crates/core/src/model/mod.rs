//! The conv + LSTM activity model, split into an embedding extractor and a
//! dense softmax classifier, plus checkpoint persistence.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{batch_input, BoundModel, Trainable};
pub use params::{Architecture, ClassifierParams, ConvLayer, Domain, EmbedderParams, LstmLayer, ModelMeta, ModelParams};

use serde::{Deserialize, Serialize};

use crate::numerics::{softmax_rows, NumericsError, Tape, Tensor};

/// Windows per forward batch during inference.
pub const INFERENCE_BATCH: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("input shape {found:?} does not match model input {expected:?}")]
    InputShape { expected: Vec<usize>, found: Vec<usize> },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("incompatible models: {0}")]
    Incompatible(String),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// A `d`-dimensional window embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f32>);

impl From<Vec<f32>> for Embedding {
    fn from(v: Vec<f32>) -> Self {
        Embedding(v)
    }
}

impl Embedding {
    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn chunked<T>(
    model: &ModelParams,
    signals: &[&Tensor],
    mut f: impl FnMut(&mut Tape, &BoundModel, crate::numerics::Var) -> Result<Vec<T>, ModelError>,
) -> Result<Vec<T>, ModelError> {
    model.validate()?;
    let mut out = Vec::with_capacity(signals.len());
    for chunk in signals.chunks(INFERENCE_BATCH) {
        let input = batch_input(chunk, model.meta.input_channels, model.meta.window_len)?;
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, model, Trainable::NONE);
        let x = tape.constant(input);
        out.extend(f(&mut tape, &bound, x)?);
    }
    Ok(out)
}

/// Embeddings for a batch of `[C, T]` signals.
pub fn embed_batch(model: &ModelParams, signals: &[&Tensor]) -> Result<Vec<Embedding>, ModelError> {
    let d = model.meta.arch.embedding_dim();
    chunked(model, signals, |tape, bound, x| {
        let e = bound.embed(tape, x)?;
        Ok(tape.value(e).data().chunks(d).map(|r| Embedding(r.to_vec())).collect())
    })
}

pub fn embed(model: &ModelParams, signal: &Tensor) -> Result<Embedding, ModelError> {
    Ok(embed_batch(model, &[signal])?.remove(0))
}

/// Class probabilities `softmax(W e + b)` for each signal.
pub fn classify_batch(model: &ModelParams, signals: &[&Tensor]) -> Result<Vec<Vec<f32>>, ModelError> {
    let k = model.meta.num_classes;
    chunked(model, signals, |tape, bound, x| {
        let e = bound.embed(tape, x)?;
        let logits = bound.logits(tape, e)?;
        Ok(softmax_rows(tape.value(logits).data(), k).chunks(k).map(|r| r.to_vec()).collect())
    })
}

pub fn classify(model: &ModelParams, signal: &Tensor) -> Result<Vec<f32>, ModelError> {
    Ok(classify_batch(model, &[signal])?.remove(0))
}

/// Class probabilities from an existing embedding through the model's head.
pub fn classify_embedding(model: &ModelParams, embedding: &Embedding) -> Result<Vec<f32>, ModelError> {
    let d = model.classifier.dim();
    if embedding.len() != d {
        return Err(ModelError::InputShape {
            expected: vec![d],
            found: vec![embedding.len()],
        });
    }
    let mut tape = Tape::new();
    let w = tape.constant(model.classifier.weight.clone());
    let b = tape.constant(model.classifier.bias.clone());
    let e = tape.constant(Tensor::new(vec![1, d], embedding.0.clone())?);
    let logits = tape.linear(e, w, b)?;
    Ok(softmax_rows(tape.value(logits).data(), model.meta.num_classes))
}

/// Target embedder with a bitwise copy of the source classifier head.
pub fn transplant_classifier(source: &ModelParams, target: &ModelParams) -> Result<ModelParams, ModelError> {
    if source.meta.num_classes != target.meta.num_classes {
        return Err(ModelError::Incompatible(format!(
            "class counts differ: source {}, target {}",
            source.meta.num_classes, target.meta.num_classes
        )));
    }
    if source.classifier.dim() != target.classifier.dim() {
        return Err(ModelError::Incompatible(format!(
            "embedding dimensions differ: source {}, target {}",
            source.classifier.dim(),
            target.classifier.dim()
        )));
    }
    let mut out = target.clone();
    out.classifier = source.classifier.clone();
    Ok(out)
}

pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
