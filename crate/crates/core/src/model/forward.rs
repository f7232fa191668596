use super::{ModelError, ModelParams};
use crate::numerics::{Tape, Tensor, Var};

/// Which parameter groups become differentiable leaves on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub embedder: bool,
    pub classifier: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable {
        embedder: true,
        classifier: true,
    };
    pub const NONE: Trainable = Trainable {
        embedder: false,
        classifier: false,
    };
    pub const EMBEDDER: Trainable = Trainable {
        embedder: true,
        classifier: false,
    };
    pub const CLASSIFIER: Trainable = Trainable {
        embedder: false,
        classifier: true,
    };
}

/// Model parameters registered on a tape, in checkpoint order.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub conv: Vec<(Var, Var)>,
    pub lstm: Vec<(Var, Var, Var)>,
    pub classifier: (Var, Var),
}

impl BoundModel {
    pub fn bind(tape: &mut Tape, model: &ModelParams, trainable: Trainable) -> Self {
        let leaf = |tape: &mut Tape, t: &Tensor, train: bool| {
            if train {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let conv = model
            .embedder
            .conv
            .iter()
            .map(|c| (leaf(tape, &c.weight, trainable.embedder), leaf(tape, &c.bias, trainable.embedder)))
            .collect();
        let lstm = model
            .embedder
            .lstm
            .iter()
            .map(|l| {
                (
                    leaf(tape, &l.w_ih, trainable.embedder),
                    leaf(tape, &l.w_hh, trainable.embedder),
                    leaf(tape, &l.bias, trainable.embedder),
                )
            })
            .collect();
        let classifier = (
            leaf(tape, &model.classifier.weight, trainable.classifier),
            leaf(tape, &model.classifier.bias, trainable.classifier),
        );
        BoundModel { conv, lstm, classifier }
    }

    /// Vars in checkpoint order.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for &(w, b) in &self.conv {
            out.extend([w, b]);
        }
        for &(a, b, c) in &self.lstm {
            out.extend([a, b, c]);
        }
        out.extend([self.classifier.0, self.classifier.1]);
        out
    }

    pub fn embedder_vars(&self) -> Vec<Var> {
        let mut v = self.vars();
        v.truncate(v.len() - 2);
        v
    }

    /// `[B, T, C]` input → `[B, d]` embeddings.
    pub fn embed(&self, tape: &mut Tape, input: Var) -> Result<Var, ModelError> {
        let mut h = input;
        for &(w, b) in &self.conv {
            let c = tape.conv1d(h, w, b)?;
            h = tape.relu(c)?;
        }
        for &(w_ih, w_hh, b) in &self.lstm {
            h = tape.lstm(h, w_ih, w_hh, b)?;
        }
        Ok(tape.last_step(h)?)
    }

    /// `[B, d]` embeddings → `[B, K]` logits.
    pub fn logits(&self, tape: &mut Tape, embedding: Var) -> Result<Var, ModelError> {
        Ok(tape.linear(embedding, self.classifier.0, self.classifier.1)?)
    }
}

/// Stacks `[C, T]` signals into a `[B, T, C]` batch, checking each against
/// the model's expected channel count and window length.
pub fn batch_input(signals: &[&Tensor], channels: usize, window_len: usize) -> Result<Tensor, ModelError> {
    let mut data = Vec::with_capacity(signals.len() * channels * window_len);
    for s in signals {
        if s.shape() != [channels, window_len] {
            return Err(ModelError::InputShape {
                expected: vec![channels, window_len],
                found: s.shape().to_vec(),
            });
        }
        let d = s.data();
        for t in 0..window_len {
            for c in 0..channels {
                data.push(d[c * window_len + t]);
            }
        }
    }
    Ok(Tensor::new(vec![signals.len(), window_len, channels], data)?)
}
