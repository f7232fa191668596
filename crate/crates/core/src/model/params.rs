use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::numerics::Tensor;

/// Layer widths of the conv + LSTM network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub conv_layers: usize,
    pub conv_filters: usize,
    pub kernel: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
}

impl Architecture {
    /// Four 64-map convolutions (kernel 5) followed by two 128-cell LSTMs.
    pub const DEEP_CONV_LSTM: Architecture = Architecture {
        conv_layers: 4,
        conv_filters: 64,
        kernel: 5,
        lstm_layers: 2,
        lstm_hidden: 128,
    };

    /// Embedding dimension `d`.
    pub fn embedding_dim(&self) -> usize {
        self.lstm_hidden
    }

    /// Length of the time axis entering the first LSTM layer.
    pub fn lstm_steps(&self, window_len: usize) -> Option<usize> {
        window_len.checked_sub(self.conv_layers * (self.kernel - 1)).filter(|&t| t > 0)
    }

    pub fn validate(&self, window_len: usize) -> Result<(), ModelError> {
        if self.conv_layers == 0 || self.conv_filters == 0 || self.kernel == 0 || self.lstm_layers == 0 || self.lstm_hidden == 0 {
            return Err(ModelError::Invalid(format!("architecture has an empty layer: {:?}", self)));
        }
        if self.lstm_steps(window_len).is_none() {
            return Err(ModelError::Invalid(format!(
                "window of {} samples is too short for {} convolutions of kernel {}",
                window_len, self.conv_layers, self.kernel
            )));
        }
        Ok(())
    }
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::DEEP_CONV_LSTM
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub input_channels: usize,
    pub window_len: usize,
    pub num_classes: usize,
    pub domain: Domain,
    pub arch: Architecture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    /// `[filters, in_channels, kernel]`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    /// `[4H, in]`, gate blocks input, forget, cell, output.
    pub w_ih: Tensor,
    /// `[4H, H]`
    pub w_hh: Tensor,
    pub bias: Tensor,
}

/// Embedding extractor: everything up to and including the last LSTM layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderParams {
    pub conv: Vec<ConvLayer>,
    pub lstm: Vec<LstmLayer>,
}

/// Dense softmax head. `weight` is `[num_classes, d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub meta: ModelMeta,
    pub embedder: EmbedderParams,
    pub classifier: ClassifierParams,
}

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f32) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite init")
}

impl ConvLayer {
    pub fn init(rng: &mut impl Rng, in_channels: usize, filters: usize, kernel: usize) -> Self {
        let bound = (1.0 / (in_channels * kernel) as f32).sqrt();
        ConvLayer {
            weight: uniform(rng, &[filters, in_channels, kernel], bound),
            bias: uniform(rng, &[filters], bound),
        }
    }
}

impl LstmLayer {
    pub fn init(rng: &mut impl Rng, input: usize, hidden: usize) -> Self {
        let bound = (1.0 / hidden as f32).sqrt();
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        LstmLayer {
            w_ih: uniform(rng, &[4 * hidden, input], bound),
            w_hh: uniform(rng, &[4 * hidden, hidden], bound),
            bias,
        }
    }
}

impl EmbedderParams {
    pub fn init(rng: &mut impl Rng, arch: &Architecture, input_channels: usize) -> Self {
        let mut conv = Vec::with_capacity(arch.conv_layers);
        let mut channels = input_channels;
        for _ in 0..arch.conv_layers {
            conv.push(ConvLayer::init(rng, channels, arch.conv_filters, arch.kernel));
            channels = arch.conv_filters;
        }
        let mut lstm = Vec::with_capacity(arch.lstm_layers);
        for _ in 0..arch.lstm_layers {
            lstm.push(LstmLayer::init(rng, channels, arch.lstm_hidden));
            channels = arch.lstm_hidden;
        }
        EmbedderParams { conv, lstm }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for c in &self.conv {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        for l in &self.lstm {
            out.push(&l.w_ih);
            out.push(&l.w_hh);
            out.push(&l.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in &mut self.conv {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        for l in &mut self.lstm {
            out.push(&mut l.w_ih);
            out.push(&mut l.w_hh);
            out.push(&mut l.bias);
        }
        out
    }

    /// Weight matrices only (no biases); the weight-decay target.
    pub fn weight_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut i = 0;
        for _ in &self.conv {
            out.push(i);
            i += 2;
        }
        for _ in &self.lstm {
            out.push(i);
            out.push(i + 1);
            i += 3;
        }
        out
    }
}

impl ClassifierParams {
    pub fn init(rng: &mut impl Rng, num_classes: usize, dim: usize) -> Self {
        let bound = (1.0 / dim as f32).sqrt();
        ClassifierParams {
            weight: uniform(rng, &[num_classes, dim], bound),
            bias: Tensor::zeros(&[num_classes]),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

impl ModelParams {
    pub fn init(meta: ModelMeta, rng: &mut impl Rng) -> Result<Self, ModelError> {
        meta.arch.validate(meta.window_len)?;
        let embedder = EmbedderParams::init(rng, &meta.arch, meta.input_channels);
        let classifier = ClassifierParams::init(rng, meta.num_classes, meta.arch.embedding_dim());
        Ok(ModelParams {
            meta,
            embedder,
            classifier,
        })
    }

    /// Every parameter set to zero.
    pub fn zeros(meta: ModelMeta) -> Result<Self, ModelError> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut model = Self::init(meta, &mut rng)?;
        for t in model.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(model)
    }

    /// All tensors in checkpoint order: embedder, then classifier weight and bias.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = self.embedder.tensors();
        out.push(&self.classifier.weight);
        out.push(&self.classifier.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.embedder.tensors_mut();
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Shapes every tensor must have for `meta`, in checkpoint order.
    pub fn expected_shapes(meta: &ModelMeta) -> Vec<Vec<usize>> {
        let a = &meta.arch;
        let mut out = Vec::new();
        let mut channels = meta.input_channels;
        for _ in 0..a.conv_layers {
            out.push(vec![a.conv_filters, channels, a.kernel]);
            out.push(vec![a.conv_filters]);
            channels = a.conv_filters;
        }
        for _ in 0..a.lstm_layers {
            out.push(vec![4 * a.lstm_hidden, channels]);
            out.push(vec![4 * a.lstm_hidden, a.lstm_hidden]);
            out.push(vec![4 * a.lstm_hidden]);
            channels = a.lstm_hidden;
        }
        out.push(vec![meta.num_classes, a.lstm_hidden]);
        out.push(vec![meta.num_classes]);
        out
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.meta.arch.validate(self.meta.window_len)?;
        if self.embedder.conv.len() != self.meta.arch.conv_layers || self.embedder.lstm.len() != self.meta.arch.lstm_layers {
            return Err(ModelError::Invalid("layer count differs from architecture".into()));
        }
        let expected = Self::expected_shapes(&self.meta);
        for (i, (t, shape)) in self.tensors().iter().zip(&expected).enumerate() {
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Invalid(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    i,
                    t.shape(),
                    shape
                )));
            }
        }
        Ok(())
    }
}
