use serde::{Deserialize, Serialize};

use super::tensor::check_finite;
use super::{NumericsError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmspropConfig {
    /// Learning rate. Defaults to `1e-3`.
    pub lr: f32,
    /// Decay of the squared-gradient average. Defaults to `0.9`.
    pub rho: f32,
    /// Added inside the square root. Defaults to `1e-8`.
    pub eps: f32,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        RmspropConfig {
            lr: 1e-3,
            rho: 0.9,
            eps: 1e-8,
        }
    }
}

/// RMSprop with one squared-gradient accumulator per parameter tensor.
///
/// `s' = rho*s + (1-rho)*g²`, `p' = p - lr*g/sqrt(s' + eps)`.
#[derive(Debug, Clone)]
pub struct Rmsprop {
    pub config: RmspropConfig,
    accumulators: Vec<Tensor>,
}

impl Rmsprop {
    pub fn new<'a>(config: RmspropConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let accumulators = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Rmsprop { config, accumulators }
    }

    pub fn accumulators(&self) -> &[Tensor] {
        &self.accumulators
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<(), NumericsError> {
        if params.len() != grads.len() || params.len() != self.accumulators.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "rmsprop_step",
                expected: format!("{} parameter tensors", self.accumulators.len()),
                found: format!("{} params, {} grads", params.len(), grads.len()),
            });
        }
        for ((p, g), s) in params.iter().zip(grads).zip(&self.accumulators) {
            if p.shape() != g.shape() || p.shape() != s.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "rmsprop_step",
                    expected: format!("{:?}", p.shape()),
                    found: format!("grad {:?}, state {:?}", g.shape(), s.shape()),
                });
            }
            check_finite("rmsprop_step", g.data())?;
        }
        let RmspropConfig { lr, rho, eps } = self.config;
        for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut self.accumulators) {
            for ((p, &g), s) in p.data_mut().iter_mut().zip(g.data()).zip(s.data_mut()) {
                *s = rho * *s + (1.0 - rho) * g * g;
                let denom = (*s + eps).sqrt();
                if denom > 0.0 {
                    *p -= lr * g / denom;
                }
            }
            check_finite("rmsprop_step", p.data())?;
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f32) -> f64 {
    let norm = grads.iter().map(|g| g.sum_squares()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm as f64 {
        let factor = (max_norm as f64 / norm) as f32;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
    norm
}
