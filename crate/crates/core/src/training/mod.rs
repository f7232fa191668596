//! Supervised source training, unsupervised embedding-replication
//! adaptation and the supervised transfer baselines.

mod adapt;
mod baselines;
mod fit;
mod loss;
mod sample;

pub use adapt::{adapt_unsupervised, target_init, AdaptReport};
pub use baselines::{fine_tune, linear_probe, lp_ft};
pub use fit::{train_supervised, History};
pub use loss::{replication_loss, replication_loss_on_tape, LossKind, LossSpec, RegTarget, Regularization};
pub use sample::subsample;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabelSet;
use crate::model::ModelError;
use crate::numerics::{NumericsError, RmspropConfig};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("no {0} windows to train on")]
    Empty(&'static str),
    #[error("window {pair_id} has no label")]
    MissingLabel { pair_id: u64 },
    #[error("label {label} out of range for a {classes}-class model")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Optimisation settings shared by every training routine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub rho: f32,
    pub eps: f32,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f32,
    /// Share of the training windows held out for early stopping.
    pub validation_fraction: f64,
    /// Drop probability before the dense layer in supervised training.
    pub dropout: f32,
    pub seed: u64,
    pub labels: LabelSet,
    /// Share of the available windows actually used, in (0, 1].
    pub fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            rho: 0.9,
            eps: 1e-8,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            clip_norm: 10.0,
            validation_fraction: 0.1,
            dropout: 0.5,
            seed: 0,
            labels: LabelSet::FiveClass,
            fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad(format!("fraction {} must lie in (0, 1]", self.fraction));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be finite and non-negative", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.rho) || !(self.eps > 0.0) {
            return bad(format!("rmsprop rho {} / eps {} out of range", self.rho, self.eps));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation fraction {} must lie in [0, 1)", self.validation_fraction));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        if !(self.clip_norm >= 0.0) {
            return bad("clip norm must be non-negative".into());
        }
        Ok(())
    }

    pub fn rmsprop(&self) -> RmspropConfig {
        RmspropConfig {
            lr: self.learning_rate,
            rho: self.rho,
            eps: self.eps,
        }
    }
}

/// Independent random stream `stream` derived from `seed`.
pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) mod streams {
    pub const SHUFFLE: u64 = 1;
    pub const DROPOUT: u64 = 2;
    pub const VALIDATION: u64 = 3;
    pub const FIRST_LAYER: u64 = 4;
    pub const SUBSAMPLE: u64 = 5;
}
