use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::{EmbedderParams, Embedding};
use crate::numerics::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mae,
    Mse,
    Msle,
    Cosine,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Mae, LossKind::Mse, LossKind::Msle, LossKind::Cosine];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mae => "mae",
            LossKind::Mse => "mse",
            LossKind::Msle => "msle",
            LossKind::Cosine => "cosine",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularization {
    #[default]
    None,
    L1,
    L2,
}

impl Regularization {
    pub const ALL: [Regularization; 3] = [Regularization::None, Regularization::L1, Regularization::L2];

    pub fn name(self) -> &'static str {
        match self {
            Regularization::None => "none",
            Regularization::L1 => "l1",
            Regularization::L2 => "l2",
        }
    }

    /// Default strength: 1e-5 for L1, 1e-4 for L2.
    pub fn default_lambda(self) -> f64 {
        match self {
            Regularization::None => 0.0,
            Regularization::L1 => 1e-5,
            Regularization::L2 => 1e-4,
        }
    }
}

/// What the regularizer penalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegTarget {
    /// Conv and LSTM weight matrices of the target embedder (biases excluded).
    #[default]
    EmbedderWeights,
    /// Target embeddings, averaged per window.
    EmbeddingActivations,
}

/// Replication objective: a distance between source and target embeddings
/// plus an optional L1/L2 penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default)]
    pub regularization: Regularization,
    #[serde(default)]
    pub target: RegTarget,
    #[serde(default)]
    pub lambda: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::with_default_lambda(LossKind::Mae, Regularization::L2, RegTarget::EmbedderWeights)
    }
}

impl LossSpec {
    pub fn new(kind: LossKind, regularization: Regularization, target: RegTarget, lambda: f64) -> Result<Self, TrainError> {
        let spec = LossSpec {
            kind,
            regularization,
            target,
            lambda,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn unregularized(kind: LossKind) -> Self {
        LossSpec {
            kind,
            regularization: Regularization::None,
            target: RegTarget::EmbedderWeights,
            lambda: 0.0,
        }
    }

    pub fn with_default_lambda(kind: LossKind, regularization: Regularization, target: RegTarget) -> Self {
        LossSpec {
            kind,
            regularization,
            target,
            lambda: regularization.default_lambda(),
        }
    }

    /// `λ = 0` exactly when there is no regularization.
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = match self.regularization {
            Regularization::None => self.lambda == 0.0,
            _ => self.lambda > 0.0 && self.lambda.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!(
                "lambda {} is inconsistent with regularization {}",
                self.lambda,
                self.regularization.name()
            )))
        }
    }

    /// Short label such as `mae+l2`.
    pub fn label(&self) -> String {
        match self.regularization {
            Regularization::None => self.kind.name().to_string(),
            r => format!("{}+{}", self.kind.name(), r.name()),
        }
    }
}

/// Records the replication loss between `e_s [B, d]` (constant) and
/// `e_t [B, d]`. `weights` are the embedder weight matrices used by the
/// weight penalty.
pub fn replication_loss_on_tape(tape: &mut Tape, e_s: Var, e_t: Var, spec: &LossSpec, weights: &[Var]) -> Result<Var, TrainError> {
    spec.validate()?;
    let distance = match spec.kind {
        LossKind::Mae => tape.mae(e_s, e_t)?,
        LossKind::Mse => tape.mse(e_s, e_t)?,
        LossKind::Msle => tape.msle(e_s, e_t)?,
        LossKind::Cosine => tape.cosine(e_s, e_t)?,
    };
    if spec.regularization == Regularization::None {
        return Ok(distance);
    }
    let norm = |tape: &mut Tape, v: Var| match spec.regularization {
        Regularization::L1 => tape.l1(v),
        _ => tape.squared_norm(v),
    };
    let (penalty, factor) = match spec.target {
        RegTarget::EmbedderWeights => {
            let mut total: Option<Var> = None;
            for &w in weights {
                let n = norm(tape, w)?;
                total = Some(match total {
                    Some(t) => tape.add(t, n)?,
                    None => n,
                });
            }
            match total {
                Some(t) => (t, spec.lambda),
                None => return Ok(distance),
            }
        }
        RegTarget::EmbeddingActivations => {
            let rows = tape.value(e_t).shape()[0].max(1);
            (norm(tape, e_t)?, spec.lambda / rows as f64)
        }
    };
    let scaled = tape.scale(penalty, factor as f32)?;
    Ok(tape.add(distance, scaled)?)
}

/// Replication loss for embedding batches, with the weight penalty taken
/// from `embedder`.
pub fn replication_loss(e_s: &[Embedding], e_t: &[Embedding], spec: &LossSpec, embedder: &EmbedderParams) -> Result<f64, TrainError> {
    if e_s.len() != e_t.len() || e_s.is_empty() {
        return Err(TrainError::Config(format!("embedding batches of {} and {} windows", e_s.len(), e_t.len())));
    }
    let d = e_s[0].len();
    if e_s.iter().chain(e_t).any(|e| e.len() != d) {
        return Err(TrainError::Config("embedding dimensions differ".into()));
    }
    let stack = |es: &[Embedding]| Tensor::new(vec![es.len(), d], es.iter().flat_map(|e| e.values().iter().copied()).collect());
    let mut tape = Tape::new();
    let s = tape.constant(stack(e_s)?);
    let t = tape.constant(stack(e_t)?);
    let tensors = embedder.tensors();
    let weights: Vec<Var> = embedder.weight_indices().into_iter().map(|i| tape.constant(tensors[i].clone())).collect();
    let loss = replication_loss_on_tape(&mut tape, s, t, spec, &weights)?;
    Ok(tape.value(loss).item() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use rand::SeedableRng;

    fn emb(rows: &[&[f32]]) -> Vec<Embedding> {
        rows.iter().map(|r| Embedding::from(r.to_vec())).collect()
    }

    fn tiny_embedder() -> EmbedderParams {
        let arch = Architecture {
            conv_layers: 1,
            conv_filters: 2,
            kernel: 3,
            lstm_layers: 1,
            lstm_hidden: 2,
        };
        EmbedderParams::init(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0), &arch, 2)
    }

    #[test]
    fn identical_embeddings_have_zero_loss() {
        let e = emb(&[&[0.3, -0.2], &[0.9, 0.1]]);
        for kind in LossKind::ALL {
            let l = replication_loss(&e, &e, &LossSpec::unregularized(kind), &tiny_embedder()).unwrap();
            assert_eq!(l, 0.0, "{:?}", kind);
        }
    }

    #[test]
    fn mae_hand_value() {
        let l = replication_loss(&emb(&[&[1.0, 2.0]]), &emb(&[&[2.0, 4.0]]), &LossSpec::unregularized(LossKind::Mae), &tiny_embedder()).unwrap();
        assert!((l - 1.5).abs() < 1e-7);
    }

    #[test]
    fn cosine_is_scale_invariant() {
        let l = replication_loss(
            &emb(&[&[0.5, -1.0, 2.0]]),
            &emb(&[&[1.5, -3.0, 6.0]]),
            &LossSpec::unregularized(LossKind::Cosine),
            &tiny_embedder(),
        )
        .unwrap();
        assert!(l.abs() < 1e-6);
    }

    #[test]
    fn zero_vector_cosine_is_one() {
        let l = replication_loss(&emb(&[&[0.0, 0.0]]), &emb(&[&[1.0, 0.0]]), &LossSpec::unregularized(LossKind::Cosine), &tiny_embedder()).unwrap();
        assert_eq!(l, 1.0);
    }

    #[test]
    fn weight_penalty_adds_lambda_times_norm() {
        let e = emb(&[&[0.1, 0.2]]);
        let embedder = tiny_embedder();
        let tensors = embedder.tensors();
        let sq: f64 = embedder.weight_indices().iter().map(|&i| tensors[i].sum_squares()).sum();
        let spec = LossSpec::new(LossKind::Mse, Regularization::L2, RegTarget::EmbedderWeights, 0.5).unwrap();
        let l = replication_loss(&e, &e, &spec, &embedder).unwrap();
        assert!((l - 0.5 * sq).abs() < 1e-5 * sq.max(1.0));
    }

    #[test]
    fn activation_penalty_is_per_window() {
        let e = emb(&[&[1.0, -2.0], &[3.0, 0.0]]);
        let spec = LossSpec::new(LossKind::Mae, Regularization::L1, RegTarget::EmbeddingActivations, 0.1).unwrap();
        let l = replication_loss(&e, &e, &spec, &tiny_embedder()).unwrap();
        assert!((l - 0.1 * 6.0 / 2.0).abs() < 1e-6);
    }

    #[test]
    fn lambda_invariant_enforced() {
        assert!(LossSpec::new(LossKind::Mae, Regularization::None, RegTarget::EmbedderWeights, 1e-4).is_err());
        assert!(LossSpec::new(LossKind::Mae, Regularization::L2, RegTarget::EmbedderWeights, 0.0).is_err());
        assert!(LossSpec::default().validate().is_ok());
    }

    #[test]
    fn mismatched_batches_rejected() {
        let r = replication_loss(&emb(&[&[1.0, 2.0]]), &emb(&[&[1.0]]), &LossSpec::unregularized(LossKind::Mae), &tiny_embedder());
        assert!(r.is_err());
    }
}
