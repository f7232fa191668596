//! Dense `f32` tensors, tape-based reverse-mode differentiation and the
//! RMSprop optimizer.

mod gemm;
mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_gradient, relative_error};
pub use optim::{clip_global_norm, Rmsprop, RmspropConfig};
pub use tape::{Gradients, Tape, Var, MSLE_FLOOR};
pub use tensor::Tensor;

pub(crate) use tape::softmax_rows;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },
    #[error("non-finite value produced by {op} at element {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
