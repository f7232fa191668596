use serde::{Deserialize, Serialize};

use super::NumericsError;

/// Dense row-major `f32` array.
///
/// Every constructor rejects non-finite values, so a `Tensor` that exists
/// holds only finite numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, NumericsError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "tensor",
                expected: format!("{} elements for shape {:?}", expected, shape),
                found: format!("{} elements", data.len()),
            });
        }
        check_finite("tensor", &data)?;
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        assert!(value.is_finite());
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f32) -> Result<Self, NumericsError> {
        Tensor::new(vec![1], vec![value])
    }

    /// Builds a tensor without the finiteness check; callers inside the
    /// crate must run [`Tensor::ensure_finite`] before handing it out.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access to the raw values. Writes must keep values finite.
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn item(&self) -> f32 {
        self.data[0]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, NumericsError> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "reshape",
                expected: format!("{} elements", self.data.len()),
                found: format!("shape {:?}", shape),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<(), NumericsError> {
        check_finite(op, &self.data)
    }

    /// Sum of squares accumulated in f64.
    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }

    /// True when both tensors have the same shape and bitwise-equal values.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub(crate) fn check_finite(op: &'static str, data: &[f32]) -> Result<(), NumericsError> {
    match data.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(index) => Err(NumericsError::NonFinite { op, index }),
    }
}
