//! Dense row-major tensors of `f64`.
//!
//! Everything in the engine (weights, masks, activations, gradients,
//! datasets) is one of these. Masks are ordinary tensors whose entries are
//! exactly 0.0 or 1.0, which keeps shapes stable across pruning — a pruned
//! weight is zeroed, never removed.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from a shape and row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::input(format!(
                "tensor shape {shape:?} has a zero dimension"
            )));
        }
        if expected != data.len() {
            return Err(Error::input(format!(
                "tensor shape {shape:?} implies {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Number of rows when the first axis is a batch axis.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Elements per row when the first axis is a batch axis.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    /// Copy of rows `start..end` along the batch axis.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        let w = self.row_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor {
            shape,
            data: self.data[start * w..end * w].to_vec(),
        }
    }

    /// Reinterpret the trailing axes as one flat axis of length `row_len`.
    /// The batch axis is preserved; data is untouched.
    pub fn flatten_rows(&self) -> Tensor {
        Tensor {
            shape: vec![self.shape[0], self.row_len()],
            data: self.data.clone(),
        }
    }

    /// Same reshape as [`flatten_rows`](Self::flatten_rows) without copying.
    pub fn flattened_view_shape(&self) -> Vec<usize> {
        vec![self.shape[0], self.row_len()]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Entrywise product with a same-shaped tensor (used for masking).
    pub fn hadamard_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a *= *b;
        }
    }

    /// Squared Euclidean norm of the raw data.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.sq_norm().sqrt()
    }

    /// Count of entries that are exactly zero.
    pub fn count_zeros(&self) -> usize {
        self.data.iter().filter(|&&v| v == 0.0).count()
    }

    /// True when every entry is exactly 0.0 or 1.0.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub(crate) fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn row_access() {
        let t = Tensor::new(vec![2, 3], (0..6).map(|i| i as f64).collect()).unwrap();
        assert_eq!(t.row(0), &[0.0, 1.0, 2.0]);
        assert_eq!(t.row(1), &[3.0, 4.0, 5.0]);
        assert_eq!(t.row_len(), 3);
    }

    #[test]
    fn flatten_preserves_batch_axis() {
        let t = Tensor::zeros(vec![4, 2, 3, 3]);
        assert_eq!(t.flatten_rows().shape(), &[4, 18]);
    }

    #[test]
    fn hadamard_masks_entries() {
        let mut t = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let m = Tensor::from_vec(vec![1.0, 0.0, 1.0]);
        t.hadamard_assign(&m);
        assert_eq!(t.data(), &[1.0, 0.0, 3.0]);
    }
}
