//! Dense row-major tensors and a define-by-run reverse-mode tape.
//!
//! [`Tensor`] is a plain value (shape plus flat buffer). Differentiable
//! computation happens on a [`Tape`]: values are registered as leaves, every
//! operation appends a node, and [`Tape::backward`] replays the nodes in
//! reverse to accumulate gradients. A tape is rebuilt for every forward pass.
//!
//! Reductions always sum sequentially in index order so that identical inputs
//! give bit-identical values and gradients.

mod kernels;
mod tape;

use std::fmt::Debug;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use kernels::{gemm, transpose2d};
pub use tape::{Tape, Var};

/// Floating-point element type. `f32` is used for training, `f64` for
/// gradient verification.
pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    /// Checkpoint dtype tag.
    const DTYPE: u8;

    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn to_le_bytes_vec(self) -> Vec<u8>;
    fn from_le_slice(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: u8 = 1;

    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl Scalar for f64 {
    const DTYPE: u8 = 2;

    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

/// Dense row-major array. `product(shape) == data.len()` always holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Contract(format!(
                "tensor shape must be non-empty with positive dims, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        assert!(n > 0, "tensor shape must have positive dims: {shape:?}");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<S>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// Builds an `rows × cols` matrix from nested rows.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Contract("ragged rows".into()));
        }
        Self::new(vec![r, c], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Element at a multi-dimensional index.
    pub fn at(&self, index: &[usize]) -> S {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of range for axis {i} of {:?}", self.shape);
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| T::of(x.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Plain (untaped) matrix product of two rank-2 tensors.
    pub fn matmul(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        if self.rank() != 2 || rhs.rank() != 2 || self.shape[1] != rhs.shape[0] {
            return Err(Error::dim("matmul", &self.shape, &rhs.shape));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], rhs.shape[1]);
        let mut out = vec![S::zero(); m * n];
        gemm(&self.data, &rhs.data, &mut out, m, k, n);
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Tensor<S>> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::dim("transpose", &self.shape, &[]));
        }
        let (rows, cols) = (self.shape[r - 2], self.shape[r - 1]);
        let mut shape = self.shape.clone();
        shape.swap(r - 2, r - 1);
        let mut out = vec![S::zero(); self.len()];
        for (src, dst) in self
            .data
            .chunks_exact(rows * cols)
            .zip(out.chunks_exact_mut(rows * cols))
        {
            transpose2d(src, dst, rows, cols);
        }
        Ok(Tensor { shape, data: out })
    }

    pub fn max_abs_diff(&self, other: &Tensor<S>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// `(outer, len, inner)` decomposition of a shape around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn multi_index_is_row_major() {
        let t = Tensor::<f64>::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(t.at(&[1, 2]), 5.0);
        assert_eq!(t.transpose().unwrap().at(&[2, 1]), 5.0);
    }

    #[test]
    fn plain_matmul_identity() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let i = Tensor::<f64>::identity(2);
        assert_eq!(i.matmul(&a).unwrap(), a);
    }
}
