//! Dense row-major tensors.
//!
//! Compute is always f64. The `dtype` field records the *storage* precision:
//! an `F32` tensor holds values that are exactly representable in f32 (they
//! are rounded through f32 on construction), which is what checkpoint
//! serialization writes out. Rank 0–2 covers everything this crate needs;
//! shape `[]` is a scalar, `[n]` a vector, `[r, c]` a matrix.

use crate::error::{CoreError, Result};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Storage precision of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F64,
    F32,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::F64 => "f64",
            Dtype::F32 => "f32",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    dtype: Dtype,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
            dtype: Dtype::F64,
        }
    }

    /// A single number, stored as `[1, 1]` so it composes with the rank-2
    /// elementwise and broadcast rules without special cases.
    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![v],
            dtype: Dtype::F64,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(CoreError::ShapeMismatch {
                op: "Tensor::from_vec",
                expected: format!("{len} elements for shape {shape:?}"),
                got: format!("{}", data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            dtype: Dtype::F64,
        })
    }

    /// Build an `r x 3` coordinate matrix from row triples.
    pub fn from_rows3(rows: &[[f64; 3]]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * 3);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor {
            shape: vec![rows.len(), 3],
            data,
            dtype: Dtype::F64,
        }
    }

    /// Round storage through f32 and tag the tensor accordingly.
    pub fn to_f32_storage(mut self) -> Self {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
        self.dtype = Dtype::F32;
        self
    }

    pub fn to_f64_storage(mut self) -> Self {
        self.dtype = Dtype::F64;
        self
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn shape_string(&self) -> String {
        format!("{:?}", self.shape)
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

    /// True when the tensor holds exactly one number, whatever its rank:
    /// elementwise ops rebuild rank-0 inputs as `[1, 1]`, and both count as
    /// scalars for reductions and `backward`.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Row count of a rank-2 tensor (1 for scalars/vectors).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Column count of a rank-2 tensor (element count otherwise).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            _ => self.data.len(),
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// Copy out rows `start .. start + count` of a rank-2 tensor.
    pub fn row_block(&self, start: usize, count: usize) -> Result<Tensor> {
        let (m, n) = (self.rows(), self.cols());
        if self.shape.len() != 2 || start + count > m {
            return Err(CoreError::ShapeMismatch {
                op: "Tensor::row_block",
                expected: format!("rows {start}..{} within [{m}, {n}]", start + count),
                got: self.shape_string(),
            });
        }
        Ok(Tensor {
            shape: vec![count, n],
            data: self.data[start * n..(start + count) * n].to_vec(),
            dtype: self.dtype,
        })
    }

    pub fn first(&self) -> f64 {
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Error with the given op name if any element is non-finite.
    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(CoreError::NonFinite { op })
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            dtype: self.dtype,
        }
    }

    /// Elementwise `self + alpha * other`; shapes must match exactly.
    pub fn add_scaled(&self, other: &Tensor, alpha: f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(CoreError::ShapeMismatch {
                op: "Tensor::add_scaled",
                expected: self.shape_string(),
                got: other.shape_string(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + alpha * b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
            dtype: self.dtype,
        })
    }

    pub fn scale(&self, alpha: f64) -> Tensor {
        self.map(|v| alpha * v)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Plain (non-differentiable) matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(CoreError::ShapeMismatch {
                op: "Tensor::matmul",
                expected: format!("[m, k] x [k, n], k = {}", self.cols()),
                got: format!("{:?} x {:?}", self.shape, other.shape),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(&self.data, &other.data, &mut out, m, k, n);
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
            dtype: Dtype::F64,
        })
    }

    pub fn transpose(&self) -> Tensor {
        let (m, n) = (self.rows(), self.cols());
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor {
            shape: vec![n, m],
            data,
            dtype: self.dtype,
        }
    }
}

/// `out += a @ b` in ikj order (row-major friendly). `out` must be zeroed by
/// the caller when a fresh product is wanted.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}
