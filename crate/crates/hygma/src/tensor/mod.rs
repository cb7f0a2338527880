//! Dense `f64` tensors and reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain value: a shape plus a row-major `Vec<f64>`. Without a
//! tape it is just data — the spectral and environment code use it as an
//! ordinary matrix type. Differentiable computation goes through [`Tape`]: ops
//! are recorded as nodes in an arena, [`Tape::backward`] replays them in
//! reverse, and gradients accumulate into the tape (and from there into a
//! [`ParamSet`] for persistent parameters).
//!
//! The op inventory is deliberately small; everything else in the crate
//! (GRU cells, ELU, masked softmax attention, losses) is composed from it.

mod check;
mod nn;
mod params;
mod tape;

pub use check::grad_check;
pub use nn::{elu, linear, BoundGru, BoundLinear, GruCell, LinearLayer};
pub use params::{Param, ParamId, ParamSet};
pub use tape::{Tape, Var};

use thiserror::Error;

/// Errors produced by tensor construction and tape operations.
#[derive(Debug, Error)]
pub enum TensorError {
    /// An op received operands whose shapes cannot be combined.
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// An op received an argument outside its domain (bad axis, empty input,
    /// out-of-range index, ...).
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    /// `backward` was called on a non-scalar output.
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    /// `backward` was called on a tape constructed with `Tape::inactive`.
    #[error("tape is inactive; no operations were recorded")]
    InactiveTape,
    /// A non-finite value surfaced where the caller demanded finite ones.
    #[error("non-finite value in {ctx}")]
    NonFinite { ctx: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// A dense row-major `f64` tensor of rank 0, 1 or 2.
///
/// Scalars use shape `[1]`. Tensors are immutable values unless explicitly
/// mutated through `data_mut` (parameter updates do this between tapes).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from raw data; the element count must match the shape.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::Invalid {
                op: "from_vec",
                msg: format!("shape {:?} wants {} elements, got {}", shape, numel, data.len()),
            });
        }
        if shape.len() > 2 {
            return Err(TensorError::Invalid {
                op: "from_vec",
                msg: format!("rank {} unsupported (max 2)", shape.len()),
            });
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// A tensor of zeros.
    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; numel] }
    }

    /// A tensor filled with `v`.
    pub fn full(shape: &[usize], v: f64) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![v; numel] }
    }

    /// A rank-1 scalar wrapper (shape `[1]`).
    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    /// The `n x n` identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Number of rows (rank-1 tensors count as a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Number of columns (length for rank-1 tensors).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    /// Element access for rank-2 tensors.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    /// Element assignment for rank-2 tensors.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j] = v;
    }

    /// Row `i` of a rank-2 tensor as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.rank(), 2);
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    /// True when every element is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Plain (ungraded) matrix product; both operands must be rank 2.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = Tensor::zeros(&[m, n]);
        matmul_into(&self.data, &other.data, &mut out.data, m, k, n);
        Ok(out)
    }

    /// Plain transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Tensor {
        debug_assert_eq!(self.rank(), 2);
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    /// Uniform random tensor on `[lo, hi)`.
    pub fn rand_uniform<R: rand::Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(lo..hi)).collect();
        Self { shape: shape.to_vec(), data }
    }

    /// Standard layer init: uniform on `±sqrt(1/fan_in)`.
    pub fn init_uniform<R: rand::Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        Self::rand_uniform(shape, -bound, bound, rng)
    }
}

/// `out += a @ b` for row-major buffers; the accumulation order is fixed so
/// results are reproducible bit-for-bit.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            let brow = &b[l * n..(l + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}
