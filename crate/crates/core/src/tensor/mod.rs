//! Dense f64 tensors and a tape-based reverse-mode autodiff graph.
//!
//! One [`graph::Graph`] is built per forward pass and dropped after
//! [`graph::Graph::backward`]; parameters live outside the graph in a
//! [`params::ParamStore`] and are bound as leaves each pass.

pub mod check;
pub mod checkpoint;
pub mod graph;
mod kernels;
pub mod params;

use crate::error::{Error, Result};
use crate::rng::{self, Prng};

/// Row-major dense tensor. Rank 0 (`shape == []`) is a scalar with one element.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} wants {n} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    /// i.i.d. N(0, std^2) entries from the given stream.
    pub fn randn(rng: &mut Prng, shape: Vec<usize>, std: f64) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng::normal(rng) * std).collect();
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
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

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<f64>>) {
        if let Some(g) = &grad {
            assert_eq!(g.len(), self.data.len(), "grad length mismatch");
        }
        self.grad = grad;
    }

    /// Scalar value; panics if the tensor has more than one element.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar {:?}", self.shape);
        self.data[0]
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// NumPy-style broadcast of two shapes; axes align from the right and
/// dimensions must match or be 1.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(Error::shape(
                op,
                format!("cannot broadcast {a:?} with {b:?} (axis {i}: {da} vs {db})"),
            ));
        };
    }
    Ok(out)
}

/// Strides into a tensor of shape `shape` as seen from broadcast shape `out`:
/// broadcast axes get stride 0.
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides(shape);
    let off = out.len() - shape.len();
    let mut r = vec![0usize; out.len()];
    for i in 0..shape.len() {
        r[off + i] = if shape[i] == 1 { 0 } else { s[i] };
    }
    r
}

/// Flat index into a broadcast operand for flat output index `i`.
#[inline]
pub(crate) fn bc_index(i: usize, out_shape: &[usize], bstrides: &[usize]) -> usize {
    let mut rem = i;
    let mut idx = 0usize;
    for d in (0..out_shape.len()).rev() {
        let c = rem % out_shape[d];
        rem /= out_shape[d];
        idx += c * bstrides[d];
    }
    idx
}
