//! Tape-based reverse-mode autodiff. Ops append nodes to a [`Graph`]; the tape
//! order is the topological order, so backward is a single reverse sweep.

use super::kernels as k;
use super::{broadcast_shape, numel, strides, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    Neg(TensorId),
    Exp(TensorId),
    Log(TensorId),
    Sqrt(TensorId),
    Abs(TensorId),
    Silu(TensorId),
    Softplus(TensorId),
    Matmul(TensorId, TensorId),
    Linear {
        x: TensorId,
        w: TensorId,
        b: TensorId,
    },
    Conv2d {
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        pad: usize,
    },
    Conv1dCausal {
        x: TensorId,
        w: TensorId,
        b: TensorId,
    },
    LayerNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    },
    Softmax(TensorId),
    RowMax {
        x: TensorId,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: TensorId,
        kh: usize,
        kw: usize,
    },
    Concat {
        parts: Vec<TensorId>,
        axis: usize,
    },
    Slice {
        x: TensorId,
        axis: usize,
        start: usize,
        len: usize,
    },
    Reshape(TensorId),
    Permute {
        x: TensorId,
        perm: Vec<usize>,
    },
    PermuteRows {
        x: TensorId,
        perm: Vec<usize>,
    },
    Reverse(TensorId),
    Sum {
        x: TensorId,
        axis: Option<usize>,
    },
    Mean {
        x: TensorId,
        axis: Option<usize>,
    },
    SelectiveScan {
        x: TensorId,
        delta: TensorId,
        b: TensorId,
        c: TensorId,
        a: TensorId,
        d: TensorId,
        h: Vec<f64>,
        abar: Vec<f64>,
    },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

/// One forward pass worth of tape. Build, call [`Graph::backward`] once, read
/// gradients off the leaves, drop.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> TensorId {
        debug_assert_eq!(numel(&shape), value.len());
        debug_assert!(
            value.iter().all(|v| v.is_finite()),
            "non-finite output from {:?}",
            op_name(&op)
        );
        self.nodes.push(Node {
            shape,
            value,
            grad: None,
            needs_grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    /// Insert a tensor as a leaf. Gradient is tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> TensorId {
        let ng = t.requires_grad();
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, ng)
    }

    /// Leaf that never tracks gradient.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<TensorId> {
        if numel(&shape) != data.len() {
            return Err(Error::shape(
                "constant",
                format!("shape {shape:?} wants {} elements, got {}", numel(&shape), data.len()),
            ));
        }
        Ok(self.push(shape, data, Op::Leaf, false))
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.push(vec![], vec![v], Op::Leaf, false)
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn needs_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, id: TensorId) -> f64 {
        assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    /// Copy a node out as a plain tensor (gradient included if present).
    pub fn to_tensor(&self, id: TensorId) -> Tensor {
        let n = &self.nodes[id.0];
        let mut t = Tensor::from_vec(n.shape.clone(), n.value.clone()).expect("node is consistent");
        if n.needs_grad {
            t = t.with_grad();
            t.set_grad(n.grad.clone());
        }
        t
    }

    /// Re-insert a node's current value as a constant leaf, cutting gradient flow.
    pub fn detach(&mut self, id: TensorId) -> TensorId {
        let shape = self.nodes[id.0].shape.clone();
        let value = self.nodes[id.0].value.clone();
        self.push(shape, value, Op::Leaf, false)
    }

    fn ng2(&self, a: TensorId, b: TensorId) -> bool {
        self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad
    }

    // ------------------------------------------------------------ elementwise

    fn binary(
        &mut self,
        opname: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        let out_shape = broadcast_shape(opname, self.shape(a), self.shape(b))?;
        let value = k::binary_forward(
            &f,
            self.value(a),
            self.shape(a),
            self.value(b),
            self.shape(b),
            &out_shape,
        );
        let ng = self.ng2(a, b);
        Ok(self.push(out_shape, value, op, ng))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, x: TensorId, f: impl Fn(f64) -> f64, op: Op) -> TensorId {
        let value = k::unary_forward(f, self.value(x));
        let shape = self.shape(x).to_vec();
        let ng = self.nodes[x.0].needs_grad;
        self.push(shape, value, op, ng)
    }

    pub fn neg(&mut self, x: TensorId) -> TensorId {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    pub fn exp(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn sqrt(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn abs(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn silu(&mut self, x: TensorId) -> TensorId {
        self.unary(x, k::silu, Op::Silu(x))
    }

    pub fn softplus(&mut self, x: TensorId) -> TensorId {
        self.unary(x, k::softplus, Op::Softplus(x))
    }

    // ----------------------------------------------------------- linear algebra

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(
                "matmul",
                format!("expected [m,k] x [k,n], got {sa:?} x {sb:?}"),
            ));
        }
        let (m, kk, n) = (sa[0], sa[1], sb[1]);
        let value = k::matmul_forward(self.value(a), self.value(b), m, kk, n);
        let ng = self.ng2(a, b);
        Ok(self.push(vec![m, n], value, Op::Matmul(a, b), ng))
    }

    /// x [..., cin] x w [cin, cout] + b [cout]; leading axes of x are folded.
    pub fn linear(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.is_empty() || sw.len() != 2 || sb.len() != 1 {
            return Err(Error::shape(
                "linear",
                format!("expected x [..,cin], w [cin,cout], b [cout]; got {sx:?}, {sw:?}, {sb:?}"),
            ));
        }
        let cin = *sx.last().unwrap();
        if sw[0] != cin || sb[0] != sw[1] {
            return Err(Error::shape(
                "linear",
                format!("x last axis {cin} vs w {sw:?}, b {sb:?}"),
            ));
        }
        let cout = sw[1];
        let rows = numel(sx) / cin;
        let value = k::linear_forward(self.value(x), self.value(w), self.value(b), rows, cin, cout);
        let mut out_shape = sx[..sx.len() - 1].to_vec();
        out_shape.push(cout);
        let ng = self.ng2(x, w) || self.nodes[b.0].needs_grad;
        Ok(self.push(out_shape, value, Op::Linear { x, w, b }, ng))
    }

    /// x [n,ci,h,w], w [co,ci,kh,kw], b [co].
    pub fn conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        pad: usize,
    ) -> Result<TensorId> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 4 || sw.len() != 4 || sb.len() != 1 || sx[1] != sw[1] || sb[0] != sw[0] {
            return Err(Error::shape(
                "conv2d",
                format!("expected x [n,ci,h,w], w [co,ci,kh,kw], b [co]; got {sx:?}, {sw:?}, {sb:?}"),
            ));
        }
        if stride == 0 {
            return Err(Error::contract("conv2d", "stride must be positive"));
        }
        let dims = k::Conv2dDims {
            n: sx[0],
            ci: sx[1],
            h: sx[2],
            w: sx[3],
            co: sw[0],
            kh: sw[2],
            kw: sw[3],
            stride,
            pad,
            ho: 0,
            wo: 0,
        };
        let ho = dims.out_len(sx[2], sw[2]);
        let wo = dims.out_len(sx[3], sw[3]);
        if ho == 0 || wo == 0 || sx[2] + 2 * pad < sw[2] || sx[3] + 2 * pad < sw[3] {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {:?} does not fit input {sx:?} with pad {pad}", &sw[2..]),
            ));
        }
        let dims = k::Conv2dDims { ho, wo, ..dims };
        let value = k::conv2d_forward(self.value(x), self.value(w), self.value(b), &dims);
        let shape = vec![dims.n, dims.co, ho, wo];
        let ng = self.ng2(x, w) || self.nodes[b.0].needs_grad;
        Ok(self.push(shape, value, Op::Conv2d { x, w, b, stride, pad }, ng))
    }

    /// Causal depthwise conv along axis 0: x [l,c], w [c,k], b [c].
    pub fn conv1d_causal(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 2 || sw.len() != 2 || sb.len() != 1 || sw[0] != sx[1] || sb[0] != sx[1] {
            return Err(Error::shape(
                "conv1d_causal",
                format!("expected x [l,c], w [c,k], b [c]; got {sx:?}, {sw:?}, {sb:?}"),
            ));
        }
        let (l, c, kk) = (sx[0], sx[1], sw[1]);
        let value = k::conv1d_causal_forward(self.value(x), self.value(w), self.value(b), l, c, kk);
        let ng = self.ng2(x, w) || self.nodes[b.0].needs_grad;
        Ok(self.push(vec![l, c], value, Op::Conv1dCausal { x, w, b }, ng))
    }

    // ------------------------------------------------------- norm / activation

    pub fn layer_norm(&mut self, x: TensorId, gamma: TensorId, beta: TensorId) -> Result<TensorId> {
        let (sx, sg, sb) = (self.shape(x), self.shape(gamma), self.shape(beta));
        if sx.is_empty() || sg.len() != 1 || sb.len() != 1 {
            return Err(Error::shape(
                "layer_norm",
                format!("expected x [..,d], gamma [d], beta [d]; got {sx:?}, {sg:?}, {sb:?}"),
            ));
        }
        let d = *sx.last().unwrap();
        if sg[0] != d || sb[0] != d {
            return Err(Error::shape(
                "layer_norm",
                format!("normalized axis {d} vs gamma {sg:?}, beta {sb:?}"),
            ));
        }
        let rows = numel(sx) / d;
        let value = k::layer_norm_forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            rows,
            d,
            LAYER_NORM_EPS,
        );
        let shape = sx.to_vec();
        let ng = self.ng2(x, gamma) || self.nodes[beta.0].needs_grad;
        Ok(self.push(
            shape,
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps: LAYER_NORM_EPS,
            },
            ng,
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: TensorId) -> Result<TensorId> {
        let sx = self.shape(x);
        if sx.is_empty() {
            return Err(Error::shape("softmax", "expected rank >= 1".to_string()));
        }
        let d = *sx.last().unwrap();
        let rows = numel(sx) / d;
        let value = k::softmax_forward(self.value(x), rows, d);
        let shape = sx.to_vec();
        let ng = self.nodes[x.0].needs_grad;
        Ok(self.push(shape, value, Op::Softmax(x), ng))
    }

    /// Max over the last axis (shape drops that axis). Subgradient routes to
    /// the first maximizing element.
    pub fn row_max(&mut self, x: TensorId) -> Result<TensorId> {
        let sx = self.shape(x);
        if sx.is_empty() || *sx.last().unwrap() == 0 {
            return Err(Error::shape("row_max", format!("bad input shape {sx:?}")));
        }
        let d = *sx.last().unwrap();
        let rows = numel(sx) / d;
        let (value, argmax) = k::row_max_forward(self.value(x), rows, d);
        let shape = sx[..sx.len() - 1].to_vec();
        let ng = self.nodes[x.0].needs_grad;
        Ok(self.push(shape, value, Op::RowMax { x, argmax }, ng))
    }

    /// Non-overlapping average pooling on [n,c,h,w]; trailing remainder rows
    /// and columns are dropped.
    pub fn avg_pool(&mut self, x: TensorId, kh: usize, kw: usize) -> Result<TensorId> {
        let sx = self.shape(x);
        if sx.len() != 4 {
            return Err(Error::shape("avg_pool", format!("expected [n,c,h,w], got {sx:?}")));
        }
        if kh == 0 || kw == 0 || sx[2] / kh == 0 || sx[3] / kw == 0 {
            return Err(Error::shape(
                "avg_pool",
                format!("kernel {kh}x{kw} does not fit input {sx:?}"),
            ));
        }
        let value = k::avg_pool_forward(self.value(x), sx[0], sx[1], sx[2], sx[3], kh, kw);
        let shape = vec![sx[0], sx[1], sx[2] / kh, sx[3] / kw];
        let ng = self.nodes[x.0].needs_grad;
        Ok(self.push(shape, value, Op::AvgPool { x, kh, kw }, ng))
    }

    // -------------------------------------------------------------- reshaping

    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs".to_string()));
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::shape(
                "concat",
                format!("axis {axis} out of range for rank {}", first.len()),
            ));
        }
        let mut dim = 0usize;
        for &p in parts {
            let sp = self.shape(p);
            if sp.len() != first.len()
                || sp
                    .iter()
                    .zip(first.iter())
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::shape(
                    "concat",
                    format!("incompatible shapes {:?} vs {sp:?} on axis {axis}", first),
                ));
            }
            dim += sp[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = dim;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut value = vec![0.0; numel(&out_shape)];
        let row = dim * inner;
        let mut offset = 0usize;
        for &p in parts {
            let d = self.shape(p)[axis];
            let src = self.value(p);
            for o in 0..outer {
                let dst = o * row + offset * inner;
                value[dst..dst + d * inner].copy_from_slice(&src[o * d * inner..(o + 1) * d * inner]);
            }
            offset += d;
        }
        let ng = parts.iter().any(|&p| self.nodes[p.0].needs_grad);
        Ok(self.push(
            out_shape,
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            ng,
        ))
    }

    pub fn slice(&mut self, x: TensorId, axis: usize, start: usize, len: usize) -> Result<TensorId> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || len == 0 || start + len > sx[axis] {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{} on axis {axis} of {sx:?}", start + len),
            ));
        }
        let outer: usize = sx[..axis].iter().product();
        let inner: usize = sx[axis + 1..].iter().product();
        let mut out_shape = sx.clone();
        out_shape[axis] = len;
        let src = self.value(x);
        let mut value = vec![0.0; numel(&out_shape)];
        for o in 0..outer {
            let s = (o * sx[axis] + start) * inner;
            value[o * len * inner..(o + 1) * len * inner].copy_from_slice(&src[s..s + len * inner]);
        }
        let ng = self.nodes[x.0].needs_grad;
        Ok(self.push(out_shape, value, Op::Slice { x, axis, start, len }, ng))
    }

    pub fn reshape(&mut self, x: TensorId, new_shape: Vec<usize>) -> Result<TensorId> {
        if numel(&new_shape) != self.value(x).len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {new_shape:?} changes element count", self.shape(x)),
            ));
        }
        let value = self.value(x).to_vec();
        let ng = self.nodes[x.0].needs_grad;
        Ok(self.push(new_shape, value, Op::Reshape(x), ng))
    }

    pub fn permute(&mut self, x: TensorId, perm: &[usize]) -> Result<TensorId> {
        let sx = self.shape(x);
        let mut seen = vec![false; sx.len()];
        if perm.len() != sx.len() || perm.iter().any(|&p| p >= sx.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(
                "transpose",
                format!("perm {perm:?} is not a permutation of axes of {sx:?}"),
            ));
        }
        let value = k::permute_forward(self.value(x), sx, perm);
        let out_shape: Vec<usize> = perm.iter().map(|&p| sx[p]).collect();
        let ng = self.nodes[x.0].needs_grad;
        Ok(self.push(
            out_shape,
            value,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            ng,
        ))
    }

    /// Reorder rows of the leading axis: out[i] = x[perm[i]].
    pub fn permute_rows(&mut self, x: TensorId, perm: &[usize]) -> Result<TensorId> {
        let sx = self.shape(x);
        if sx.is_empty() {
            return Err(Error::shape("permute_rows", "expected rank >= 1".to_string()));
        }
        let rows = sx[0];
        let mut seen = vec![false; rows];
        if perm.len() != rows || perm.iter().any(|&p| p >= rows || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(
                "permute_rows",
                format!("perm of length {} is not a permutation of {rows} rows", perm.len()),
            ));
        }
        let row_len = numel(sx) / rows.max(1);
        let value = k::permute_rows_forward(self.value(x), perm, row_len);
        let shape = sx.to_vec();
        let ng = self.nodes[x.0].needs_grad;
        Ok(self.push(
            shape,
            value,
            Op::PermuteRows {
                x,
                perm: perm.to_vec(),
            },
            ng,
        ))
    }

    /// Reverse along axis 0.
    pub fn reverse(&mut self, x: TensorId) -> Result<TensorId> {
        let sx = self.shape(x);
        if sx.is_empty() {
            return Err(Error::shape("reverse", "expected rank >= 1".to_string()));
        }
        let rows = sx[0];
        let row_len = numel(sx) / rows.max(1);
        let value = k::reverse_rows(self.value(x), rows, row_len);
        let shape = sx.to_vec();
        let ng = self.nodes[x.0].needs_grad;
        Ok(self.push(shape, value, Op::Reverse(x), ng))
    }

    // -------------------------------------------------------------- reductions

    /// Sum over one axis, or over everything (`axis == None`, scalar output).
    pub fn sum(&mut self, x: TensorId, axis: Option<usize>) -> Result<TensorId> {
        let sx = self.shape(x).to_vec();
        match axis {
            None => {
                let v: f64 = self.value(x).iter().sum();
                let ng = self.nodes[x.0].needs_grad;
                Ok(self.push(vec![], vec![v], Op::Sum { x, axis }, ng))
            }
            Some(ax) => {
                if ax >= sx.len() {
                    return Err(Error::shape(
                        "sum",
                        format!("axis {ax} out of range for {sx:?}"),
                    ));
                }
                let value = k::sum_axis_forward(self.value(x), &sx, ax);
                let mut out_shape = sx.clone();
                out_shape.remove(ax);
                let ng = self.nodes[x.0].needs_grad;
                Ok(self.push(out_shape, value, Op::Sum { x, axis }, ng))
            }
        }
    }

    pub fn mean(&mut self, x: TensorId, axis: Option<usize>) -> Result<TensorId> {
        let sx = self.shape(x).to_vec();
        match axis {
            None => {
                let n = self.value(x).len();
                if n == 0 {
                    return Err(Error::shape("mean", "empty tensor".to_string()));
                }
                let v: f64 = self.value(x).iter().sum::<f64>() / n as f64;
                let ng = self.nodes[x.0].needs_grad;
                Ok(self.push(vec![], vec![v], Op::Mean { x, axis }, ng))
            }
            Some(ax) => {
                if ax >= sx.len() || sx[ax] == 0 {
                    return Err(Error::shape(
                        "mean",
                        format!("axis {ax} out of range for {sx:?}"),
                    ));
                }
                let mut value = k::sum_axis_forward(self.value(x), &sx, ax);
                let inv = 1.0 / sx[ax] as f64;
                for v in &mut value {
                    *v *= inv;
                }
                let mut out_shape = sx.clone();
                out_shape.remove(ax);
                let ng = self.nodes[x.0].needs_grad;
                Ok(self.push(out_shape, value, Op::Mean { x, axis }, ng))
            }
        }
    }

    // ---------------------------------------------------------- selective scan

    /// Diagonal selective scan: x, delta [l,c]; b, c [l,s]; a [c,s]; d [c].
    /// Output y [l,c]. The full hidden-state history is saved for backward.
    pub fn selective_scan(
        &mut self,
        x: TensorId,
        delta: TensorId,
        b: TensorId,
        c: TensorId,
        a: TensorId,
        d: TensorId,
    ) -> Result<TensorId> {
        let (sx, sdel, sb, sc, sa, sd) = (
            self.shape(x),
            self.shape(delta),
            self.shape(b),
            self.shape(c),
            self.shape(a),
            self.shape(d),
        );
        let ok = sx.len() == 2
            && sdel == sx
            && sb.len() == 2
            && sb[0] == sx[0]
            && sc == sb
            && sa.len() == 2
            && sa[0] == sx[1]
            && sa[1] == sb[1]
            && sd.len() == 1
            && sd[0] == sx[1];
        if !ok {
            return Err(Error::shape(
                "selective_scan",
                format!(
                    "expected x,delta [l,c]; b,c [l,s]; a [c,s]; d [c]; got {sx:?}, {sdel:?}, {sb:?}, {sc:?}, {sa:?}, {sd:?}"
                ),
            ));
        }
        debug_assert!(
            self.value(delta).iter().all(|&v| v > 0.0),
            "selective_scan: nonpositive step size"
        );
        let (l, ch, st) = (sx[0], sx[1], sb[1]);
        let (y, h, abar) = k::selective_scan_forward(
            self.value(x),
            self.value(delta),
            self.value(b),
            self.value(c),
            self.value(a),
            self.value(d),
            l,
            ch,
            st,
        );
        let ng = self.ng2(x, delta) || self.ng2(b, c) || self.ng2(a, d);
        Ok(self.push(
            vec![l, ch],
            y,
            Op::SelectiveScan {
                x,
                delta,
                b,
                c,
                a,
                d,
                h,
                abar,
            },
            ng,
        ))
    }

    // ---------------------------------------------------------------- backward

    /// Reverse sweep from a scalar root. Fills `grad` on every node that
    /// requires gradient and lies on a path to the root.
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::contract(
                "backward",
                format!("root must be scalar, got shape {:?}", self.shape(root)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);
        for id in (0..=root.0).rev() {
            if !self.nodes[id].needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            debug_assert!(
                g.iter().all(|v| v.is_finite()),
                "non-finite gradient flowing into {:?}",
                op_name(&self.nodes[id].op)
            );
            self.dispatch_backward(id, &g, &mut grads);
            self.nodes[id].grad = Some(g);
        }
        Ok(())
    }

    fn accum(&self, grads: &mut [Option<Vec<f64>>], id: TensorId, delta: &[f64]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let slot = grads[id.0].get_or_insert_with(|| vec![0.0; self.nodes[id.0].value.len()]);
        debug_assert_eq!(slot.len(), delta.len());
        for (s, d) in slot.iter_mut().zip(delta) {
            *s += d;
        }
    }

    fn dispatch_backward(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out_shape = &node.shape;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let da = k::reduce_to_shape(g, out_shape, self.shape(*a));
                self.accum(grads, *a, &da);
                let db = k::reduce_to_shape(g, out_shape, self.shape(*b));
                self.accum(grads, *b, &db);
            }
            Op::Sub(a, b) => {
                let da = k::reduce_to_shape(g, out_shape, self.shape(*a));
                self.accum(grads, *a, &da);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                let db = k::reduce_to_shape(&neg, out_shape, self.shape(*b));
                self.accum(grads, *b, &db);
            }
            Op::Mul(a, b) => {
                let raw_a = k::binary_forward(
                    |gv, bv| gv * bv,
                    g,
                    out_shape,
                    self.value(*b),
                    self.shape(*b),
                    out_shape,
                );
                let da = k::reduce_to_shape(&raw_a, out_shape, self.shape(*a));
                self.accum(grads, *a, &da);
                let raw_b = k::binary_forward(
                    |gv, av| gv * av,
                    g,
                    out_shape,
                    self.value(*a),
                    self.shape(*a),
                    out_shape,
                );
                let db = k::reduce_to_shape(&raw_b, out_shape, self.shape(*b));
                self.accum(grads, *b, &db);
            }
            Op::Div(a, b) => {
                let raw_a = k::binary_forward(
                    |gv, bv| gv / bv,
                    g,
                    out_shape,
                    self.value(*b),
                    self.shape(*b),
                    out_shape,
                );
                let da = k::reduce_to_shape(&raw_a, out_shape, self.shape(*a));
                self.accum(grads, *a, &da);
                // d/db (a/b) = -a / b^2 = -out / b
                let gy: Vec<f64> = g.iter().zip(&node.value).map(|(gv, yv)| gv * yv).collect();
                let raw_b = k::binary_forward(
                    |gyv, bv| -gyv / bv,
                    &gy,
                    out_shape,
                    self.value(*b),
                    self.shape(*b),
                    out_shape,
                );
                let db = k::reduce_to_shape(&raw_b, out_shape, self.shape(*b));
                self.accum(grads, *b, &db);
            }
            Op::Neg(x) => {
                let dx: Vec<f64> = g.iter().map(|v| -v).collect();
                self.accum(grads, *x, &dx);
            }
            Op::Exp(x) => {
                let dx: Vec<f64> = g.iter().zip(&node.value).map(|(gv, yv)| gv * yv).collect();
                self.accum(grads, *x, &dx);
            }
            Op::Log(x) => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(self.value(*x))
                    .map(|(gv, xv)| gv / xv)
                    .collect();
                self.accum(grads, *x, &dx);
            }
            Op::Sqrt(x) => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(&node.value)
                    .map(|(gv, yv)| gv * 0.5 / yv)
                    .collect();
                self.accum(grads, *x, &dx);
            }
            Op::Abs(x) => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(self.value(*x))
                    .map(|(gv, xv)| gv * if *xv > 0.0 {
                        1.0
                    } else if *xv < 0.0 {
                        -1.0
                    } else {
                        0.0
                    })
                    .collect();
                self.accum(grads, *x, &dx);
            }
            Op::Silu(x) => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(self.value(*x))
                    .map(|(gv, xv)| gv * k::silu_prime(*xv))
                    .collect();
                self.accum(grads, *x, &dx);
            }
            Op::Softplus(x) => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(self.value(*x))
                    .map(|(gv, xv)| gv * k::sigmoid(*xv))
                    .collect();
                self.accum(grads, *x, &dx);
            }
            Op::Matmul(a, b) => {
                let (m, kk) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let mut da = vec![0.0; m * kk];
                let mut db = vec![0.0; kk * n];
                k::matmul_backward(g, self.value(*a), self.value(*b), m, kk, n, &mut da, &mut db);
                self.accum(grads, *a, &da);
                self.accum(grads, *b, &db);
            }
            Op::Linear { x, w, b } => {
                let cin = self.shape(*w)[0];
                let cout = self.shape(*w)[1];
                let rows = self.value(*x).len() / cin;
                let mut dx = vec![0.0; rows * cin];
                let mut dw = vec![0.0; cin * cout];
                let mut db = vec![0.0; cout];
                k::linear_backward(
                    g,
                    self.value(*x),
                    self.value(*w),
                    rows,
                    cin,
                    cout,
                    &mut dx,
                    &mut dw,
                    &mut db,
                );
                self.accum(grads, *x, &dx);
                self.accum(grads, *w, &dw);
                self.accum(grads, *b, &db);
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let sx = self.shape(*x);
                let sw = self.shape(*w);
                let dims = k::Conv2dDims {
                    n: sx[0],
                    ci: sx[1],
                    h: sx[2],
                    w: sx[3],
                    co: sw[0],
                    kh: sw[2],
                    kw: sw[3],
                    stride: *stride,
                    pad: *pad,
                    ho: out_shape[2],
                    wo: out_shape[3],
                };
                let mut dx = vec![0.0; self.value(*x).len()];
                let mut dw = vec![0.0; self.value(*w).len()];
                let mut db = vec![0.0; self.value(*b).len()];
                k::conv2d_backward(g, self.value(*x), self.value(*w), &dims, &mut dx, &mut dw, &mut db);
                self.accum(grads, *x, &dx);
                self.accum(grads, *w, &dw);
                self.accum(grads, *b, &db);
            }
            Op::Conv1dCausal { x, w, b } => {
                let (l, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let kk = self.shape(*w)[1];
                let mut dx = vec![0.0; l * c];
                let mut dw = vec![0.0; c * kk];
                let mut db = vec![0.0; c];
                k::conv1d_causal_backward(g, self.value(*x), self.value(*w), l, c, kk, &mut dx, &mut dw, &mut db);
                self.accum(grads, *x, &dx);
                self.accum(grads, *w, &dw);
                self.accum(grads, *b, &db);
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let d = *self.shape(*x).last().unwrap();
                let rows = self.value(*x).len() / d;
                let mut dx = vec![0.0; rows * d];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                k::layer_norm_backward(
                    g,
                    self.value(*x),
                    self.value(*gamma),
                    rows,
                    d,
                    *eps,
                    &mut dx,
                    &mut dgamma,
                    &mut dbeta,
                );
                self.accum(grads, *x, &dx);
                self.accum(grads, *gamma, &dgamma);
                self.accum(grads, *beta, &dbeta);
            }
            Op::Softmax(x) => {
                let d = *out_shape.last().unwrap();
                let rows = node.value.len() / d;
                let mut dx = vec![0.0; node.value.len()];
                k::softmax_backward(g, &node.value, rows, d, &mut dx);
                self.accum(grads, *x, &dx);
            }
            Op::RowMax { x, argmax } => {
                let d = *self.shape(*x).last().unwrap();
                let mut dx = vec![0.0; self.value(*x).len()];
                for (r, &am) in argmax.iter().enumerate() {
                    dx[r * d + am] += g[r];
                }
                self.accum(grads, *x, &dx);
            }
            Op::AvgPool { x, kh, kw } => {
                let sx = self.shape(*x);
                let mut dx = vec![0.0; self.value(*x).len()];
                k::avg_pool_backward(g, sx[0], sx[1], sx[2], sx[3], *kh, *kw, &mut dx);
                self.accum(grads, *x, &dx);
            }
            Op::Concat { parts, axis } => {
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let dim = out_shape[*axis];
                let row = dim * inner;
                let mut offset = 0usize;
                for &p in parts {
                    let d = self.shape(p)[*axis];
                    let mut dp = vec![0.0; self.value(p).len()];
                    for o in 0..outer {
                        let src = o * row + offset * inner;
                        dp[o * d * inner..(o + 1) * d * inner].copy_from_slice(&g[src..src + d * inner]);
                    }
                    self.accum(grads, p, &dp);
                    offset += d;
                }
            }
            Op::Slice { x, axis, start, len } => {
                let sx = self.shape(*x);
                let outer: usize = sx[..*axis].iter().product();
                let inner: usize = sx[*axis + 1..].iter().product();
                let mut dx = vec![0.0; self.value(*x).len()];
                for o in 0..outer {
                    let dst = (o * sx[*axis] + start) * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                self.accum(grads, *x, &dx);
            }
            Op::Reshape(x) => {
                self.accum(grads, *x, g);
            }
            Op::Permute { x, perm } => {
                let inv = k::invert_perm(perm);
                let dx = k::permute_forward(g, out_shape, &inv);
                self.accum(grads, *x, &dx);
            }
            Op::PermuteRows { x, perm } => {
                let rows = out_shape[0];
                let row_len = node.value.len() / rows.max(1);
                let mut dx = vec![0.0; node.value.len()];
                for (i, &p) in perm.iter().enumerate() {
                    for j in 0..row_len {
                        dx[p * row_len + j] += g[i * row_len + j];
                    }
                }
                self.accum(grads, *x, &dx);
            }
            Op::Reverse(x) => {
                let rows = out_shape[0];
                let row_len = node.value.len() / rows.max(1);
                let dx = k::reverse_rows(g, rows, row_len);
                self.accum(grads, *x, &dx);
            }
            Op::Sum { x, axis } => match axis {
                None => {
                    let dx = vec![g[0]; self.value(*x).len()];
                    self.accum(grads, *x, &dx);
                }
                Some(ax) => {
                    let sx = self.shape(*x);
                    let st = strides(sx);
                    let dx: Vec<f64> = (0..self.value(*x).len())
                        .map(|i| g[k::reduced_index(i, st[*ax], sx[*ax])])
                        .collect();
                    self.accum(grads, *x, &dx);
                }
            },
            Op::Mean { x, axis } => match axis {
                None => {
                    let inv = 1.0 / self.value(*x).len() as f64;
                    let dx = vec![g[0] * inv; self.value(*x).len()];
                    self.accum(grads, *x, &dx);
                }
                Some(ax) => {
                    let sx = self.shape(*x);
                    let st = strides(sx);
                    let inv = 1.0 / sx[*ax] as f64;
                    let dx: Vec<f64> = (0..self.value(*x).len())
                        .map(|i| g[k::reduced_index(i, st[*ax], sx[*ax])] * inv)
                        .collect();
                    self.accum(grads, *x, &dx);
                }
            },
            Op::SelectiveScan {
                x,
                delta,
                b,
                c,
                a,
                d,
                h,
                abar,
            } => {
                let (l, ch) = (out_shape[0], out_shape[1]);
                let s = self.shape(*b)[1];
                let mut dx = vec![0.0; l * ch];
                let mut ddelta = vec![0.0; l * ch];
                let mut db = vec![0.0; l * s];
                let mut dc = vec![0.0; l * s];
                let mut da = vec![0.0; ch * s];
                let mut dd = vec![0.0; ch];
                k::selective_scan_backward(
                    g,
                    self.value(*x),
                    self.value(*delta),
                    self.value(*b),
                    self.value(*c),
                    self.value(*a),
                    self.value(*d),
                    h,
                    abar,
                    l,
                    ch,
                    s,
                    &mut dx,
                    &mut ddelta,
                    &mut db,
                    &mut dc,
                    &mut da,
                    &mut dd,
                );
                self.accum(grads, *x, &dx);
                self.accum(grads, *delta, &ddelta);
                self.accum(grads, *b, &db);
                self.accum(grads, *c, &dc);
                self.accum(grads, *a, &da);
                self.accum(grads, *d, &dd);
            }
        }
    }

    // ------------------------------------------------------------------ replay

    /// Recompute every non-leaf node from its inputs' stored values and compare
    /// bit-for-bit with what the tape recorded. Returns the id of the first
    /// mismatching node, or None if the whole tape replays exactly.
    pub fn replay_mismatch(&self) -> Option<usize> {
        for id in 0..self.nodes.len() {
            if let Some(v) = self.recompute(id) {
                let stored = &self.nodes[id].value;
                if v.len() != stored.len()
                    || v.iter().zip(stored).any(|(a, b)| a.to_bits() != b.to_bits())
                {
                    return Some(id);
                }
            }
        }
        None
    }

    fn recompute(&self, id: usize) -> Option<Vec<f64>> {
        let node = &self.nodes[id];
        let out_shape = &node.shape;
        Some(match &node.op {
            Op::Leaf => return None,
            Op::Add(a, b) => k::binary_forward(
                |x, y| x + y,
                self.value(*a),
                self.shape(*a),
                self.value(*b),
                self.shape(*b),
                out_shape,
            ),
            Op::Sub(a, b) => k::binary_forward(
                |x, y| x - y,
                self.value(*a),
                self.shape(*a),
                self.value(*b),
                self.shape(*b),
                out_shape,
            ),
            Op::Mul(a, b) => k::binary_forward(
                |x, y| x * y,
                self.value(*a),
                self.shape(*a),
                self.value(*b),
                self.shape(*b),
                out_shape,
            ),
            Op::Div(a, b) => k::binary_forward(
                |x, y| x / y,
                self.value(*a),
                self.shape(*a),
                self.value(*b),
                self.shape(*b),
                out_shape,
            ),
            Op::Neg(x) => k::unary_forward(|v| -v, self.value(*x)),
            Op::Exp(x) => k::unary_forward(f64::exp, self.value(*x)),
            Op::Log(x) => k::unary_forward(f64::ln, self.value(*x)),
            Op::Sqrt(x) => k::unary_forward(f64::sqrt, self.value(*x)),
            Op::Abs(x) => k::unary_forward(f64::abs, self.value(*x)),
            Op::Silu(x) => k::unary_forward(k::silu, self.value(*x)),
            Op::Softplus(x) => k::unary_forward(k::softplus, self.value(*x)),
            Op::Matmul(a, b) => {
                let (m, kk) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                k::matmul_forward(self.value(*a), self.value(*b), m, kk, n)
            }
            Op::Linear { x, w, b } => {
                let cin = self.shape(*w)[0];
                let cout = self.shape(*w)[1];
                let rows = self.value(*x).len() / cin;
                k::linear_forward(self.value(*x), self.value(*w), self.value(*b), rows, cin, cout)
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let sx = self.shape(*x);
                let sw = self.shape(*w);
                let dims = k::Conv2dDims {
                    n: sx[0],
                    ci: sx[1],
                    h: sx[2],
                    w: sx[3],
                    co: sw[0],
                    kh: sw[2],
                    kw: sw[3],
                    stride: *stride,
                    pad: *pad,
                    ho: out_shape[2],
                    wo: out_shape[3],
                };
                k::conv2d_forward(self.value(*x), self.value(*w), self.value(*b), &dims)
            }
            Op::Conv1dCausal { x, w, b } => {
                let (l, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                k::conv1d_causal_forward(self.value(*x), self.value(*w), self.value(*b), l, c, self.shape(*w)[1])
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let d = *self.shape(*x).last().unwrap();
                let rows = self.value(*x).len() / d;
                k::layer_norm_forward(self.value(*x), self.value(*gamma), self.value(*beta), rows, d, *eps)
            }
            Op::Softmax(x) => {
                let d = *out_shape.last().unwrap();
                k::softmax_forward(self.value(*x), node.value.len() / d, d)
            }
            Op::RowMax { x, .. } => {
                let d = *self.shape(*x).last().unwrap();
                k::row_max_forward(self.value(*x), self.value(*x).len() / d, d).0
            }
            Op::AvgPool { x, kh, kw } => {
                let sx = self.shape(*x);
                k::avg_pool_forward(self.value(*x), sx[0], sx[1], sx[2], sx[3], *kh, *kw)
            }
            Op::Concat { parts, axis } => {
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let dim = out_shape[*axis];
                let row = dim * inner;
                let mut value = vec![0.0; node.value.len()];
                let mut offset = 0usize;
                for &p in parts {
                    let d = self.shape(p)[*axis];
                    let src = self.value(p);
                    for o in 0..outer {
                        let dst = o * row + offset * inner;
                        value[dst..dst + d * inner]
                            .copy_from_slice(&src[o * d * inner..(o + 1) * d * inner]);
                    }
                    offset += d;
                }
                value
            }
            Op::Slice { x, axis, start, len } => {
                let sx = self.shape(*x);
                let outer: usize = sx[..*axis].iter().product();
                let inner: usize = sx[*axis + 1..].iter().product();
                let src = self.value(*x);
                let mut value = vec![0.0; node.value.len()];
                for o in 0..outer {
                    let s = (o * sx[*axis] + start) * inner;
                    value[o * len * inner..(o + 1) * len * inner].copy_from_slice(&src[s..s + len * inner]);
                }
                value
            }
            Op::Reshape(x) => self.value(*x).to_vec(),
            Op::Permute { x, perm } => k::permute_forward(self.value(*x), self.shape(*x), perm),
            Op::PermuteRows { x, perm } => {
                let rows = out_shape[0];
                k::permute_rows_forward(self.value(*x), perm, node.value.len() / rows.max(1))
            }
            Op::Reverse(x) => {
                let rows = out_shape[0];
                k::reverse_rows(self.value(*x), rows, node.value.len() / rows.max(1))
            }
            Op::Sum { x, axis } => match axis {
                None => vec![self.value(*x).iter().sum()],
                Some(ax) => k::sum_axis_forward(self.value(*x), self.shape(*x), *ax),
            },
            Op::Mean { x, axis } => match axis {
                None => vec![self.value(*x).iter().sum::<f64>() / self.value(*x).len() as f64],
                Some(ax) => {
                    let mut v = k::sum_axis_forward(self.value(*x), self.shape(*x), *ax);
                    let inv = 1.0 / self.shape(*x)[*ax] as f64;
                    for e in &mut v {
                        *e *= inv;
                    }
                    v
                }
            },
            Op::SelectiveScan { x, delta, b, c, a, d, .. } => {
                let (l, ch) = (out_shape[0], out_shape[1]);
                let s = self.shape(*b)[1];
                k::selective_scan_forward(
                    self.value(*x),
                    self.value(*delta),
                    self.value(*b),
                    self.value(*c),
                    self.value(*a),
                    self.value(*d),
                    l,
                    ch,
                    s,
                )
                .0
            }
        })
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::Neg(..) => "neg",
        Op::Exp(..) => "exp",
        Op::Log(..) => "log",
        Op::Sqrt(..) => "sqrt",
        Op::Abs(..) => "abs",
        Op::Silu(..) => "silu",
        Op::Softplus(..) => "softplus",
        Op::Matmul(..) => "matmul",
        Op::Linear { .. } => "linear",
        Op::Conv2d { .. } => "conv2d",
        Op::Conv1dCausal { .. } => "conv1d_causal",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Softmax(..) => "softmax",
        Op::RowMax { .. } => "row_max",
        Op::AvgPool { .. } => "avg_pool",
        Op::Concat { .. } => "concat",
        Op::Slice { .. } => "slice",
        Op::Reshape(..) => "reshape",
        Op::Permute { .. } => "transpose",
        Op::PermuteRows { .. } => "permute_rows",
        Op::Reverse(..) => "reverse",
        Op::Sum { .. } => "sum",
        Op::Mean { .. } => "mean",
        Op::SelectiveScan { .. } => "selective_scan",
    }
}

// ------------------------------------------------------------ generic dispatch

/// Primitive kinds reachable through [`apply_primitive`]; a uniform entry
/// point for bindings and generic tooling over the same graph methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrimKind {
    Matmul,
    Add,
    Sub,
    Mul,
    Div,
    Linear,
    Conv2d,
    Conv1dDepthwise,
    LayerNorm,
    Silu,
    Softplus,
    Softmax,
    RowMax,
    AvgPool,
    Concat,
    Slice,
    Reshape,
    Transpose,
    PermuteRows,
    Reverse,
    Exp,
    Log,
    Sqrt,
    Abs,
    Neg,
    Sum,
    Mean,
    SelectiveScan,
}

impl PrimKind {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "matmul" => PrimKind::Matmul,
            "add" => PrimKind::Add,
            "sub" => PrimKind::Sub,
            "mul" => PrimKind::Mul,
            "div" => PrimKind::Div,
            "linear" => PrimKind::Linear,
            "conv2d" => PrimKind::Conv2d,
            "conv1d_depthwise" => PrimKind::Conv1dDepthwise,
            "layer_norm" => PrimKind::LayerNorm,
            "silu" => PrimKind::Silu,
            "softplus" => PrimKind::Softplus,
            "softmax" => PrimKind::Softmax,
            "row_max" => PrimKind::RowMax,
            "avg_pool" => PrimKind::AvgPool,
            "concat" => PrimKind::Concat,
            "slice" => PrimKind::Slice,
            "reshape" => PrimKind::Reshape,
            "transpose" => PrimKind::Transpose,
            "permute_rows" => PrimKind::PermuteRows,
            "reverse" => PrimKind::Reverse,
            "exp" => PrimKind::Exp,
            "log" => PrimKind::Log,
            "sqrt" => PrimKind::Sqrt,
            "abs" => PrimKind::Abs,
            "neg" => PrimKind::Neg,
            "sum" => PrimKind::Sum,
            "mean" => PrimKind::Mean,
            "selective_scan" => PrimKind::SelectiveScan,
            _ => return None,
        })
    }
}

/// Attributes for [`apply_primitive`]; unused fields are ignored by each kind.
#[derive(Clone, Debug, Default)]
pub struct Attrs {
    pub axis: Option<usize>,
    pub start: Option<usize>,
    pub len: Option<usize>,
    pub shape: Option<Vec<usize>>,
    pub perm: Option<Vec<usize>>,
    pub kernel: Option<(usize, usize)>,
    pub stride: Option<usize>,
    pub pad: Option<usize>,
}

fn want(op: &'static str, inputs: &[TensorId], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::shape(
            op,
            format!("expected {n} inputs, got {}", inputs.len()),
        ));
    }
    Ok(())
}

fn attr<T: Copy>(op: &'static str, v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| Error::contract(op, format!("missing required attribute `{name}`")))
}

/// Build one primitive node. Thin dispatcher over the typed [`Graph`] methods.
pub fn apply_primitive(
    g: &mut Graph,
    kind: PrimKind,
    inputs: &[TensorId],
    attrs: &Attrs,
) -> Result<TensorId> {
    match kind {
        PrimKind::Matmul => {
            want("matmul", inputs, 2)?;
            g.matmul(inputs[0], inputs[1])
        }
        PrimKind::Add => {
            want("add", inputs, 2)?;
            g.add(inputs[0], inputs[1])
        }
        PrimKind::Sub => {
            want("sub", inputs, 2)?;
            g.sub(inputs[0], inputs[1])
        }
        PrimKind::Mul => {
            want("mul", inputs, 2)?;
            g.mul(inputs[0], inputs[1])
        }
        PrimKind::Div => {
            want("div", inputs, 2)?;
            g.div(inputs[0], inputs[1])
        }
        PrimKind::Linear => {
            want("linear", inputs, 3)?;
            g.linear(inputs[0], inputs[1], inputs[2])
        }
        PrimKind::Conv2d => {
            want("conv2d", inputs, 3)?;
            let stride = attrs.stride.unwrap_or(1);
            let pad = attrs.pad.unwrap_or(0);
            g.conv2d(inputs[0], inputs[1], inputs[2], stride, pad)
        }
        PrimKind::Conv1dDepthwise => {
            want("conv1d_depthwise", inputs, 3)?;
            g.conv1d_causal(inputs[0], inputs[1], inputs[2])
        }
        PrimKind::LayerNorm => {
            want("layer_norm", inputs, 3)?;
            g.layer_norm(inputs[0], inputs[1], inputs[2])
        }
        PrimKind::Silu => {
            want("silu", inputs, 1)?;
            Ok(g.silu(inputs[0]))
        }
        PrimKind::Softplus => {
            want("softplus", inputs, 1)?;
            Ok(g.softplus(inputs[0]))
        }
        PrimKind::Softmax => {
            want("softmax", inputs, 1)?;
            g.softmax(inputs[0])
        }
        PrimKind::RowMax => {
            want("row_max", inputs, 1)?;
            g.row_max(inputs[0])
        }
        PrimKind::AvgPool => {
            want("avg_pool", inputs, 1)?;
            let (kh, kw) = attr("avg_pool", attrs.kernel, "kernel")?;
            g.avg_pool(inputs[0], kh, kw)
        }
        PrimKind::Concat => {
            let axis = attr("concat", attrs.axis, "axis")?;
            g.concat(inputs, axis)
        }
        PrimKind::Slice => {
            want("slice", inputs, 1)?;
            let axis = attr("slice", attrs.axis, "axis")?;
            let start = attr("slice", attrs.start, "start")?;
            let len = attr("slice", attrs.len, "len")?;
            g.slice(inputs[0], axis, start, len)
        }
        PrimKind::Reshape => {
            want("reshape", inputs, 1)?;
            let shape = attrs
                .shape
                .clone()
                .ok_or_else(|| Error::contract("reshape", "missing required attribute `shape`"))?;
            g.reshape(inputs[0], shape)
        }
        PrimKind::Transpose => {
            want("transpose", inputs, 1)?;
            let perm = attrs
                .perm
                .clone()
                .ok_or_else(|| Error::contract("transpose", "missing required attribute `perm`"))?;
            g.permute(inputs[0], &perm)
        }
        PrimKind::PermuteRows => {
            want("permute_rows", inputs, 1)?;
            let perm = attrs
                .perm
                .clone()
                .ok_or_else(|| Error::contract("permute_rows", "missing required attribute `perm`"))?;
            g.permute_rows(inputs[0], &perm)
        }
        PrimKind::Reverse => {
            want("reverse", inputs, 1)?;
            g.reverse(inputs[0])
        }
        PrimKind::Exp => {
            want("exp", inputs, 1)?;
            Ok(g.exp(inputs[0]))
        }
        PrimKind::Log => {
            want("log", inputs, 1)?;
            Ok(g.log(inputs[0]))
        }
        PrimKind::Sqrt => {
            want("sqrt", inputs, 1)?;
            Ok(g.sqrt(inputs[0]))
        }
        PrimKind::Abs => {
            want("abs", inputs, 1)?;
            Ok(g.abs(inputs[0]))
        }
        PrimKind::Neg => {
            want("neg", inputs, 1)?;
            Ok(g.neg(inputs[0]))
        }
        PrimKind::Sum => {
            want("sum", inputs, 1)?;
            g.sum(inputs[0], attrs.axis)
        }
        PrimKind::Mean => {
            want("mean", inputs, 1)?;
            g.mean(inputs[0], attrs.axis)
        }
        PrimKind::SelectiveScan => {
            want("selective_scan", inputs, 6)?;
            g.selective_scan(inputs[0], inputs[1], inputs[2], inputs[3], inputs[4], inputs[5])
        }
    }
}
