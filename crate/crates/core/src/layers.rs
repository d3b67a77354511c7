//! Parameterized building blocks: linear/conv/norm layers, the gated
//! selective-scan blocks (frame-level bidirectional-in-space, coarse-level
//! bidirectional-in-time), residual conv blocks, and multi-head attention.
//!
//! Construction registers parameters in a [`ParamStore`] under a dotted name
//! prefix; `forward` wires one pass into a [`Graph`] against bound leaves.

use crate::error::{Error, Result};
use crate::rng::{self, Prng};
use crate::ssm;
use crate::tensor::graph::{Graph, TensorId};
use crate::tensor::params::{BoundParams, ParamId, ParamStore};
use crate::tensor::Tensor;

fn softplus_inv(y: f64) -> f64 {
    (y.exp() - 1.0).ln()
}

// -------------------------------------------------------------------- linear

#[derive(Clone)]
pub struct LinearLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub cin: usize,
    pub cout: usize,
}

impl LinearLayer {
    pub fn new(ps: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut Prng) -> Self {
        let std = 1.0 / (cin as f64).sqrt();
        let w = ps.register(&format!("{name}.w"), Tensor::randn(rng, vec![cin, cout], std));
        let b = ps.register(&format!("{name}.b"), Tensor::zeros(vec![cout]));
        LinearLayer { w, b, cin, cout }
    }

    /// All-zero initialization; used for output projections so blocks start as
    /// identities on their residual paths.
    pub fn zeros(ps: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Self {
        let w = ps.register(&format!("{name}.w"), Tensor::zeros(vec![cin, cout]));
        let b = ps.register(&format!("{name}.b"), Tensor::zeros(vec![cout]));
        LinearLayer { w, b, cin, cout }
    }

    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, x: TensorId) -> Result<TensorId> {
        g.linear(x, bp.id(self.w), bp.id(self.b))
    }
}

// --------------------------------------------------------------------- conv2d

#[derive(Clone)]
pub struct Conv2dLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dLayer {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        ci: usize,
        co: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut Prng,
    ) -> Self {
        let std = 1.0 / ((ci * k * k) as f64).sqrt();
        let w = ps.register(&format!("{name}.w"), Tensor::randn(rng, vec![co, ci, k, k], std));
        let b = ps.register(&format!("{name}.b"), Tensor::zeros(vec![co]));
        Conv2dLayer { w, b, stride, pad }
    }

    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, x: TensorId) -> Result<TensorId> {
        g.conv2d(x, bp.id(self.w), bp.id(self.b), self.stride, self.pad)
    }
}

// --------------------------------------------------------- causal depthwise 1d

#[derive(Clone)]
pub struct Conv1dCausalLayer {
    pub w: ParamId,
    pub b: ParamId,
}

impl Conv1dCausalLayer {
    pub fn new(ps: &mut ParamStore, name: &str, c: usize, k: usize, rng: &mut Prng) -> Self {
        let std = 1.0 / (k as f64).sqrt();
        let w = ps.register(&format!("{name}.w"), Tensor::randn(rng, vec![c, k], std));
        let b = ps.register(&format!("{name}.b"), Tensor::zeros(vec![c]));
        Conv1dCausalLayer { w, b }
    }

    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, x: TensorId) -> Result<TensorId> {
        g.conv1d_causal(x, bp.id(self.w), bp.id(self.b))
    }
}

// ----------------------------------------------------------------- layer norm

#[derive(Clone)]
pub struct LayerNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormLayer {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize) -> Self {
        let gamma = ps.register(&format!("{name}.gamma"), Tensor::full(vec![d], 1.0));
        let beta = ps.register(&format!("{name}.beta"), Tensor::zeros(vec![d]));
        LayerNormLayer { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, x: TensorId) -> Result<TensorId> {
        g.layer_norm(x, bp.id(self.gamma), bp.id(self.beta))
    }
}

// ----------------------------------------------------------------------- mlp

/// Two-layer perceptron: Linear -> SiLU -> Linear.
#[derive(Clone)]
pub struct Mlp {
    pub lin1: LinearLayer,
    pub lin2: LinearLayer,
}

impl Mlp {
    pub fn new(ps: &mut ParamStore, name: &str, cin: usize, hidden: usize, cout: usize, rng: &mut Prng) -> Self {
        Mlp {
            lin1: LinearLayer::new(ps, &format!("{name}.lin1"), cin, hidden, rng),
            lin2: LinearLayer::new(ps, &format!("{name}.lin2"), hidden, cout, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, x: TensorId) -> Result<TensorId> {
        let h = self.lin1.forward(g, bp, x)?;
        let h = g.silu(h);
        self.lin2.forward(g, bp, h)
    }
}

// ----------------------------------------------------------- selective scan path

/// Input-dependent scan parameters for one direction: the diagonal transition
/// (negative via -exp(log_a)), skip coefficients, and the projections that
/// produce B(t), C(t) and the softplus step size per token.
#[derive(Clone)]
pub struct ScanParams {
    pub log_a: ParamId,
    pub d_skip: ParamId,
    pub b_proj: LinearLayer,
    pub c_proj: LinearLayer,
    pub delta_proj: LinearLayer,
    pub c: usize,
    pub s: usize,
}

impl ScanParams {
    pub fn new(ps: &mut ParamStore, name: &str, c: usize, s: usize, rng: &mut Prng) -> Self {
        // log_a[ch][si] = ln(si+1) so transitions start spread over decay rates.
        let log_a_init: Vec<f64> = (0..c)
            .flat_map(|_| (0..s).map(|si| ((si + 1) as f64).ln()))
            .collect();
        let log_a = ps.register(
            &format!("{name}.log_a"),
            Tensor::from_vec(vec![c, s], log_a_init).expect("sizes agree"),
        );
        let d_skip = ps.register(&format!("{name}.d"), Tensor::full(vec![c], 1.0));
        let b_proj = LinearLayer::new(ps, &format!("{name}.b_proj"), c, s, rng);
        let c_proj = LinearLayer::new(ps, &format!("{name}.c_proj"), c, s, rng);
        let delta_proj = LinearLayer::new(ps, &format!("{name}.delta_proj"), c, c, rng);
        // Bias chosen so the initial softplus step size is uniform in [0.01, 0.1).
        let bias: Vec<f64> = (0..c)
            .map(|_| softplus_inv(rng::uniform(rng, 0.01, 0.1)))
            .collect();
        *ps.get_mut(delta_proj.b) = Tensor::from_vec(vec![c], bias).expect("sizes agree").with_grad();
        ScanParams {
            log_a,
            d_skip,
            b_proj,
            c_proj,
            delta_proj,
            c,
            s,
        }
    }

    /// Scan a token sequence u [l, c]: derives delta, B, C from u itself.
    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, u: TensorId) -> Result<TensorId> {
        let exp_log_a = g.exp(bp.id(self.log_a));
        let a = g.neg(exp_log_a);
        let b = self.b_proj.forward(g, bp, u)?;
        let c = self.c_proj.forward(g, bp, u)?;
        let pre_delta = self.delta_proj.forward(g, bp, u)?;
        let delta = g.softplus(pre_delta);
        g.selective_scan(u, delta, b, c, a, bp.id(self.d_skip))
    }
}

/// One directional branch: causal depthwise conv, SiLU, then the scan.
#[derive(Clone)]
pub struct DirectionParams {
    pub conv: Conv1dCausalLayer,
    pub scan: ScanParams,
}

impl DirectionParams {
    pub fn new(ps: &mut ParamStore, name: &str, c: usize, s: usize, k: usize, rng: &mut Prng) -> Self {
        DirectionParams {
            conv: Conv1dCausalLayer::new(ps, &format!("{name}.conv"), c, k, rng),
            scan: ScanParams::new(ps, &format!("{name}.scan"), c, s, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, x: TensorId) -> Result<TensorId> {
        let c = self.conv.forward(g, bp, x)?;
        let u = g.silu(c);
        self.scan.forward(g, bp, u)
    }
}

// ------------------------------------------------------------ frame-level block

/// Gated two-direction scan block over spatio-temporal tokens, residual around
/// the whole thing:
///
/// ```text
/// tokens = flatten(x)                          [t*h*w, c]
/// n = LayerNorm(tokens); xu = LinUp(n); z = LinGate(n)
/// y_row = scan_row(SiLU(Conv1d(xu)))                        (row-major order)
/// y_col = unpermute(scan_col(SiLU(Conv1d(permute(xu)))))    (col-major order)
/// out   = x + unflatten(LinOut(SiLU(z) o y_row + SiLU(z) o y_col))
/// ```
pub struct SsmFrameBlock {
    pub ln: LayerNormLayer,
    pub x_proj: LinearLayer,
    pub z_proj: LinearLayer,
    pub row: DirectionParams,
    pub col: DirectionParams,
    pub out_proj: LinearLayer,
    pub c: usize,
    pub e: usize,
}

impl SsmFrameBlock {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        c: usize,
        expand: usize,
        s: usize,
        k: usize,
        share_dirs: bool,
        rng: &mut Prng,
    ) -> Self {
        let e = expand * c;
        let ln = LayerNormLayer::new(ps, &format!("{name}.ln"), c);
        let x_proj = LinearLayer::new(ps, &format!("{name}.x_proj"), c, e, rng);
        let z_proj = LinearLayer::new(ps, &format!("{name}.z_proj"), c, e, rng);
        let row = DirectionParams::new(ps, &format!("{name}.row"), e, s, k, rng);
        let col = if share_dirs {
            row.clone()
        } else {
            DirectionParams::new(ps, &format!("{name}.col"), e, s, k, rng)
        };
        let out_proj = LinearLayer::zeros(ps, &format!("{name}.out_proj"), e, c);
        SsmFrameBlock {
            ln,
            x_proj,
            z_proj,
            row,
            col,
            out_proj,
            c,
            e,
        }
    }

    /// x: [t, c, h, w] -> same shape.
    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, x: TensorId) -> Result<TensorId> {
        let sx = g.shape(x).to_vec();
        if sx.len() != 4 || sx[1] != self.c {
            return Err(Error::shape(
                "ssm_f_forward",
                format!("expected [t,{},h,w], got {sx:?}", self.c),
            ));
        }
        let (t, h, w) = (sx[0], sx[2], sx[3]);
        let l = t * h * w;
        // [t,c,h,w] -> [t,h,w,c] -> [l,c], row-major token order.
        let moved = g.permute(x, &[0, 2, 3, 1])?;
        let tokens = g.reshape(moved, vec![l, self.c])?;
        let n = self.ln.forward(g, bp, tokens)?;
        let xu = self.x_proj.forward(g, bp, n)?;
        let z = self.z_proj.forward(g, bp, n)?;
        let gate = g.silu(z);

        let y_row = self.row.forward(g, bp, xu)?;

        let perm = ssm::col_major_perm(t, h, w);
        let inv = ssm::inverse_perm(&perm);
        let xc = g.permute_rows(xu, &perm)?;
        let yc = self.col.forward(g, bp, xc)?;
        let y_col = g.permute_rows(yc, &inv)?;

        let gr = g.mul(gate, y_row)?;
        let gc = g.mul(gate, y_col)?;
        let mixed = g.add(gr, gc)?;
        let out = self.out_proj.forward(g, bp, mixed)?;
        // Back to [t,c,h,w] and add the residual.
        let shaped = g.reshape(out, vec![t, h, w, self.c])?;
        let restored = g.permute(shaped, &[0, 3, 1, 2])?;
        g.add(x, restored)
    }
}

// ----------------------------------------------------------- coarse-level block

/// Gated forward/backward scan block over per-frame tokens [n, c], residual
/// around the whole block. The backward branch reverses the sequence, runs its
/// own conv+scan, and reverses back.
pub struct SsmCoarseBlock {
    pub ln: LayerNormLayer,
    pub x_proj: LinearLayer,
    pub z_proj: LinearLayer,
    pub fwd: DirectionParams,
    pub bwd: DirectionParams,
    pub out_proj: LinearLayer,
    pub c: usize,
}

impl SsmCoarseBlock {
    pub fn new(ps: &mut ParamStore, name: &str, c: usize, s: usize, k: usize, rng: &mut Prng) -> Self {
        SsmCoarseBlock {
            ln: LayerNormLayer::new(ps, &format!("{name}.ln"), c),
            x_proj: LinearLayer::new(ps, &format!("{name}.x_proj"), c, c, rng),
            z_proj: LinearLayer::new(ps, &format!("{name}.z_proj"), c, c, rng),
            fwd: DirectionParams::new(ps, &format!("{name}.fwd"), c, s, k, rng),
            bwd: DirectionParams::new(ps, &format!("{name}.bwd"), c, s, k, rng),
            out_proj: LinearLayer::zeros(ps, &format!("{name}.out_proj"), c, c),
            c,
        }
    }

    /// tokens: [n, c] -> [n, c].
    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, tokens: TensorId) -> Result<TensorId> {
        let st = g.shape(tokens).to_vec();
        if st.len() != 2 || st[1] != self.c {
            return Err(Error::shape(
                "ssm_c_forward",
                format!("expected [n,{}], got {st:?}", self.c),
            ));
        }
        let n = self.ln.forward(g, bp, tokens)?;
        let xu = self.x_proj.forward(g, bp, n)?;
        let z = self.z_proj.forward(g, bp, n)?;
        let gate = g.silu(z);

        let y_f = self.fwd.forward(g, bp, xu)?;

        let xr = g.reverse(xu)?;
        let yr = self.bwd.forward(g, bp, xr)?;
        let y_b = g.reverse(yr)?;

        let gf = g.mul(gate, y_f)?;
        let gb = g.mul(gate, y_b)?;
        let mixed = g.add(gf, gb)?;
        let out = self.out_proj.forward(g, bp, mixed)?;
        g.add(tokens, out)
    }
}

// ------------------------------------------------------------- residual block

/// Strided residual downsampling block:
/// `y = Conv3x3(SiLU(Conv3x3_s2(x))) + Conv1x1_s2(x)`.
pub struct ResidualBlock {
    pub conv1: Conv2dLayer,
    pub conv2: Conv2dLayer,
    pub skip: Conv2dLayer,
}

impl ResidualBlock {
    pub fn new(ps: &mut ParamStore, name: &str, ci: usize, co: usize, rng: &mut Prng) -> Self {
        ResidualBlock {
            conv1: Conv2dLayer::new(ps, &format!("{name}.conv1"), ci, co, 3, 2, 1, rng),
            conv2: Conv2dLayer::new(ps, &format!("{name}.conv2"), co, co, 3, 1, 1, rng),
            skip: Conv2dLayer::new(ps, &format!("{name}.skip"), ci, co, 1, 2, 0, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, x: TensorId) -> Result<TensorId> {
        let h = self.conv1.forward(g, bp, x)?;
        let h = g.silu(h);
        let h = self.conv2.forward(g, bp, h)?;
        let s = self.skip.forward(g, bp, x)?;
        g.add(h, s)
    }
}

// -------------------------------------------------------- multi-head attention

/// Standard scaled-dot-product multi-head attention with zero-initialized
/// output projection (so attention branches start as additive no-ops).
pub struct Mha {
    pub q_proj: LinearLayer,
    pub k_proj: LinearLayer,
    pub v_proj: LinearLayer,
    pub out_proj: LinearLayer,
    pub heads: usize,
    pub d: usize,
}

impl Mha {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut Prng) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "attention width {d} must be divisible by heads {heads}"
            )));
        }
        Ok(Mha {
            q_proj: LinearLayer::new(ps, &format!("{name}.q"), d, d, rng),
            k_proj: LinearLayer::new(ps, &format!("{name}.k"), d, d, rng),
            v_proj: LinearLayer::new(ps, &format!("{name}.v"), d, d, rng),
            out_proj: LinearLayer::zeros(ps, &format!("{name}.out"), d, d),
            heads,
            d,
        })
    }

    /// q: [lq, d], kv: [lk, d] -> [lq, d].
    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, q_in: TensorId, kv_in: TensorId) -> Result<TensorId> {
        let (sq, skv) = (g.shape(q_in), g.shape(kv_in));
        if sq.len() != 2 || skv.len() != 2 || sq[1] != self.d || skv[1] != self.d {
            return Err(Error::shape(
                "multihead_attention",
                format!("expected q [lq,{d}], kv [lk,{d}]; got {sq:?}, {skv:?}", d = self.d),
            ));
        }
        let dh = self.d / self.heads;
        let q = self.q_proj.forward(g, bp, q_in)?;
        let k = self.k_proj.forward(g, bp, kv_in)?;
        let v = self.v_proj.forward(g, bp, kv_in)?;
        let scale = g.scalar(1.0 / (dh as f64).sqrt());
        let mut heads_out = Vec::with_capacity(self.heads);
        for hi in 0..self.heads {
            let qh = g.slice(q, 1, hi * dh, dh)?;
            let kh = g.slice(k, 1, hi * dh, dh)?;
            let vh = g.slice(v, 1, hi * dh, dh)?;
            let kt = g.permute(kh, &[1, 0])?;
            let scores = g.matmul(qh, kt)?;
            let scaled = g.mul(scores, scale)?;
            let attn = g.softmax(scaled)?;
            heads_out.push(g.matmul(attn, vh)?);
        }
        let merged = g.concat(&heads_out, 1)?;
        self.out_proj.forward(g, bp, merged)
    }
}
