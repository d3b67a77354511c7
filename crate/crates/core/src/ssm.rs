//! Selective state-space scan reference routines and token-ordering helpers.
//!
//! The recurrence, per channel `c` and state `s`:
//!
//! ```text
//! abar[t,c,s] = exp(delta[t,c] * a[c,s])
//! h[t,c,s]    = abar[t,c,s] * h[t-1,c,s] + delta[t,c] * b[t,s] * x[t,c]
//! y[t,c]      = sum_s c[t,s] * h[t,c,s] + d[c] * x[t,c]
//! ```
//!
//! These plain-slice functions are the ground truth the autodiff scan op is
//! checked against; they share no code with it.

use crate::error::{Error, Result};

/// Zero-order-hold discretization of the continuous diagonal transition:
/// `abar[t,c,s] = exp(delta[t,c] * a[c,s])`. Step sizes must be positive.
pub fn discretize(a: &[f64], delta: &[f64], l: usize, c: usize, s: usize) -> Result<Vec<f64>> {
    if a.len() != c * s || delta.len() != l * c {
        return Err(Error::shape(
            "discretize",
            format!(
                "a has {} values (want {}), delta has {} (want {})",
                a.len(),
                c * s,
                delta.len(),
                l * c
            ),
        ));
    }
    if let Some(i) = delta.iter().position(|&d| d <= 0.0) {
        return Err(Error::contract(
            "discretize",
            format!("step size must be positive, delta[{i}] = {}", delta[i]),
        ));
    }
    let mut abar = vec![0.0; l * c * s];
    for t in 0..l {
        for ch in 0..c {
            let dl = delta[t * c + ch];
            for si in 0..s {
                abar[(t * c + ch) * s + si] = (dl * a[ch * s + si]).exp();
            }
        }
    }
    Ok(abar)
}

fn check_scan_shapes(
    op: &'static str,
    x: &[f64],
    delta: &[f64],
    b_in: &[f64],
    c_in: &[f64],
    a: &[f64],
    d_skip: &[f64],
    l: usize,
    c: usize,
    s: usize,
) -> Result<()> {
    let ok = x.len() == l * c
        && delta.len() == l * c
        && b_in.len() == l * s
        && c_in.len() == l * s
        && a.len() == c * s
        && d_skip.len() == c;
    if !ok {
        return Err(Error::shape(
            op,
            format!(
                "inconsistent lengths for l={l}, c={c}, s={s}: x {}, delta {}, b {}, c {}, a {}, d {}",
                x.len(),
                delta.len(),
                b_in.len(),
                c_in.len(),
                a.len(),
                d_skip.len()
            ),
        ));
    }
    Ok(())
}

/// Plain left-to-right recurrence. Reference implementation.
#[allow(clippy::too_many_arguments)]
pub fn scan_sequential(
    x: &[f64],
    delta: &[f64],
    b_in: &[f64],
    c_in: &[f64],
    a: &[f64],
    d_skip: &[f64],
    l: usize,
    c: usize,
    s: usize,
) -> Result<Vec<f64>> {
    check_scan_shapes("scan_sequential", x, delta, b_in, c_in, a, d_skip, l, c, s)?;
    let abar = discretize(a, delta, l, c, s)?;
    let mut y = vec![0.0; l * c];
    let mut h = vec![0.0; c * s];
    for t in 0..l {
        for ch in 0..c {
            let dl = delta[t * c + ch];
            let xv = x[t * c + ch];
            let mut acc = 0.0;
            for si in 0..s {
                let hv = abar[(t * c + ch) * s + si] * h[ch * s + si] + dl * b_in[t * s + si] * xv;
                h[ch * s + si] = hv;
                acc += c_in[t * s + si] * hv;
            }
            y[t * c + ch] = acc + d_skip[ch] * xv;
        }
    }
    Ok(y)
}

/// Chunked evaluation of the same recurrence. Within each chunk the scan runs
/// from a zero state while a running product of decay factors carries the
/// incoming boundary state:
///
/// ```text
/// h[t] = local[t] + (prod of abar over the chunk up to t) * h_carry
/// ```
///
/// No divisions are involved, so zero or tiny decay factors are safe; results
/// differ from [`scan_sequential`] only by floating-point reassociation.
#[allow(clippy::too_many_arguments)]
pub fn scan_chunked(
    x: &[f64],
    delta: &[f64],
    b_in: &[f64],
    c_in: &[f64],
    a: &[f64],
    d_skip: &[f64],
    l: usize,
    c: usize,
    s: usize,
    chunk: usize,
) -> Result<Vec<f64>> {
    check_scan_shapes("scan_chunked", x, delta, b_in, c_in, a, d_skip, l, c, s)?;
    if chunk == 0 {
        return Err(Error::contract("scan_chunked", "chunk size must be positive"));
    }
    let abar = discretize(a, delta, l, c, s)?;
    let mut y = vec![0.0; l * c];
    let mut carry = vec![0.0; c * s]; // h at the end of the previous chunk
    let mut local = vec![0.0; c * s]; // scan from zero state within the chunk
    let mut prod = vec![0.0; c * s]; // running product of abar within the chunk
    let mut start = 0usize;
    while start < l {
        let end = (start + chunk).min(l);
        local.iter_mut().for_each(|v| *v = 0.0);
        prod.iter_mut().for_each(|v| *v = 1.0);
        for t in start..end {
            for ch in 0..c {
                let dl = delta[t * c + ch];
                let xv = x[t * c + ch];
                let mut acc = 0.0;
                for si in 0..s {
                    let ab = abar[(t * c + ch) * s + si];
                    let lv = ab * local[ch * s + si] + dl * b_in[t * s + si] * xv;
                    local[ch * s + si] = lv;
                    let pv = prod[ch * s + si] * ab;
                    prod[ch * s + si] = pv;
                    acc += c_in[t * s + si] * (lv + pv * carry[ch * s + si]);
                }
                y[t * c + ch] = acc + d_skip[ch] * xv;
            }
        }
        for i in 0..c * s {
            carry[i] = local[i] + prod[i] * carry[i];
        }
        start = end;
    }
    Ok(y)
}

/// The recurrence written with reversed indices: state flows from the end of
/// the sequence toward the start. Equivalent to reversing inputs, running
/// [`scan_sequential`], and reversing the output.
#[allow(clippy::too_many_arguments)]
pub fn scan_reverse_indexed(
    x: &[f64],
    delta: &[f64],
    b_in: &[f64],
    c_in: &[f64],
    a: &[f64],
    d_skip: &[f64],
    l: usize,
    c: usize,
    s: usize,
) -> Result<Vec<f64>> {
    check_scan_shapes("scan_reverse_indexed", x, delta, b_in, c_in, a, d_skip, l, c, s)?;
    let abar = discretize(a, delta, l, c, s)?;
    let mut y = vec![0.0; l * c];
    let mut h = vec![0.0; c * s];
    for t in (0..l).rev() {
        for ch in 0..c {
            let dl = delta[t * c + ch];
            let xv = x[t * c + ch];
            let mut acc = 0.0;
            for si in 0..s {
                let hv = abar[(t * c + ch) * s + si] * h[ch * s + si] + dl * b_in[t * s + si] * xv;
                h[ch * s + si] = hv;
                acc += c_in[t * s + si] * hv;
            }
            y[t * c + ch] = acc + d_skip[ch] * xv;
        }
    }
    Ok(y)
}

/// Single-step discretization in contract shape: a [c,s], b_t [s], delta_t [c]
/// gives `abar[c,s] = exp(delta_t[c]*a[c,s])` and `bbar[c,s] = delta_t[c]*b_t[s]`.
pub fn discretize_step(
    a: &[f64],
    b_t: &[f64],
    delta_t: &[f64],
    c: usize,
    s: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != c * s || b_t.len() != s || delta_t.len() != c {
        return Err(Error::shape(
            "discretize",
            format!(
                "a has {} values (want {}), b {} (want {s}), delta {} (want {c})",
                a.len(),
                c * s,
                b_t.len(),
                delta_t.len()
            ),
        ));
    }
    if let Some(i) = delta_t.iter().position(|&d| d <= 0.0) {
        return Err(Error::contract(
            "discretize",
            format!("step size must be positive, delta[{i}] = {}", delta_t[i]),
        ));
    }
    let mut abar = vec![0.0; c * s];
    let mut bbar = vec![0.0; c * s];
    for ch in 0..c {
        for si in 0..s {
            abar[ch * s + si] = (delta_t[ch] * a[ch * s + si]).exp();
            bbar[ch * s + si] = delta_t[ch] * b_t[si];
        }
    }
    Ok((abar, bbar))
}

/// Token traversal orders for directional scans.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DirectionalOrder {
    /// (t, h, w) with w fastest — the natural row-major layout.
    RowMajor,
    /// (t, w, h) with h fastest.
    ColMajor,
    /// Sequence order as given.
    Forward,
    /// Sequence reversed.
    Backward,
}

/// Row permutation realizing an order over `t*h*w` tokens whose base layout is
/// row-major. `out[i] = in[perm[i]]`.
pub fn order_perm(order: DirectionalOrder, t: usize, h: usize, w: usize) -> Vec<usize> {
    let l = t * h * w;
    match order {
        DirectionalOrder::RowMajor | DirectionalOrder::Forward => (0..l).collect(),
        DirectionalOrder::ColMajor => col_major_perm(t, h, w),
        DirectionalOrder::Backward => (0..l).rev().collect(),
    }
}

/// Flatten [t,c,h,w] features into a token sequence [t*h*w, c] in the given
/// order. Also returns the inverse permutation that restores base row-major
/// token order (apply with a row permutation, then reshape back to [t,c,h,w]).
pub fn flatten_features(
    f: &[f64],
    t: usize,
    c: usize,
    h: usize,
    w: usize,
    order: DirectionalOrder,
) -> Result<(Vec<f64>, Vec<usize>)> {
    if f.len() != t * c * h * w {
        return Err(Error::shape(
            "flatten_features",
            format!("expected {} values for [{t},{c},{h},{w}], got {}", t * c * h * w, f.len()),
        ));
    }
    let perm = order_perm(order, t, h, w);
    let hw = h * w;
    let mut tokens = vec![0.0; t * hw * c];
    for (i, &p) in perm.iter().enumerate() {
        let (ti, sp) = (p / hw, p % hw);
        for ch in 0..c {
            tokens[i * c + ch] = f[(ti * c + ch) * hw + sp];
        }
    }
    Ok((tokens, inverse_perm(&perm)))
}

/// Permutation mapping row-major frame tokens to column-major traversal:
/// position `(t, w, h)` of the output takes token `(t, h, w)` of the input.
/// Apply with `permute_rows`; undo with [`inverse_perm`].
pub fn col_major_perm(t: usize, h: usize, w: usize) -> Vec<usize> {
    let mut perm = Vec::with_capacity(t * h * w);
    for ti in 0..t {
        for wi in 0..w {
            for hi in 0..h {
                perm.push(ti * h * w + hi * w + wi);
            }
        }
    }
    perm
}

pub fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tensor::graph::Graph;
    use crate::tensor::Tensor;

    fn random_case(seed: u64, l: usize, c: usize, s: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut r = rng::prng(seed);
        let gen = |r: &mut rng::Prng, n: usize, scale: f64| -> Vec<f64> {
            (0..n).map(|_| rng::normal(r) * scale).collect()
        };
        let x = gen(&mut r, l * c, 1.0);
        let delta: Vec<f64> = (0..l * c).map(|_| rng::log_uniform(&mut r, 0.005, 0.5)).collect();
        let b = gen(&mut r, l * s, 1.0);
        let cc = gen(&mut r, l * s, 1.0);
        let a: Vec<f64> = (0..c * s).map(|_| -rng::log_uniform(&mut r, 0.2, 4.0)).collect();
        let d = gen(&mut r, c, 0.5);
        (x, delta, b, cc, a, d)
    }

    #[test]
    fn discretize_limits() {
        // Tiny step: abar ~ 1 + delta*a.
        let abar = discretize(&[-0.5], &[1e-8], 1, 1, 1).unwrap();
        assert!((abar[0] - (1.0 - 5e-9)).abs() < 1e-12);
        // Large decay drives abar to zero.
        let abar = discretize(&[-40.0], &[2.0], 1, 1, 1).unwrap();
        assert!(abar[0] < 1e-30);
        assert!(abar[0] > 0.0);
    }

    #[test]
    fn discretize_rejects_nonpositive_steps() {
        let err = discretize(&[-1.0], &[0.0], 1, 1, 1).unwrap_err();
        assert!(err.to_string().contains("positive"), "{err}");
        assert!(discretize(&[-1.0], &[-0.1], 1, 1, 1).is_err());
    }

    #[test]
    fn sequential_matches_hand_oracle() {
        // A=-1, delta=ln2 => abar=1/2; B=C=1, D=0, impulse input.
        let ln2 = std::f64::consts::LN_2;
        let y = scan_sequential(
            &[1.0, 0.0, 0.0],
            &[ln2; 3],
            &[1.0; 3],
            &[1.0; 3],
            &[-1.0],
            &[0.0],
            3,
            1,
            1,
        )
        .unwrap();
        assert!((y[0] - ln2).abs() < 1e-15);
        assert!((y[1] - ln2 / 2.0).abs() < 1e-15);
        assert!((y[2] - ln2 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn graph_op_agrees_with_reference() {
        let (x, delta, b, c, a, d) = random_case(101, 17, 3, 4);
        let reference = scan_sequential(&x, &delta, &b, &c, &a, &d, 17, 3, 4).unwrap();
        let mut g = Graph::new();
        let xid = g.leaf(&Tensor::from_vec(vec![17, 3], x).unwrap());
        let did = g.leaf(&Tensor::from_vec(vec![17, 3], delta).unwrap());
        let bid = g.leaf(&Tensor::from_vec(vec![17, 4], b).unwrap());
        let cid = g.leaf(&Tensor::from_vec(vec![17, 4], c).unwrap());
        let aid = g.leaf(&Tensor::from_vec(vec![3, 4], a).unwrap());
        let dd = g.leaf(&Tensor::from_vec(vec![3], d).unwrap());
        let y = g.selective_scan(xid, did, bid, cid, aid, dd).unwrap();
        for (gv, rv) in g.value(y).iter().zip(&reference) {
            assert!((gv - rv).abs() < 1e-14, "{gv} vs {rv}");
        }
    }

    #[test]
    fn chunked_matches_sequential() {
        let l = 33;
        let (x, delta, b, c, a, d) = random_case(7, l, 2, 3);
        let seq = scan_sequential(&x, &delta, &b, &c, &a, &d, l, 2, 3).unwrap();
        for chunk in [1usize, 2, 7, 64, l] {
            let ch = scan_chunked(&x, &delta, &b, &c, &a, &d, l, 2, 3, chunk).unwrap();
            for (i, (sv, cv)) in seq.iter().zip(&ch).enumerate() {
                assert!(
                    (sv - cv).abs() < 1e-10,
                    "chunk {chunk}, element {i}: {sv} vs {cv}"
                );
            }
        }
        assert!(scan_chunked(&x, &delta, &b, &c, &a, &d, l, 2, 3, 0).is_err());
    }

    #[test]
    fn reverse_indexed_equals_reverse_scan_reverse() {
        let l = 19;
        let (x, delta, b, c, a, d) = random_case(23, l, 3, 2);
        let direct = scan_reverse_indexed(&x, &delta, &b, &c, &a, &d, l, 3, 2).unwrap();

        let rev =
            |v: &[f64], row: usize| -> Vec<f64> { (0..l).rev().flat_map(|t| v[t * row..(t + 1) * row].to_vec()).collect() };
        let xr = rev(&x, 3);
        let dr = rev(&delta, 3);
        let br = rev(&b, 2);
        let cr = rev(&c, 2);
        let yr = scan_sequential(&xr, &dr, &br, &cr, &a, &d, l, 3, 2).unwrap();
        let back = rev(&yr, 3);
        for (dv, bv) in direct.iter().zip(&back) {
            assert!((dv - bv).abs() < 1e-12);
        }
    }

    #[test]
    fn discretize_step_hand_values() {
        // A=-1, delta=ln2, B=1 -> abar=0.5, bbar=ln2.
        let (abar, bbar) = discretize_step(&[-1.0], &[1.0], &[std::f64::consts::LN_2], 1, 1).unwrap();
        assert!((abar[0] - 0.5).abs() < 1e-15);
        assert!((bbar[0] - std::f64::consts::LN_2).abs() < 1e-15);
        // A=0, delta=1 -> abar=1, bbar=1.
        let (abar, bbar) = discretize_step(&[0.0], &[1.0], &[1.0], 1, 1).unwrap();
        assert_eq!(abar[0], 1.0);
        assert_eq!(bbar[0], 1.0);
        assert!(discretize_step(&[-1.0], &[1.0], &[0.0], 1, 1).is_err());
    }

    #[test]
    fn accumulator_case() {
        // A=0, delta=1, B=C=1, D=0, x=[1,1,1] -> y=[1,2,3].
        let y = scan_sequential(
            &[1.0, 1.0, 1.0],
            &[1.0; 3],
            &[1.0; 3],
            &[1.0; 3],
            &[0.0],
            &[0.0],
            3,
            1,
            1,
        )
        .unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn flatten_orders_and_round_trip() {
        // T=1, H=2, W=2, C=1, values [[a,b],[c,d]] = [1,2,3,4].
        let f = [1.0, 2.0, 3.0, 4.0];
        let (row, _) = flatten_features(&f, 1, 1, 2, 2, DirectionalOrder::RowMajor).unwrap();
        assert_eq!(row, vec![1.0, 2.0, 3.0, 4.0]);
        let (col, _) = flatten_features(&f, 1, 1, 2, 2, DirectionalOrder::ColMajor).unwrap();
        assert_eq!(col, vec![1.0, 3.0, 2.0, 4.0]);
        let (bwd, _) = flatten_features(&f, 1, 1, 2, 2, DirectionalOrder::Backward).unwrap();
        assert_eq!(bwd, vec![4.0, 3.0, 2.0, 1.0]);

        // Random multi-channel round trip through every order.
        let mut r = rng::prng(9);
        let (t, c, h, w) = (2usize, 3usize, 4usize, 4usize);
        let data: Vec<f64> = (0..t * c * h * w).map(|_| rng::normal(&mut r)).collect();
        for order in [
            DirectionalOrder::RowMajor,
            DirectionalOrder::ColMajor,
            DirectionalOrder::Forward,
            DirectionalOrder::Backward,
        ] {
            let (tokens, inv) = flatten_features(&data, t, c, h, w, order).unwrap();
            // Undo: permute rows back, then scatter [l,c] tokens into [t,c,h,w].
            let l = t * h * w;
            let mut restored = vec![0.0; data.len()];
            for i in 0..l {
                // Base token i landed at stream position inv[i].
                let pos = inv[i];
                let (ti, sp) = (i / (h * w), i % (h * w));
                for ch in 0..c {
                    restored[(ti * c + ch) * (h * w) + sp] = tokens[pos * c + ch];
                }
            }
            assert_eq!(restored, data, "{order:?}");
        }
    }

    #[test]
    fn bounded_state_under_decay() {
        // With abar = exp(delta*a) <= amax < 1 and |bbar*x| <= m, the state obeys
        // |h_t| <= m / (1 - amax): worst case all-ones input, constant params.
        let l = 200;
        let delta = vec![0.5; l];
        let a = [-0.4]; // abar = exp(-0.2) ~ 0.8187
        let b = vec![1.0; l];
        let c: Vec<f64> = vec![1.0; l];
        let d = [0.0];
        let x = vec![1.0; l];
        let y = scan_sequential(&x, &delta, &b, &c, &a, &d, l, 1, 1).unwrap();
        let amax = (0.5f64 * -0.4).exp();
        let bound = 0.5 / (1.0 - amax);
        for v in &y {
            assert!(v.abs() <= bound + 1e-12, "{v} exceeds {bound}");
        }
        // And the bound is approached, so it's tight rather than vacuous.
        assert!(y[l - 1] > 0.95 * bound);
    }

    #[test]
    fn col_major_perm_small_case() {
        // T=1, H=2, W=3: column-major visits (h,w) = (0,0),(1,0),(0,1),(1,1),(0,2),(1,2).
        assert_eq!(col_major_perm(1, 2, 3), vec![0, 3, 1, 4, 2, 5]);
        // Two frames offset by H*W.
        let p = col_major_perm(2, 2, 2);
        assert_eq!(p, vec![0, 2, 1, 3, 4, 6, 5, 7]);
        let inv = inverse_perm(&p);
        let mut id: Vec<usize> = (0..8).collect();
        let composed: Vec<usize> = (0..8).map(|i| p[inv[i]]).collect();
        id.sort_unstable();
        assert_eq!(composed, id);
    }
}
