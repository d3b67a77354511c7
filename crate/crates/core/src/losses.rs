//! Training and adaptation losses: mean-absolute-error + Pearson supervision,
//! softmax-contrastive feature alignment, and the weighted-angle prior.

use crate::error::{Error, Result};
use crate::tensor::graph::{Graph, TensorId};

/// A differentiable scalar plus a flag for degenerate (near-constant) inputs
/// where the correlation term was pinned to zero.
pub struct LossOut {
    pub value: TensorId,
    pub degenerate: bool,
}

const SIGMA_EPS: f64 = 1e-8;

/// Pearson correlation over all entries of `x` and `y` (row-major flatten):
/// r = Cov(x,y) / (sigma_x sigma_y), population covariance. If either sigma is
/// at most 1e-8 the result is the constant 0 with the degenerate flag set.
pub fn pearson(g: &mut Graph, x: TensorId, y: TensorId) -> Result<LossOut> {
    let (sx, sy) = (g.shape(x), g.shape(y));
    if sx != sy {
        return Err(Error::shape("pearson", format!("mismatched shapes {sx:?} vs {sy:?}")));
    }
    let k: usize = sx.iter().product();
    if k < 2 {
        return Err(Error::contract("pearson", format!("need at least 2 values, got {k}")));
    }
    let mx = g.mean(x, None)?;
    let my = g.mean(y, None)?;
    let dx = g.sub(x, mx)?;
    let dy = g.sub(y, my)?;
    let dxy = g.mul(dx, dy)?;
    let cov = g.mean(dxy, None)?;
    let dx2 = g.mul(dx, dx)?;
    let dy2 = g.mul(dy, dy)?;
    let varx = g.mean(dx2, None)?;
    let vary = g.mean(dy2, None)?;
    let sdx = g.sqrt(varx);
    let sdy = g.sqrt(vary);
    if g.item(sdx) <= SIGMA_EPS || g.item(sdy) <= SIGMA_EPS {
        return Ok(LossOut {
            value: g.scalar(0.0),
            degenerate: true,
        });
    }
    let denom = g.mul(sdx, sdy)?;
    let r = g.div(cov, denom)?;
    Ok(LossOut {
        value: r,
        degenerate: false,
    })
}

/// Mean of per-column Pearson correlations (used behind the per-axis flag).
fn pearson_per_axis(g: &mut Graph, x: TensorId, y: TensorId) -> Result<LossOut> {
    let cols = g.shape(x)[1];
    let mut degenerate = false;
    let mut acc: Option<TensorId> = None;
    for a in 0..cols {
        let xa = g.slice(x, 1, a, 1)?;
        let ya = g.slice(y, 1, a, 1)?;
        let p = pearson(g, xa, ya)?;
        degenerate |= p.degenerate;
        acc = Some(match acc {
            Some(s) => g.add(s, p.value)?,
            None => p.value,
        });
    }
    let inv = g.scalar(1.0 / cols as f64);
    let value = g.mul(acc.expect("cols >= 1"), inv)?;
    Ok(LossOut { value, degenerate })
}

/// Supervised loss: mean |pred - target| over all entries plus one minus the
/// Pearson correlation (flattened, or averaged per column when `per_axis`).
pub fn loss_sup(g: &mut Graph, pred: TensorId, target: TensorId, per_axis: bool) -> Result<LossOut> {
    let (sp, st) = (g.shape(pred), g.shape(target));
    if sp != st || sp.len() != 2 {
        return Err(Error::shape("loss_sup", format!("expected matching [k,6]-like shapes, got {sp:?} vs {st:?}")));
    }
    if sp[0] < 2 {
        return Err(Error::contract("loss_sup", format!("need at least 2 rows, got {}", sp[0])));
    }
    let diff = g.sub(pred, target)?;
    let ad = g.abs(diff);
    let mae = g.mean(ad, None)?;
    let p = if per_axis {
        pearson_per_axis(g, pred, target)?
    } else {
        pearson(g, pred, target)?
    };
    let one = g.scalar(1.0);
    let corr_term = g.sub(one, p.value)?;
    let value = g.add(mae, corr_term)?;
    Ok(LossOut {
        value,
        degenerate: p.degenerate,
    })
}

/// Row-alignment loss between two [k, d] feature sequences: the mean over
/// rows of -log softmax_j(S_ij / tau) at j = i, with S the raw dot-product
/// matrix (optionally on L2-normalized rows). Stable via row-max subtraction.
pub fn loss_align(g: &mut Graph, f_img: TensorId, f_other: TensorId, tau: f64, l2_normalize: bool) -> Result<TensorId> {
    let (si, so) = (g.shape(f_img), g.shape(f_other));
    if si != so || si.len() != 2 {
        return Err(Error::shape("loss_align", format!("expected matching [k,d] shapes, got {si:?} vs {so:?}")));
    }
    if si[0] < 2 {
        return Err(Error::contract("loss_align", format!("need at least 2 rows, got {}", si[0])));
    }
    if !(tau > 0.0) {
        return Err(Error::contract("loss_align", format!("temperature must be positive, got {tau}")));
    }
    let k = si[0];
    let (a, b) = if l2_normalize {
        (l2_rows(g, f_img)?, l2_rows(g, f_other)?)
    } else {
        (f_img, f_other)
    };
    let inv_tau = g.scalar(1.0 / tau);
    let bt = g.permute(b, &[1, 0])?;
    let s_raw = g.matmul(a, bt)?;
    let s = g.mul(s_raw, inv_tau)?;
    // Diagonal entries recomputed as row dots (cheaper than masking).
    let prod = g.mul(a, b)?;
    let diag_raw = g.sum(prod, Some(1))?;
    let diag = g.mul(diag_raw, inv_tau)?;
    // logsumexp rows with max subtraction.
    let m = g.row_max(s)?;
    let m_col = g.reshape(m, vec![k, 1])?;
    let shifted = g.sub(s, m_col)?;
    let e = g.exp(shifted);
    let se = g.sum(e, Some(1))?;
    let lse_rel = g.log(se);
    let lse = g.add(lse_rel, m)?;
    let per_row = g.sub(lse, diag)?;
    g.mean(per_row, None)
}

fn l2_rows(g: &mut Graph, x: TensorId) -> Result<TensorId> {
    let k = g.shape(x)[0];
    let sq = g.mul(x, x)?;
    let ssum = g.sum(sq, Some(1))?;
    let eps = g.scalar(1e-12);
    let safe = g.add(ssum, eps)?;
    let norm = g.sqrt(safe);
    let col = g.reshape(norm, vec![k, 1])?;
    g.div(x, col)
}

/// Weighted per-transition mean angle: w is [k, m] (rows on the simplex),
/// phi is [k, m, 3]; out[i, axis] = sum_j w[i,j] * phi[i,j,axis].
pub fn weighted_mean_angle(g: &mut Graph, w: TensorId, phi: TensorId) -> Result<TensorId> {
    let (sw, sp) = (g.shape(w).to_vec(), g.shape(phi).to_vec());
    if sw.len() != 2 || sp.len() != 3 || sp[0] != sw[0] || sp[1] != sw[1] || sp[2] != 3 {
        return Err(Error::shape(
            "weighted_mean_angle",
            format!("expected w [k,m] with phi [k,m,3], got {sw:?} and {sp:?}"),
        ));
    }
    let wc = g.reshape(w, vec![sw[0], sw[1], 1])?;
    let prod = g.mul(wc, phi)?;
    g.sum(prod, Some(1))
}

/// Angle-prior loss: one minus the Pearson correlation between predicted
/// angles and the weighted sensor mean, both [k, 3].
pub fn loss_prior(g: &mut Graph, phi_hat: TensorId, phi_bar: TensorId) -> Result<LossOut> {
    let (sh, sb) = (g.shape(phi_hat), g.shape(phi_bar));
    if sh != sb || sh.len() != 2 || sh[1] != 3 {
        return Err(Error::shape("loss_prior", format!("expected matching [k,3] shapes, got {sh:?} vs {sb:?}")));
    }
    let p = pearson(g, phi_hat, phi_bar)?;
    let one = g.scalar(1.0);
    let value = g.sub(one, p.value)?;
    Ok(LossOut {
        value,
        degenerate: p.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tensor::check::grad_check_multi;
    use crate::tensor::Tensor;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::from_vec(shape, data).unwrap()
    }

    /// 2x6 target whose flattened deviations are exactly +-1 (variance 1.0
    /// bit-exactly), so correlation identities evaluate without rounding.
    fn unit_dev_target() -> Tensor {
        t(vec![2, 6], vec![0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0])
    }

    #[test]
    fn pearson_hand_oracles() {
        let mut g = Graph::new();
        let x = g.leaf(&t(vec![3], vec![1.0, 2.0, 3.0]));
        let y_prop = g.leaf(&t(vec![3], vec![2.0, 4.0, 6.0]));
        let r = pearson(&mut g, x, y_prop).unwrap();
        assert!(!r.degenerate);
        assert!((g.item(r.value) - 1.0).abs() < 1e-12);

        let y_anti = g.leaf(&t(vec![3], vec![3.0, 2.0, 1.0]));
        let r = pearson(&mut g, x, y_anti).unwrap();
        assert!((g.item(r.value) + 1.0).abs() < 1e-12);

        // Hand-derived: r([1,2,3],[1,2,4]) = sqrt(27/28).
        let y = g.leaf(&t(vec![3], vec![1.0, 2.0, 4.0]));
        let r = pearson(&mut g, x, y).unwrap();
        let expect = (27.0f64 / 28.0).sqrt();
        assert!((g.item(r.value) - expect).abs() < 1e-12);
        assert!((g.item(r.value) - 0.9820).abs() < 1e-4);

        // Degenerate: constant input pins r to 0 and flags it.
        let c = g.leaf(&t(vec![3], vec![5.0, 5.0, 5.0]));
        let r = pearson(&mut g, c, x).unwrap();
        assert!(r.degenerate);
        assert_eq!(g.item(r.value), 0.0);
    }

    #[test]
    fn sup_loss_shift_is_exactly_one() {
        let mut g = Graph::new();
        let theta = unit_dev_target();
        let mut shifted = theta.clone();
        for v in shifted.data_mut() {
            *v += 1.0;
        }
        let a = g.leaf(&shifted);
        let b = g.leaf(&theta);
        let l = loss_sup(&mut g, a, b, false).unwrap();
        assert!(!l.degenerate);
        assert_eq!(g.item(l.value), 1.0, "constant shift must cost exactly its magnitude");

        // Identical prediction: exactly zero.
        let l0 = loss_sup(&mut g, b, b, false).unwrap();
        assert_eq!(g.item(l0.value), 0.0);
    }

    #[test]
    fn sup_loss_negation_hits_full_correlation_penalty() {
        let mut g = Graph::new();
        let theta = unit_dev_target();
        let mut neg = theta.clone();
        for v in neg.data_mut() {
            *v = -*v;
        }
        let a = g.leaf(&neg);
        let b = g.leaf(&theta);
        let l = loss_sup(&mut g, a, b, false).unwrap();
        // mean|2 theta| = 2 for this pattern; correlation term = 1-(-1) = 2.
        assert_eq!(g.item(l.value), 4.0);
    }

    #[test]
    fn sup_pearson_term_ignores_positive_affine_maps() {
        let mut r = rng::prng(41);
        let x = Tensor::randn(&mut r, vec![4, 6], 1.0);
        let y = Tensor::randn(&mut r, vec![4, 6], 1.0);
        let mut g = Graph::new();
        let (xi, yi) = (g.leaf(&x), g.leaf(&y));
        let base_r = pearson(&mut g, xi, yi).unwrap().value;
        let base = g.item(base_r);
        let mut ax = x.clone();
        for v in ax.data_mut() {
            *v = 2.5 * *v + 7.0;
        }
        let axi = g.leaf(&ax);
        let mapped_r = pearson(&mut g, axi, yi).unwrap().value;
        let mapped = g.item(mapped_r);
        assert!((base - mapped).abs() < 1e-12);
    }

    #[test]
    fn per_axis_flag_changes_the_statistic() {
        // Columns anti-correlate individually but the flat view mixes them.
        let mut g = Graph::new();
        let x = g.leaf(&t(vec![2, 2], vec![0.0, 10.0, 1.0, 11.0]));
        let y = g.leaf(&t(vec![2, 2], vec![1.0, 11.0, 0.0, 10.0]));
        let flat = loss_sup(&mut g, x, y, false).unwrap();
        let per = loss_sup(&mut g, x, y, true).unwrap();
        let f = g.item(flat.value);
        let p = g.item(per.value);
        assert!((f - p).abs() > 1e-6, "flat {f} vs per-axis {p} should differ");
    }

    #[test]
    fn align_identical_rows_cost_log_k() {
        let mut r = rng::prng(51);
        let row: Vec<f64> = (0..5).map(|_| rng::normal(&mut r)).collect();
        let rep: Vec<f64> = row.iter().cycle().take(20).cloned().collect();
        let mut g = Graph::new();
        let fa = g.leaf(&t(vec![4, 5], rep));
        let fi = g.leaf(&Tensor::randn(&mut r, vec![4, 5], 1.0));
        let l = loss_align(&mut g, fi, fa, 0.1, false).unwrap();
        let v = g.item(l);
        assert!((v - 4.0f64.ln()).abs() < 1e-6, "{v}");
        assert!((v - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn align_strong_diagonal_and_shifted_pairing() {
        let mut g = Graph::new();
        let eye = t(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let fi = g.leaf(&eye);
        let fa = g.leaf(&eye);
        let l_id = loss_align(&mut g, fi, fa, 0.1, false).unwrap();
        let l = g.item(l_id);
        let expect = (-10.0f64).exp().ln_1p(); // log(1 + e^-10)
        assert!((l - expect).abs() < 1e-12, "{l} vs {expect}");

        // Swapped rows: the positive pair sits off-diagonal, cost ~ 1/tau.
        let swapped = t(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0]);
        let fs = g.leaf(&swapped);
        let l_id = loss_align(&mut g, fi, fs, 0.1, false).unwrap();
        let l = g.item(l_id);
        assert!((l - 10.0).abs() < 1e-3, "{l}");
    }

    #[test]
    fn align_is_nonnegative_and_normalization_drops_row_scale() {
        let mut r = rng::prng(61);
        for _ in 0..20 {
            let a = Tensor::randn(&mut r, vec![3, 4], 1.5);
            let b = Tensor::randn(&mut r, vec![3, 4], 1.5);
            let mut g = Graph::new();
            let (ai, bi) = (g.leaf(&a), g.leaf(&b));
            let l_id = loss_align(&mut g, ai, bi, 0.1, false).unwrap();
            let l = g.item(l_id);
            assert!(l >= 0.0, "alignment loss went negative: {l}");
        }

        let a = Tensor::randn(&mut r, vec![3, 4], 1.0);
        let b = Tensor::randn(&mut r, vec![3, 4], 1.0);
        let mut scaled = a.clone();
        for (i, v) in scaled.data_mut().iter_mut().enumerate() {
            *v *= [2.0, 5.0, 0.5][i / 4];
        }
        let mut g = Graph::new();
        let (ai, bi, si) = (g.leaf(&a), g.leaf(&b), g.leaf(&scaled));
        let plain_id = loss_align(&mut g, ai, bi, 0.1, true).unwrap();
        let plain = g.item(plain_id);
        let resc_id = loss_align(&mut g, si, bi, 0.1, true).unwrap();
        let resc = g.item(resc_id);
        assert!((plain - resc).abs() < 1e-9, "normalized loss must ignore positive row scaling");
    }

    #[test]
    fn weighted_angle_hand_cases() {
        let mut g = Graph::new();
        // Single sensor passes through.
        let w1 = g.leaf(&t(vec![2, 1], vec![1.0, 1.0]));
        let phi1 = g.leaf(&t(vec![2, 1, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let out = weighted_mean_angle(&mut g, w1, phi1).unwrap();
        assert_eq!(g.value(out), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);

        // Equal weights, 10 and 20 degrees -> 15.
        let w2 = g.leaf(&t(vec![1, 2], vec![0.5, 0.5]));
        let phi2 = g.leaf(&t(vec![1, 2, 3], vec![10.0, 0.0, 0.0, 20.0, 0.0, 0.0]));
        let out = weighted_mean_angle(&mut g, w2, phi2).unwrap();
        assert_eq!(g.value(out)[0], 15.0);

        // (0.9, 0.1) over 0 and 100 degrees -> 10.
        let w3 = g.leaf(&t(vec![1, 2], vec![0.9, 0.1]));
        let phi3 = g.leaf(&t(vec![1, 2, 3], vec![0.0, 0.0, 0.0, 100.0, 0.0, 0.0]));
        let out = weighted_mean_angle(&mut g, w3, phi3).unwrap();
        assert!((g.value(out)[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn prior_anti_correlation_is_exactly_two() {
        let mut g = Graph::new();
        // [4,3] deviations exactly +-1.
        let bar = t(
            vec![4, 3],
            vec![0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0],
        );
        let mut hat = bar.clone();
        for v in hat.data_mut() {
            *v = -*v;
        }
        let (h, b) = (g.leaf(&hat), g.leaf(&bar));
        let l = loss_prior(&mut g, h, b).unwrap();
        assert_eq!(g.item(l.value), 2.0);

        // Positive proportionality costs zero.
        let mut scaled = bar.clone();
        for v in scaled.data_mut() {
            *v *= 3.0;
        }
        let s = g.leaf(&scaled);
        let l0 = loss_prior(&mut g, s, b).unwrap();
        assert!(g.item(l0.value).abs() < 1e-12);
    }

    #[test]
    fn all_losses_pass_grad_check() {
        let mut r = rng::prng(71);
        let a = Tensor::randn(&mut r, vec![3, 6], 1.0).with_grad();
        let b = Tensor::randn(&mut r, vec![3, 6], 1.0).with_grad();
        let err = grad_check_multi(
            |g, ids| {
                let l = loss_sup(g, ids[0], ids[1], false)?;
                Ok(l.value)
            },
            &[a.clone(), b.clone()],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "loss_sup rel err {err}");

        let fa = Tensor::randn(&mut r, vec![3, 4], 0.8).with_grad();
        let fb = Tensor::randn(&mut r, vec![3, 4], 0.8).with_grad();
        for norm in [false, true] {
            let err = grad_check_multi(
                |g, ids| loss_align(g, ids[0], ids[1], 0.1, norm),
                &[fa.clone(), fb.clone()],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "loss_align(norm={norm}) rel err {err}");
        }

        let h = Tensor::randn(&mut r, vec![4, 3], 1.0).with_grad();
        let w = {
            // Random simplex rows so the weighted-angle path is exercised.
            let mut raw = Tensor::randn(&mut r, vec![4, 2], 0.5);
            for row in raw.data_mut().chunks_mut(2) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    s += *v;
                }
                for v in row.iter_mut() {
                    *v /= s;
                }
            }
            raw.with_grad()
        };
        let phi = Tensor::randn(&mut r, vec![4, 2, 3], 2.0).with_grad();
        let err = grad_check_multi(
            |g, ids| {
                let bar = weighted_mean_angle(g, ids[1], ids[2])?;
                let l = loss_prior(g, ids[0], bar)?;
                Ok(l.value)
            },
            &[h, w, phi],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "loss_prior rel err {err}");
    }
}
