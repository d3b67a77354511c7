//! Finite-difference gradient verification for scalar-valued graph functions.

use super::graph::{Graph, TensorId};
use super::Tensor;
use crate::error::{Error, Result};

/// Max over all coordinates of |analytic - central difference| / max(1, |analytic|)
/// for a scalar function of several tensors.
pub fn grad_check_multi<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[TensorId]) -> Result<TensorId>,
{
    // Analytic pass.
    let mut g = Graph::new();
    let ids: Vec<TensorId> = inputs
        .iter()
        .map(|t| {
            let mut t = t.clone();
            if !t.requires_grad() {
                t = t.with_grad();
            }
            g.leaf(&t)
        })
        .collect();
    let root = f(&mut g, &ids)?;
    if g.value(root).len() != 1 {
        return Err(Error::contract(
            "grad_check",
            format!("function must return a scalar, got {:?}", g.shape(root)),
        ));
    }
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            g.grad(id)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; g.value(id).len()])
        })
        .collect();

    // Forward-only evaluation helper.
    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<TensorId> = perturbed.iter().map(|t| g.leaf(t)).collect();
        let root = f(&mut g, &ids)?;
        Ok(g.value(root)[0])
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for ti in 0..inputs.len() {
        for ci in 0..inputs[ti].numel() {
            let orig = inputs[ti].data()[ci];
            work[ti].data_mut()[ci] = orig + eps;
            let up = eval(&work)?;
            work[ti].data_mut()[ci] = orig - eps;
            let down = eval(&work)?;
            work[ti].data_mut()[ci] = orig;
            let central = (up - down) / (2.0 * eps);
            let a = analytic[ti][ci];
            let rel = (a - central).abs() / a.abs().max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

/// Single-input convenience wrapper around [`grad_check_multi`].
pub fn grad_check<F>(f: F, input: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, TensorId) -> Result<TensorId>,
{
    grad_check_multi(|g, ids| f(g, ids[0]), std::slice::from_ref(input), eps)
}
