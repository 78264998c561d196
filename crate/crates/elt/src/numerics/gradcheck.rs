//! Central finite-difference gradient oracle.
//!
//! Evaluates a forward-only closure; deliberately shares no code with the
//! backward pass it is used to check.

use crate::error::Result;
use crate::numerics::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference gradients of `f` at `params`, one tensor per parameter.
pub fn finite_difference_grads<F>(mut f: F, params: &[Tensor], h: f64) -> Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    let mut work: Vec<Tensor> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut grad = Tensor::zeros(params[pi].shape().to_vec());
        for ei in 0..params[pi].numel() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + h;
            let up = f(&work)?;
            work[pi].data_mut()[ei] = orig - h;
            let down = f(&work)?;
            work[pi].data_mut()[ei] = orig;
            grad.data_mut()[ei] = (up - down) / (2.0 * h);
        }
        grads.push(grad);
    }
    Ok(grads)
}

/// Max relative error between two gradient sets. The denominator is floored
/// at 1e-6 so elements that are numerically zero on both sides compare clean.
pub fn max_relative_error(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric.iter()) {
        for (&av, &nv) in a.data().iter().zip(n.data().iter()) {
            let denom = av.abs().max(nv.abs()).max(1e-6);
            worst = worst.max((av - nv).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let p = Tensor::from_vec(vec![2], vec![3.0, -1.5]).unwrap();
        let grads = finite_difference_grads(
            |ps| Ok(ps[0].data().iter().map(|v| v * v).sum()),
            &[p],
            DEFAULT_STEP,
        )
        .unwrap();
        assert!((grads[0].data()[0] - 6.0).abs() < 1e-8);
        assert!((grads[0].data()[1] + 3.0).abs() < 1e-8);
    }
}
