//! Deterministic 64-bit numerical kernels: dense matrices, seeded random
//! sampling, symmetric eigen / top-k SVD, and the finite-difference gradient
//! oracle used by the test suites.

mod eigen;
mod matrix;
mod rng;

pub use eigen::{left_singular_basis, svd_top_k, sym_eigen};
pub use matrix::Matrix;
pub use rng::{sample_beta, sample_gamma, Rng};

use crate::error::{Result, SeqMixError};

/// log Σ exp(v_i) with max-shift for stability. Exact for constant vectors.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(SeqMixError::Param("logsumexp of empty vector".into()));
    }
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Ok(m);
    }
    let s: f64 = v.iter().map(|x| (x - m).exp()).sum();
    Ok(m + s.ln())
}

/// Central-difference gradient estimate of `loss_fn` at `theta`.
///
/// Test oracle for every analytic gradient in the crate; keep it independent
/// of any backward-pass code.
pub fn finite_diff_grad<F>(mut loss_fn: F, theta: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(eps > 0.0, "eps must be positive");
    let mut grad = vec![0.0; theta.len()];
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        probe[i] = theta[i] + eps;
        let plus = loss_fn(&probe);
        probe[i] = theta[i] - eps;
        let minus = loss_fn(&probe);
        probe[i] = theta[i];
        grad[i] = (plus - minus) / (2.0 * eps);
    }
    grad
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_two_zeros_is_ln2() {
        assert!((logsumexp(&[0.0, 0.0]).unwrap() - 2.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logsumexp_singleton_is_identity() {
        assert_eq!(logsumexp(&[3.25]).unwrap(), 3.25);
    }

    #[test]
    fn logsumexp_no_overflow() {
        let v = logsumexp(&[1000.0, 1000.0]).unwrap();
        assert!((v - (1000.0 + 2.0f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_empty_is_error() {
        assert!(logsumexp(&[]).is_err());
    }

    #[test]
    fn finite_diff_quadratic() {
        let g = finite_diff_grad(|t| 0.5 * t.iter().map(|x| x * x).sum::<f64>(), &[3.0, -1.0], 1e-5);
        assert!((g[0] - 3.0).abs() < 1e-8);
        assert!((g[1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_constant_is_zero() {
        let g = finite_diff_grad(|_| 7.0, &[1.0, 2.0, 3.0], 1e-5);
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[0.3, -1.2, 2.5]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
