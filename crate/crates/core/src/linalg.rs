//! Conjugate gradients and operator norm estimation.
//!
//! Both routines are deterministic: inner products go through the pairwise
//! reductions of [`crate::exec`] and the power iteration starts from a fixed
//! vector, so repeated runs produce identical iterates.

use crate::exec;
use crate::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    exec::pairwise_sum_by(a.len(), |i| a[i] * b[i])
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Result of a conjugate gradient solve.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// True residual norm `||b - A x||_2` at exit.
    pub residual: f64,
}

/// Preconditioned conjugate gradients for a symmetric positive definite
/// operator, with a diagonal (Jacobi) preconditioner given by its inverse
/// entries. Converges when `||b - A x||_2 <= tol_rel * max(1, ||b||_2)`;
/// the recursive residual triggers the check and the true residual confirms
/// it.
pub fn pcg<A: Fn(&[f64]) -> Vec<f64>>(
    apply: A,
    inv_diag: &[f64],
    b: &[f64],
    tol_rel: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let n = b.len();
    let threshold = tol_rel * norm(b).max(1.0);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    if norm(&r) <= threshold {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            residual: norm(&r),
        });
    }
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(ri, d)| ri * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::CgDidNotConverge {
                iterations,
                residual: norm(&r),
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= threshold {
            // confirm against the true residual; restart if rounding drifted
            let ax = apply(&x);
            let true_r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            let true_norm = norm(&true_r);
            if true_norm <= threshold {
                return Ok(CgOutcome {
                    x,
                    iterations,
                    residual: true_norm,
                });
            }
            r = true_r;
            z = r.iter().zip(inv_diag).map(|(ri, d)| ri * d).collect();
            p = z.clone();
            rz = dot(&r, &z);
            continue;
        }
        z = r.iter().zip(inv_diag).map(|(ri, d)| ri * d).collect();
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_next;
    }
    Err(Error::CgDidNotConverge {
        iterations,
        residual: norm(&r),
    })
}

/// Result of a power iteration.
#[derive(Debug, Clone)]
pub struct OperatorNormEstimate {
    /// Final Rayleigh quotient.
    pub value: f64,
    pub iterations: usize,
    /// Whether the Rayleigh quotient settled to the requested tolerance.
    pub converged: bool,
}

/// Largest eigenvalue of an operator that is self-adjoint and positive
/// semidefinite in the inner product weighted by `weights`, via power
/// iteration from a fixed start vector.
pub fn operator_norm_weighted<T: Fn(&[f64]) -> Result<Vec<f64>>>(
    apply: T,
    weights: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<OperatorNormEstimate> {
    let n = weights.len();
    let dot_w = |a: &[f64], b: &[f64]| exec::pairwise_sum_by(n, |i| weights[i] * a[i] * b[i]);
    // fixed, non-degenerate start
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i % 17) as f64 / 16.0).collect();
    let nv = dot_w(&v, &v).sqrt();
    for vi in v.iter_mut() {
        *vi /= nv;
    }
    let mut rq_prev = f64::NAN;
    let mut settled = 0;
    for iterations in 1..=max_iter {
        let tv = apply(&v)?;
        let rq = dot_w(&v, &tv);
        if (rq - rq_prev).abs() <= tol * rq.abs().max(1e-300) {
            settled += 1;
            if settled >= 2 {
                return Ok(OperatorNormEstimate {
                    value: rq,
                    iterations,
                    converged: true,
                });
            }
        } else {
            settled = 0;
        }
        rq_prev = rq;
        let ntv = dot_w(&tv, &tv).sqrt();
        if ntv == 0.0 {
            // the operator annihilates the iterate: norm is zero
            return Ok(OperatorNormEstimate {
                value: 0.0,
                iterations,
                converged: true,
            });
        }
        v = tv;
        for vi in v.iter_mut() {
            *vi /= ntv;
        }
    }
    Ok(OperatorNormEstimate {
        value: rq_prev,
        iterations: max_iter,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cg_solves_a_small_spd_system() {
        // tridiagonal (2, -1) system
        let n = 50;
        let apply = |x: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let l = if i > 0 { x[i - 1] } else { 0.0 };
                    let r = if i + 1 < n { x[i + 1] } else { 0.0 };
                    2.0 * x[i] - l - r
                })
                .collect()
        };
        let inv_diag = vec![0.5; n];
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let out = pcg(apply, &inv_diag, &b, 1e-12, 10 * n).unwrap();
        let ax = apply(&out.x);
        let res: f64 = ax
            .iter()
            .zip(&b)
            .map(|(a, bb)| (a - bb) * (a - bb))
            .sum::<f64>()
            .sqrt();
        assert!(res <= 1e-12 * 10.0, "residual {res:e}");
    }

    #[test]
    fn cg_reports_non_convergence() {
        let n = 10;
        let apply = move |x: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let l = if i > 0 { x[i - 1] } else { 0.0 };
                    let r = if i + 1 < n { x[i + 1] } else { 0.0 };
                    2.0 * x[i] - l - r
                })
                .collect()
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let err = pcg(apply, &vec![0.5; n], &b, 1e-30, 2).unwrap_err();
        assert!(matches!(err, Error::CgDidNotConverge { .. }));
    }

    #[test]
    fn power_iteration_finds_the_top_eigenvalue() {
        let diag = [3.0, 1.0, 0.5, 0.25];
        let apply = |x: &[f64]| -> Result<Vec<f64>> {
            Ok(x.iter().zip(&diag).map(|(xi, d)| xi * d).collect())
        };
        let w = vec![1.0; 4];
        let est = operator_norm_weighted(apply, &w, 1e-13, 10_000).unwrap();
        assert!(est.converged);
        assert!((est.value - 3.0).abs() < 1e-10, "value {}", est.value);
    }

    #[test]
    fn power_iteration_on_identity_converges_immediately() {
        let apply = |x: &[f64]| -> Result<Vec<f64>> { Ok(x.to_vec()) };
        let w = vec![0.25; 8];
        let est = operator_norm_weighted(apply, &w, 1e-13, 100).unwrap();
        assert!(est.converged);
        assert_eq!(est.value, 1.0);
    }
}
