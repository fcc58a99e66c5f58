//! Conjugate gradients for Hermitian positive semidefinite operators on
//! `ComplexTensor4`.

use crate::error::{Error, Result};
use crate::tensor::{inner_unchecked, ComplexTensor4};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub max_iters: usize,
    /// Stop when `||b - A x|| <= tol * ||b||`.
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: ComplexTensor4,
    pub iterations: usize,
    pub converged: bool,
    /// Residual norm `||b - A x||` before the first and after every iteration.
    pub residuals: Vec<f64>,
}

/// Solve `A x = b` from the warm start `x0`.
///
/// Curvature `p^* A p` below `-1e-10 ||p||^2` means `A` is not positive
/// semidefinite and is reported as `Error::OperatorDefect`.
pub fn conjugate_gradient(
    apply: impl Fn(&ComplexTensor4) -> Result<ComplexTensor4>,
    b: &ComplexTensor4,
    x0: ComplexTensor4,
    opts: CgOptions,
) -> Result<CgOutcome> {
    conjugate_gradient_observed(apply, b, x0, opts, |_, _, _| {})
}

/// As [`conjugate_gradient`], calling `observe(iteration, x, r)` with the
/// iterate and its residual `r = b - A x` after every iteration.
pub fn conjugate_gradient_observed(
    apply: impl Fn(&ComplexTensor4) -> Result<ComplexTensor4>,
    b: &ComplexTensor4,
    x0: ComplexTensor4,
    opts: CgOptions,
    mut observe: impl FnMut(usize, &ComplexTensor4, &ComplexTensor4),
) -> Result<CgOutcome> {
    b.check_same_shape(&x0)?;
    let mut x = x0;
    let mut r = b.sub(&apply(&x)?);
    let b_norm = b.norm();
    let target = opts.tol * b_norm;
    let mut rr = r.norm_sqr();
    let mut residuals = vec![rr.sqrt()];
    if rr.sqrt() <= target || rr == 0.0 {
        return Ok(CgOutcome { x, iterations: 0, converged: true, residuals });
    }
    let mut p = r.clone();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        let ap = apply(&p)?;
        let curv = inner_unchecked(&p, &ap).re;
        let pp = p.norm_sqr();
        if curv < -1e-10 * pp {
            return Err(Error::OperatorDefect(curv / pp));
        }
        if curv <= 0.0 {
            // p lies in the null space and r is orthogonal to the range: done.
            break;
        }
        let alpha = rr / curv;
        x.axpy_real(alpha, &p);
        r.axpy_real(-alpha, &ap);
        let rr_new = r.norm_sqr();
        iterations += 1;
        residuals.push(rr_new.sqrt());
        observe(iterations, &x, &r);
        if rr_new.sqrt() <= target {
            converged = true;
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        p.scale_real(beta);
        p.axpy_real(1.0, &r);
    }
    Ok(CgOutcome { x, iterations, converged, residuals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Dims, Domain};
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag_op(d: Vec<f64>) -> impl Fn(&ComplexTensor4) -> Result<ComplexTensor4> {
        move |x: &ComplexTensor4| {
            let mut y = x.clone();
            for (v, s) in y.data_mut().iter_mut().zip(&d) {
                *v *= s;
            }
            Ok(y)
        }
    }

    #[test]
    fn solves_diagonal_system() {
        let dims = Dims::new(1, 1, 4, 4);
        let d: Vec<f64> = (0..16).map(|i| 1.0 + i as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = ComplexTensor4::random_normal(dims, Domain::Image, &mut rng);
        let out = conjugate_gradient(
            diag_op(d.clone()),
            &b,
            ComplexTensor4::zeros(dims, Domain::Image),
            CgOptions { max_iters: 50, tol: 1e-12 },
        )
        .unwrap();
        assert!(out.converged);
        for ((x, b), s) in out.x.data().iter().zip(b.data()).zip(&d) {
            assert!((x * s - b).norm() < 1e-10);
        }
        assert!(out.residuals.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn negative_curvature_is_defect() {
        let dims = Dims::new(1, 1, 2, 2);
        let b = ComplexTensor4::from_vec(dims, Domain::Image, vec![Complex64::new(1.0, 0.0); 4]).unwrap();
        let err = conjugate_gradient(
            diag_op(vec![-1.0; 4]),
            &b,
            ComplexTensor4::zeros(dims, Domain::Image),
            CgOptions { max_iters: 5, tol: 1e-10 },
        );
        assert!(matches!(err, Err(Error::OperatorDefect(_))));
    }
}
