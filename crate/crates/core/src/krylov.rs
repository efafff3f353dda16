//! Conjugate gradients over matrix-free symmetric positive definite operators.

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::{axpy, dot, norm, LinearOperator};
use crate::sketch::PreconditionerHandle;

/// Iterations between recomputations of the true residual `b − Ax`.
pub const RESIDUAL_REFRESH: usize = 50;

/// Outcome of a (preconditioned) CG solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `‖b − Ax‖ / ‖b‖` of the returned solution.
    pub rel_residual: f64,
    /// Operator applications, including the final residual check.
    pub matvecs: usize,
    /// Preconditioner applications.
    pub precond_applications: usize,
    pub converged: bool,
    /// `pᵀAp ≤ 0` was encountered.
    pub breakdown: bool,
}

/// Solves `Ax = b` from `x₀ = 0`.
///
/// `maxit` bounds the operator applications spent on iterations and residual
/// refreshes; one more is used to verify the returned iterate. The stopping
/// test is on the unpreconditioned relative residual.
pub fn pcg<O: LinearOperator + ?Sized>(
    op: &O,
    b: &[f64],
    rel_tol: f64,
    maxit: usize,
    precond: Option<&PreconditionerHandle>,
) -> Result<SolveReport> {
    check_dim(op.dim(), b.len())?;
    check_finite(b, "right-hand side")?;
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::InvalidArgument(format!("relative tolerance {rel_tol} outside (0, 1)")));
    }
    if maxit == 0 {
        return Err(Error::InvalidArgument("maxit must be at least 1".into()));
    }
    let n = b.len();
    let bnorm = norm(b);
    let mut report = SolveReport {
        solution: vec![0.0; n],
        iterations: 0,
        rel_residual: 0.0,
        matvecs: 0,
        precond_applications: 0,
        converged: true,
        breakdown: false,
    };
    if bnorm == 0.0 {
        return Ok(report);
    }

    let precondition = |r: &[f64], report: &mut SolveReport| -> Result<Vec<f64>> {
        match precond {
            Some(h) => {
                report.precond_applications += 1;
                h.apply(r)
            }
            None => Ok(r.to_vec()),
        }
    };

    let x = &mut report.solution.clone();
    let mut r = b.to_vec();
    let mut z = precondition(&r, &mut report)?;
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut budget = maxit;
    let mut since_refresh = 0;

    loop {
        let mut done = norm(&r) <= rel_tol * bnorm;
        if !done && budget > 0 {
            let q = op.apply(&p)?;
            budget -= 1;
            report.matvecs += 1;
            report.iterations += 1;
            since_refresh += 1;
            let pq = dot(&p, &q);
            if !(pq > 0.0) {
                report.breakdown = true;
                done = true;
            } else {
                let alpha = rz / pq;
                axpy(alpha, &p, x);
                if since_refresh == RESIDUAL_REFRESH && budget > 0 {
                    let ax = op.apply(x)?;
                    budget -= 1;
                    report.matvecs += 1;
                    since_refresh = 0;
                    for ((ri, bi), ai) in r.iter_mut().zip(b).zip(&ax) {
                        *ri = bi - ai;
                    }
                } else {
                    axpy(-alpha, &q, &mut r);
                }
                z = precondition(&r, &mut report)?;
                let rz_next = dot(&r, &z);
                let beta = rz_next / rz;
                rz = rz_next;
                for (pi, zi) in p.iter_mut().zip(&z) {
                    *pi = zi + beta * *pi;
                }
                continue;
            }
        }
        if !done && budget == 0 {
            done = true;
        }
        if done {
            // Verify the iterate with the true residual.
            let ax = op.apply(x)?;
            report.matvecs += 1;
            for ((ri, bi), ai) in r.iter_mut().zip(b).zip(&ax) {
                *ri = bi - ai;
            }
            let rel = norm(&r) / bnorm;
            if rel <= rel_tol || budget == 0 || report.breakdown {
                report.rel_residual = rel;
                report.converged = rel <= rel_tol && !report.breakdown;
                break;
            }
            // Recursive residual drifted: restart from the true residual.
            z = precondition(&r, &mut report)?;
            p = z.clone();
            rz = dot(&r, &z);
            since_refresh = 0;
        }
    }
    check_finite(x, "CG solution")?;
    report.solution = x.clone();
    Ok(report)
}
