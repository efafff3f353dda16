//! Dense BFGS and gradient descent.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result};
use crate::linalg::{self, dot};

use super::ngd::{OptimizerState, StepReport};
use super::{backtracking_linesearch, NystromNgdConfig, Objective, RunOutput, Trace};

/// Largest parameter count for the dense inverse-Hessian approximation.
pub const BFGS_GUARD: usize = 5000;

/// `H + [ρ + ρ²yᵀHy] ssᵀ − ρ[(Hy)sᵀ + s(Hy)ᵀ]` with `ρ = 1/sᵀy`, in place.
/// Returns `false` and leaves `h` untouched when `sᵀy ≤ 0`.
pub fn bfgs_update_in_place(h: &mut DMatrix<f64>, s: &[f64], y: &[f64]) -> Result<bool> {
    let n = h.nrows();
    check_dim(n, h.ncols())?;
    check_dim(n, s.len())?;
    check_dim(n, y.len())?;
    let sy = dot(s, y);
    if !(sy > 0.0) {
        return Ok(false);
    }
    let rho = 1.0 / sy;
    let hy = &*h * DVector::from_column_slice(y);
    let a = rho + rho * rho * dot(y, hy.as_slice());
    for j in 0..n {
        for i in 0..n {
            h[(i, j)] += a * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
    Ok(true)
}

pub fn bfgs_update(h: &DMatrix<f64>, s: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
    let mut next = h.clone();
    bfgs_update_in_place(&mut next, s, y)?;
    Ok(next)
}

/// One step `θ − α∇L` with backtracking.
pub fn gradient_descent_step<O: Objective + ?Sized>(
    obj: &O,
    state: &mut OptimizerState,
    config: &NystromNgdConfig,
) -> Result<StepReport> {
    let (loss, grad) = obj.loss_and_grad(&state.theta)?;
    let ls = backtracking_linesearch(&state.theta, &grad, loss, &grad, |t| obj.loss(t), &config.line_search)?;
    if ls.success {
        linalg::axpy(-ls.alpha, &grad, &mut state.theta);
    }
    state.loss = ls.loss;
    state.iteration += 1;
    Ok(StepReport { direction: grad, alpha: ls.alpha, loss: ls.loss, mu: 0.0, ell: 0, pcg_iters: 0, matvecs: 0, accepted: ls.success })
}

pub fn gradient_descent_run<O: Objective + ?Sized>(obj: &O, theta0: &[f64], config: &NystromNgdConfig) -> Result<RunOutput> {
    let mut state = OptimizerState::new(obj, theta0, config)?;
    let mut trace = Trace::start(obj, theta0, state.loss, 0)?;
    while !trace.exhausted(config) {
        let step = gradient_descent_step(obj, &mut state, config)?;
        trace.push(obj, &state.theta, &step)?;
    }
    Ok(trace.finish(state.theta))
}

/// BFGS from `H₀ = I`. A failed line search resets `H` to the identity.
pub fn bfgs_run<O: Objective + ?Sized>(obj: &O, theta0: &[f64], config: &NystromNgdConfig) -> Result<RunOutput> {
    let p = theta0.len();
    if p > BFGS_GUARD {
        return Err(crate::Error::GuardExceeded { dim: p, limit: BFGS_GUARD });
    }
    let mut state = OptimizerState::new(obj, theta0, config)?;
    let mut trace = Trace::start(obj, theta0, state.loss, 0)?;
    let mut h = DMatrix::<f64>::identity(p, p);
    let (mut loss, mut grad) = obj.loss_and_grad(theta0)?;
    while !trace.exhausted(config) {
        let d = (&h * DVector::from_column_slice(&grad)).as_slice().to_vec();
        let ls = backtracking_linesearch(&state.theta, &d, loss, &grad, |t| obj.loss(t), &config.line_search)?;
        if ls.success {
            let s: Vec<f64> = d.iter().map(|x| -ls.alpha * x).collect();
            linalg::axpy(1.0, &s, &mut state.theta);
            let (next_loss, next_grad) = obj.loss_and_grad(&state.theta)?;
            let y: Vec<f64> = next_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
            bfgs_update_in_place(&mut h, &s, &y)?;
            loss = next_loss;
            grad = next_grad;
        } else {
            h.fill_with_identity();
        }
        state.loss = loss;
        let step = StepReport { direction: d, alpha: ls.alpha, loss, mu: 0.0, ell: 0, pcg_iters: 0, matvecs: 0, accepted: ls.success };
        trace.push(obj, &state.theta, &step)?;
    }
    Ok(trace.finish(state.theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::testing::Quadratic;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textbook(h: &DMatrix<f64>, s: &[f64], y: &[f64]) -> DMatrix<f64> {
        let n = h.nrows();
        let (s, y) = (DVector::from_column_slice(s), DVector::from_column_slice(y));
        let rho = 1.0 / s.dot(&y);
        let i = DMatrix::<f64>::identity(n, n);
        let left = &i - rho * &s * y.transpose();
        let right = &i - rho * &y * s.transpose();
        left * h * right + rho * &s * s.transpose()
    }

    #[test]
    fn identity_with_equal_pair_stays_identity() {
        let mut s = vec![0.0; 4];
        s[1] = 1.0;
        let h = bfgs_update(&DMatrix::identity(4, 4), &s, &s).unwrap();
        assert!((h - DMatrix::<f64>::identity(4, 4)).norm() < 1e-15);
    }

    #[test]
    fn matches_textbook_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let z = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            let h = &z * z.transpose() + DMatrix::identity(5, 5);
            let s: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut y: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            if dot(&s, &y) <= 0.0 {
                y.iter_mut().for_each(|v| *v = -*v);
            }
            let a = bfgs_update(&h, &s, &y).unwrap();
            let b = textbook(&h, &s, &y);
            for (x, t) in a.iter().zip(b.iter()) {
                assert!((x - t).abs() <= 1e-12 * t.abs().max(1.0));
            }
        }
    }

    #[test]
    fn negative_curvature_is_skipped() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let next = bfgs_update(&h, &[1.0, 0.0], &[-1.0, 0.0]).unwrap();
        assert_eq!(next, h);
    }

    #[test]
    fn bfgs_and_gd_decrease_a_quadratic() {
        let a = DMatrix::from_fn(6, 6, |i, j| if i == j { 1.0 + i as f64 } else { 0.1 });
        let q = Quadratic { a, minimizer: vec![1.0; 6] };
        let config = NystromNgdConfig { iterations: 30, ..Default::default() };
        let b = bfgs_run(&q, &[0.0; 6], &config).unwrap();
        assert!(b.last().loss < 1e-12, "{}", b.last().loss);
        let g = gradient_descent_run(&q, &[0.0; 6], &config).unwrap();
        assert!(g.records.windows(2).all(|w| w[1].loss <= w[0].loss));
        assert!(g.last().loss < g.records[0].loss);
    }

    #[test]
    fn gd_at_stationary_point_keeps_theta() {
        let q = Quadratic { a: DMatrix::identity(3, 3), minimizer: vec![0.5; 3] };
        let config = NystromNgdConfig::default();
        let mut state = OptimizerState::new(&q, &[0.5; 3], &config).unwrap();
        let step = gradient_descent_step(&q, &mut state, &config).unwrap();
        assert_eq!(state.theta, vec![0.5; 3]);
        assert!(!step.accepted);
    }

    #[test]
    fn gd_direction_matches_identity_metric_ngd() {
        let q = Quadratic { a: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])), minimizer: vec![1.0, 1.0] };
        let (_, grad) = q.loss_and_grad(&[0.0, 0.0]).unwrap();
        let d = crate::optim::dense_direction(&DMatrix::identity(2, 2), &grad, 0.0).unwrap();
        let config = NystromNgdConfig::default();
        let mut state = OptimizerState::new(&q, &[0.0, 0.0], &config).unwrap();
        let step = gradient_descent_step(&q, &mut state, &config).unwrap();
        assert_eq!(step.direction, d);
    }
}
