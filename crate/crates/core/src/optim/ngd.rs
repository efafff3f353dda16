//! NyströmNGD and the natural-gradient baselines.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::krylov::{pcg, SolveReport};
use crate::linalg::{self, norm, LinearOperator, Shifted};
use crate::sketch::{nystrom_approximate, NystromFactor, PreconditionerHandle};

use super::{adapt_mu, adapt_rank_with, backtracking_linesearch, NystromNgdConfig, Objective, RunOutput, Trace};

/// Loop state of NyströmNGD.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub theta: Vec<f64>,
    pub loss: f64,
    pub ell: usize,
    pub ell_max: usize,
    pub gamma: f64,
    pub last_factor: Option<NystromFactor>,
    pub iteration: usize,
    pub matvecs: usize,
    /// Damping lower bound imposed after a failed line search.
    pub failure_floor: f64,
    pub rng: ChaCha8Rng,
}

impl OptimizerState {
    pub fn new<O: Objective + ?Sized>(obj: &O, theta0: &[f64], config: &NystromNgdConfig) -> Result<Self> {
        check_dim(obj.num_params(), theta0.len())?;
        let r = config.resolve(theta0.len())?;
        Ok(Self {
            theta: theta0.to_vec(),
            loss: obj.loss(theta0)?,
            ell: r.ell0,
            ell_max: r.ell_max,
            gamma: r.gamma,
            last_factor: None,
            iteration: 0,
            matvecs: 0,
            failure_floor: 0.0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }
}

/// Summary of one outer iteration.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub direction: Vec<f64>,
    pub alpha: f64,
    /// Loss after the step (unchanged if the line search failed).
    pub loss: f64,
    pub mu: f64,
    /// Sketch rank used in this iteration.
    pub ell: usize,
    pub pcg_iters: usize,
    /// Operator applications spent in this iteration.
    pub matvecs: usize,
    pub accepted: bool,
}

/// `(G+μI)⁻¹∇L` by PCG with the Nyström preconditioner built from `factor`.
pub fn nystrom_direction<O: LinearOperator + ?Sized>(
    op: &O,
    grad: &[f64],
    factor: NystromFactor,
    mu: f64,
    rel_tol: f64,
    maxit: usize,
) -> Result<SolveReport> {
    if mu <= 0.0 {
        return Err(Error::ZeroDamping);
    }
    let precond = PreconditionerHandle::new(factor, mu)?;
    pcg(&Shifted::new(op, mu), grad, rel_tol, maxit, Some(&precond))
}

/// `(G+μI)⁻¹∇L` by plain CG.
pub fn cg_direction<O: LinearOperator + ?Sized>(
    op: &O,
    grad: &[f64],
    mu: f64,
    rel_tol: f64,
    maxit: usize,
) -> Result<SolveReport> {
    if mu <= 0.0 {
        return Err(Error::ZeroDamping);
    }
    pcg(&Shifted::new(op, mu), grad, rel_tol, maxit, None)
}

/// `(G+μI)†∇L` through an SVD with cutoff `p·ε·σ₁`.
pub fn dense_direction(g: &DMatrix<f64>, grad: &[f64], mu: f64) -> Result<Vec<f64>> {
    let p = g.nrows();
    check_dim(p, g.ncols())?;
    check_dim(p, grad.len())?;
    let shifted = g + DMatrix::identity(p, p) * mu;
    let svd = shifted.svd(true, true);
    let sigma1 = svd.singular_values.max();
    let cutoff = p as f64 * f64::EPSILON * sigma1;
    let u = svd.u.as_ref().expect("requested");
    let vt = svd.v_t.as_ref().expect("requested");
    let mut c = u.tr_mul(&DVector::from_column_slice(grad));
    for (ci, s) in c.iter_mut().zip(svd.singular_values.iter()) {
        *ci = if *s > cutoff { *ci / s } else { 0.0 };
    }
    Ok((vt.transpose() * c).as_slice().to_vec())
}

/// One NyströmNGD iteration on `state`.
pub fn nystrom_ngd_step<O: Objective + ?Sized>(
    obj: &O,
    state: &mut OptimizerState,
    config: &NystromNgdConfig,
) -> Result<StepReport> {
    let (loss, grad) = obj.loss_and_grad(&state.theta)?;
    let gnorm = norm(&grad);
    let op = obj.gramian(&state.theta)?;
    let before = op.matvecs();
    let ell = state.ell;
    let factor = nystrom_approximate(&*op, ell, state.rng.random())?;
    let lambda = factor.eigenvalues().to_vec();
    let mu = adapt_mu(factor.largest(), state.gamma, loss, gnorm, &config.mu_floor).max(state.failure_floor);
    let (direction, pcg_iters) = if gnorm == 0.0 {
        (vec![0.0; grad.len()], 0)
    } else {
        let rel_tol = config.kappa.min(gnorm);
        let report = nystrom_direction(&*op, &grad, factor.clone(), mu, rel_tol, config.maxit)?;
        (report.solution, report.iterations)
    };
    let matvecs = op.matvecs() - before;
    let step = finish_step(obj, state, loss, &grad, direction, mu, ell, pcg_iters, matvecs, config)?;
    state.ell = adapt_rank_with(&lambda, mu, ell, state.ell_max, config.rank_ratio, config.rank_offset);
    state.last_factor = Some(factor);
    Ok(step)
}

#[allow(clippy::too_many_arguments)]
fn finish_step<O: Objective + ?Sized>(
    obj: &O,
    state: &mut OptimizerState,
    loss: f64,
    grad: &[f64],
    direction: Vec<f64>,
    mu: f64,
    ell: usize,
    pcg_iters: usize,
    matvecs: usize,
    config: &NystromNgdConfig,
) -> Result<StepReport> {
    let ls = backtracking_linesearch(&state.theta, &direction, loss, grad, |t| obj.loss(t), &config.line_search)?;
    if ls.success {
        linalg::axpy(-ls.alpha, &direction, &mut state.theta);
        state.failure_floor = 0.0;
    } else {
        state.failure_floor = 10.0 * mu;
    }
    state.loss = ls.loss;
    state.iteration += 1;
    state.matvecs += matvecs;
    Ok(StepReport { direction, alpha: ls.alpha, loss: ls.loss, mu, ell, pcg_iters, matvecs, accepted: ls.success })
}

/// NyströmNGD from `theta0`.
pub fn nystrom_ngd_run<O: Objective + ?Sized>(obj: &O, theta0: &[f64], config: &NystromNgdConfig) -> Result<RunOutput> {
    let mut state = OptimizerState::new(obj, theta0, config)?;
    let mut trace = Trace::start(obj, theta0, state.loss, state.ell)?;
    while !trace.exhausted(config) {
        let step = nystrom_ngd_step(obj, &mut state, config)?;
        trace.push(obj, &state.theta, &step)?;
    }
    Ok(trace.finish(state.theta))
}

/// Damping of the unpreconditioned baselines, `min(cap, L)`, raised after a
/// failed line search.
fn baseline_mu(loss: f64, state: &OptimizerState, config: &NystromNgdConfig) -> f64 {
    config.baseline_mu_cap.min(loss).max(state.failure_floor)
}

/// One NGD iteration solved by plain CG with `maxit + ℓ_max` iterations.
pub fn ngd_cg_step<O: Objective + ?Sized>(
    obj: &O,
    state: &mut OptimizerState,
    config: &NystromNgdConfig,
) -> Result<StepReport> {
    let (loss, grad) = obj.loss_and_grad(&state.theta)?;
    let gnorm = norm(&grad);
    let mu = baseline_mu(loss, state, config);
    let op = obj.gramian(&state.theta)?;
    let (direction, iters) = if gnorm == 0.0 {
        (vec![0.0; grad.len()], 0)
    } else {
        let r = cg_direction(&*op, &grad, mu, config.kappa.min(gnorm), config.maxit + state.ell_max)?;
        (r.solution, r.iterations)
    };
    let matvecs = op.matvecs();
    finish_step(obj, state, loss, &grad, direction, mu, 0, iters, matvecs, config)
}

pub fn ngd_cg_run<O: Objective + ?Sized>(obj: &O, theta0: &[f64], config: &NystromNgdConfig) -> Result<RunOutput> {
    let mut state = OptimizerState::new(obj, theta0, config)?;
    let mut trace = Trace::start(obj, theta0, state.loss, 0)?;
    while !trace.exhausted(config) {
        let step = ngd_cg_step(obj, &mut state, config)?;
        trace.push(obj, &state.theta, &step)?;
    }
    Ok(trace.finish(state.theta))
}

/// One NGD iteration with the dense SVD pseudoinverse; `mu` overrides the
/// baseline damping when given.
pub fn ngd_dense_step<O: Objective + ?Sized>(
    obj: &O,
    state: &mut OptimizerState,
    mu: Option<f64>,
    config: &NystromNgdConfig,
) -> Result<StepReport> {
    let (loss, grad) = obj.loss_and_grad(&state.theta)?;
    let mu = mu.unwrap_or_else(|| baseline_mu(loss, state, config));
    let op = obj.gramian(&state.theta)?;
    let g = linalg::assemble_dense(&*op)?;
    let direction = dense_direction(&g, &grad, mu)?;
    let matvecs = op.matvecs();
    finish_step(obj, state, loss, &grad, direction, mu, 0, 0, matvecs, config)
}

pub fn ngd_dense_run<O: Objective + ?Sized>(obj: &O, theta0: &[f64], config: &NystromNgdConfig) -> Result<RunOutput> {
    let mut state = OptimizerState::new(obj, theta0, config)?;
    let mut trace = Trace::start(obj, theta0, state.loss, 0)?;
    while !trace.exhausted(config) {
        let step = ngd_dense_step(obj, &mut state, None, config)?;
        trace.push(obj, &state.theta, &step)?;
    }
    Ok(trace.finish(state.theta))
}
