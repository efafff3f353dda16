//! Outer optimizers: NyströmNGD, dense and CG-based natural gradient descent,
//! gradient descent and BFGS, with the shared line search and the damping
//! and sketch-rank adaptation rules.

mod bfgs;
mod ngd;

pub use bfgs::{bfgs_run, bfgs_update, bfgs_update_in_place, gradient_descent_run, gradient_descent_step, BFGS_GUARD};
pub use ngd::{
    cg_direction, dense_direction, ngd_cg_run, ngd_cg_step, ngd_dense_run, ngd_dense_step, nystrom_direction,
    nystrom_ngd_run, nystrom_ngd_step, OptimizerState, StepReport,
};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gramian::GramianOperator;
use crate::linalg::{dot, LinearOperator};
use crate::model::Model;
use crate::problems::Pinn;

/// What an optimizer needs from a training problem.
pub trait Objective {
    fn num_params(&self) -> usize;

    fn loss(&self, theta: &[f64]) -> Result<f64>;

    fn loss_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// The Gramian at `theta`, frozen there.
    fn gramian<'a>(&'a self, theta: &[f64]) -> Result<Box<dyn LinearOperator + 'a>>;

    /// Error against a reference solution, if the problem has one.
    fn error(&self, _theta: &[f64]) -> Result<Option<f64>> {
        Ok(None)
    }
}

impl<M: Model> Objective for Pinn<M> {
    fn num_params(&self) -> usize {
        Pinn::num_params(self)
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        Pinn::loss(self, theta)
    }

    fn loss_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        Pinn::loss_and_grad(self, theta)
    }

    fn gramian<'a>(&'a self, theta: &[f64]) -> Result<Box<dyn LinearOperator + 'a>> {
        Ok(Box::new(GramianOperator::new(self, theta)?))
    }

    fn error(&self, theta: &[f64]) -> Result<Option<f64>> {
        self.h1_relative_error(theta).map(Some)
    }
}

/// Lower bound on the damping added to `γ·ε·λ̂₁`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MuFloor {
    None,
    Constant(f64),
    /// `c · L(θ)^α`.
    LossPower { c: f64, alpha: f64 },
    /// `c · ‖∇L(θ)‖^α`.
    GradPower { c: f64, alpha: f64 },
}

impl MuFloor {
    pub fn value(&self, loss: f64, grad_norm: f64) -> f64 {
        match *self {
            MuFloor::None => 0.0,
            MuFloor::Constant(c) => c,
            MuFloor::LossPower { c, alpha } => c * loss.powf(alpha),
            MuFloor::GradPower { c, alpha } => c * grad_norm.powf(alpha),
        }
    }
}

impl Default for MuFloor {
    /// `10⁻⁴·L(θ)²`, the floor used for PINNs.
    fn default() -> Self {
        MuFloor::LossPower { c: 1e-4, alpha: 2.0 }
    }
}

/// Armijo backtracking parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchParams {
    pub initial: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    pub c1: f64,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        Self { initial: 1.0, shrink: 0.5, max_backtracks: 30, c1: 1e-4 }
    }
}

/// Settings shared by the NGD-type optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct NystromNgdConfig {
    /// Initial sketch rank `ℓ₀`.
    pub ell0: usize,
    /// Rank cap; `None` means `min(500, p/2)`.
    pub ell_max: Option<usize>,
    /// Damping multiplier; `None` means `γ = p`.
    pub gamma: Option<f64>,
    /// PCG iteration cap.
    pub maxit: usize,
    /// Cap on the PCG relative tolerance.
    pub kappa: f64,
    pub mu_floor: MuFloor,
    /// Damping of the unpreconditioned baselines is `min(cap, L(θ))`.
    pub baseline_mu_cap: f64,
    /// Eigenvalue-to-damping ratio of the rank rule.
    pub rank_ratio: f64,
    /// Added to the first index below the ratio when the rank shrinks.
    pub rank_offset: usize,
    pub line_search: LineSearchParams,
    pub iterations: usize,
    /// Stop once this many cumulative matvecs have been spent.
    pub max_matvecs: Option<usize>,
    pub seed: u64,
}

impl Default for NystromNgdConfig {
    fn default() -> Self {
        Self {
            ell0: 10,
            ell_max: None,
            gamma: None,
            maxit: 20,
            kappa: 0.1,
            mu_floor: MuFloor::default(),
            baseline_mu_cap: 1e-5,
            rank_ratio: 10.0,
            rank_offset: 1,
            line_search: LineSearchParams::default(),
            iterations: 100,
            max_matvecs: None,
            seed: 0,
        }
    }
}

/// Configuration values with the dimension-dependent defaults filled in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolved {
    pub ell0: usize,
    pub ell_max: usize,
    pub gamma: f64,
}

impl NystromNgdConfig {
    /// Checks the settings and resolves the defaults for `p` parameters. A
    /// defaulted cap below `ℓ₀` lowers `ℓ₀` to the cap.
    pub fn resolve(&self, p: usize) -> Result<Resolved> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if p == 0 {
            return bad("no parameters".into());
        }
        if self.ell0 == 0 {
            return bad("initial rank must be at least 1".into());
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return bad(format!("kappa {} outside (0, 1)", self.kappa));
        }
        if self.maxit == 0 {
            return bad("maxit must be at least 1".into());
        }
        if !(self.rank_ratio > 0.0) {
            return bad(format!("rank ratio {} must be positive", self.rank_ratio));
        }
        let gamma = self.gamma.unwrap_or(p as f64);
        if !(gamma > 0.0 && gamma.is_finite()) {
            return bad(format!("gamma {gamma} must be positive"));
        }
        let ls = &self.line_search;
        if !(ls.shrink > 0.0 && ls.shrink < 1.0 && ls.c1 > 0.0 && ls.c1 < 1.0 && ls.initial > 0.0) {
            return bad("line search needs 0 < shrink < 1, 0 < c1 < 1 and a positive initial step".into());
        }
        let (ell0, ell_max) = match self.ell_max {
            Some(m) if m < self.ell0 || m > p => {
                return bad(format!("rank cap {m} must lie in {}..={p}", self.ell0));
            }
            Some(m) => (self.ell0, m),
            None => {
                let m = (p / 2).clamp(1, 500);
                (self.ell0.min(m), m)
            }
        };
        Ok(Resolved { ell0, ell_max, gamma })
    }
}

/// `μ = max(γ·ε·λ̂₁, floor)`.
pub fn adapt_mu(lambda1: f64, gamma: f64, loss: f64, grad_norm: f64, floor: &MuFloor) -> f64 {
    (gamma * f64::EPSILON * lambda1).max(floor.value(loss, grad_norm))
}

/// Next sketch rank: double while `λ̂_ℓ > 10μ`, otherwise shrink to one past
/// the first eigenvalue below `10μ`; never above `ell_max`.
pub fn adapt_rank(lambda: &[f64], mu: f64, ell: usize, ell_max: usize) -> usize {
    adapt_rank_with(lambda, mu, ell, ell_max, 10.0, 1)
}

pub fn adapt_rank_with(lambda: &[f64], mu: f64, ell: usize, ell_max: usize, ratio: f64, offset: usize) -> usize {
    let threshold = ratio * mu;
    match lambda.last() {
        Some(&last) if last > threshold => (2 * ell).min(ell_max),
        _ => {
            let first = lambda.iter().position(|&l| l < threshold).unwrap_or(lambda.len().saturating_sub(1));
            (first + 1 + offset).min(ell_max).max(1)
        }
    }
}

/// Result of a backtracking line search along `α ↦ θ − αd`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchOutcome {
    /// Accepted step, or zero on failure.
    pub alpha: f64,
    /// Loss at the accepted point, or the starting loss on failure.
    pub loss: f64,
    pub evaluations: usize,
    pub success: bool,
}

/// Largest `α = α₀βᵏ` with `L(θ − αd) ≤ L(θ) − c₁α⟨∇L, d⟩`. Directions with
/// `⟨∇L, d⟩ ≤ 0` fail without evaluating the loss; non-finite trial losses
/// count as no decrease.
pub fn backtracking_linesearch(
    theta: &[f64],
    d: &[f64],
    loss0: f64,
    grad: &[f64],
    mut loss_fn: impl FnMut(&[f64]) -> Result<f64>,
    params: &LineSearchParams,
) -> Result<LineSearchOutcome> {
    let slope = dot(grad, d);
    let mut out = LineSearchOutcome { alpha: 0.0, loss: loss0, evaluations: 0, success: false };
    if !(slope > 0.0) || !slope.is_finite() {
        return Ok(out);
    }
    let mut alpha = params.initial;
    let mut trial = vec![0.0; theta.len()];
    for _ in 0..=params.max_backtracks {
        for ((t, th), di) in trial.iter_mut().zip(theta).zip(d) {
            *t = th - alpha * di;
        }
        out.evaluations += 1;
        let value = match loss_fn(&trial) {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if value <= loss0 - params.c1 * alpha * slope {
            out.alpha = alpha;
            out.loss = value;
            out.success = true;
            return Ok(out);
        }
        alpha *= params.shrink;
    }
    Ok(out)
}

/// One row of an optimization trace. Row 0 is the initial state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub iteration: usize,
    pub loss: f64,
    pub h1_rel_error: f64,
    pub mu: f64,
    pub ell: usize,
    pub pcg_iters: usize,
    /// Cumulative.
    pub matvecs: usize,
    /// Cumulative wall-clock time.
    pub seconds: f64,
}

/// Final parameters and the trace of a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub theta: Vec<f64>,
    pub records: Vec<RunRecord>,
    pub line_search_failures: usize,
}

impl RunOutput {
    pub fn last(&self) -> &RunRecord {
        self.records.last().expect("a run always records its initial state")
    }

    /// Loss of the last record whose cumulative matvecs do not exceed `budget`.
    pub fn loss_at_matvecs(&self, budget: usize) -> f64 {
        self.records.iter().take_while(|r| r.matvecs <= budget).last().map_or(f64::NAN, |r| r.loss)
    }
}

/// Optimizers selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    NystromNgd,
    NgdCg,
    NgdDense,
    GradientDescent,
    Bfgs,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::NystromNgd, Method::NgdCg, Method::NgdDense, Method::GradientDescent, Method::Bfgs];

    pub fn by_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::UnknownOptimizer(name.to_string()))
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::NystromNgd => "nystrom_ngd",
            Method::NgdCg => "ngd_cg",
            Method::NgdDense => "ngd",
            Method::GradientDescent => "gd",
            Method::Bfgs => "bfgs",
        }
    }
}

pub fn run<O: Objective + ?Sized>(method: Method, obj: &O, theta0: &[f64], config: &NystromNgdConfig) -> Result<RunOutput> {
    match method {
        Method::NystromNgd => nystrom_ngd_run(obj, theta0, config),
        Method::NgdCg => ngd_cg_run(obj, theta0, config),
        Method::NgdDense => ngd_dense_run(obj, theta0, config),
        Method::GradientDescent => gradient_descent_run(obj, theta0, config),
        Method::Bfgs => bfgs_run(obj, theta0, config),
    }
}

/// Bookkeeping shared by the run loops.
pub(crate) struct Trace {
    start: std::time::Instant,
    matvecs: usize,
    pub(crate) records: Vec<RunRecord>,
    pub(crate) failures: usize,
}

impl Trace {
    pub(crate) fn start<O: Objective + ?Sized>(obj: &O, theta: &[f64], loss: f64, ell: usize) -> Result<Self> {
        let start = std::time::Instant::now();
        let h1 = obj.error(theta)?.unwrap_or(f64::NAN);
        let first = RunRecord { iteration: 0, loss, h1_rel_error: h1, mu: 0.0, ell, pcg_iters: 0, matvecs: 0, seconds: 0.0 };
        Ok(Self { start, matvecs: 0, records: vec![first], failures: 0 })
    }

    pub(crate) fn push<O: Objective + ?Sized>(
        &mut self,
        obj: &O,
        theta: &[f64],
        step: &StepReport,
    ) -> Result<()> {
        self.matvecs += step.matvecs;
        if !step.accepted {
            self.failures += 1;
        }
        let h1 = obj.error(theta)?.unwrap_or(f64::NAN);
        self.records.push(RunRecord {
            iteration: self.records.len(),
            loss: step.loss,
            h1_rel_error: h1,
            mu: step.mu,
            ell: step.ell,
            pcg_iters: step.pcg_iters,
            matvecs: self.matvecs,
            seconds: self.start.elapsed().as_secs_f64(),
        });
        Ok(())
    }

    pub(crate) fn exhausted(&self, config: &NystromNgdConfig) -> bool {
        self.records.len() > config.iterations || config.max_matvecs.is_some_and(|m| self.matvecs >= m)
    }

    pub(crate) fn finish(self, theta: Vec<f64>) -> RunOutput {
        RunOutput { theta, records: self.records, line_search_failures: self.failures }
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mu_formula() {
        let mu = adapt_mu(1.0, 1217.0, 1.0, 1.0, &MuFloor::None);
        assert_eq!(mu, 1217.0 * 2f64.powi(-52));
        assert!((mu - 2.702e-13).abs() < 1e-16);
        let floor = MuFloor::default();
        assert_eq!(adapt_mu(1e-3, 100.0, 1e-2, 1.0, &floor), 1e-4 * 1e-4);
        assert_eq!(adapt_mu(0.0, 100.0, 0.0, 0.0, &MuFloor::Constant(1e-9)), 1e-9);
        assert_eq!(MuFloor::GradPower { c: 2.0, alpha: 1.0 }.value(5.0, 3.0), 6.0);
    }

    #[test]
    fn rank_rule() {
        assert_eq!(adapt_rank(&[3.0, 2.0, 1.0], 0.05, 3, 100), 6);
        assert_eq!(adapt_rank(&[3.0, 2.0, 1.0], 0.05, 3, 4), 4);
        assert_eq!(adapt_rank(&[1.0, 0.5, 1e-6], 1e-3, 3, 100), 4);
        assert_eq!(adapt_rank(&[1.0, 0.5, 1e-6], 1e-3, 3, 2), 2);
        assert_eq!(adapt_rank(&[5.0; 8], 0.1, 8, 8), 8);
        assert_eq!(adapt_rank(&[1e-9; 8], 0.1, 8, 50), 2);
    }

    #[test]
    fn linesearch_cases() {
        let params = LineSearchParams::default();
        let f = |t: &[f64]| Ok(0.5 * dot(t, t));
        let theta = [1.0, -2.0];
        let l0 = 2.5;
        let out = backtracking_linesearch(&theta, &theta, l0, &theta, f, &params).unwrap();
        assert!(out.success && out.alpha == 1.0 && out.loss == 0.0 && out.evaluations == 1);

        // a long step along the gradient needs backtracking but succeeds
        let d = [10.0, -20.0];
        let out = backtracking_linesearch(&theta, &d, l0, &theta, f, &params).unwrap();
        assert!(out.success && out.alpha > 0.0 && out.alpha < 1.0);

        // moving uphill never decreases a convex loss
        let up = [-1.0, 2.0];
        let out = backtracking_linesearch(&theta, &up, l0, &theta, f, &params).unwrap();
        assert!(!out.success && out.alpha == 0.0);

        // non-finite trials count as no decrease
        let nan = |t: &[f64]| if t[0] < 0.0 { Err(Error::NonFinite { what: "loss", index: 0 }) } else { f(t) };
        let out = backtracking_linesearch(&theta, &[2.0, -4.0], l0, &theta, nan, &params).unwrap();
        assert!(out.success && out.alpha == 0.5);
    }

    #[test]
    fn config_resolution() {
        let c = NystromNgdConfig::default();
        assert_eq!(c.resolve(337).unwrap(), Resolved { ell0: 10, ell_max: 168, gamma: 337.0 });
        assert_eq!(c.resolve(5000).unwrap().ell_max, 500);
        assert_eq!(c.resolve(6).unwrap().ell0, 3);
        assert!(NystromNgdConfig { ell_max: Some(4), ..c.clone() }.resolve(100).is_err());
        assert!(NystromNgdConfig { kappa: 1.0, ..c.clone() }.resolve(100).is_err());
        assert!(NystromNgdConfig { gamma: Some(-1.0), ..c.clone() }.resolve(100).is_err());
        assert!(NystromNgdConfig { ell0: 0, ..c }.resolve(100).is_err());
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(Method::by_name(m.name()).unwrap(), m);
        }
        assert!(matches!(Method::by_name("adam"), Err(Error::UnknownOptimizer(_))));
    }
}
