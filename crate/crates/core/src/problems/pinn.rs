use crate::autodiff::{self, Jet, Scalar, ScalarFn, Var, VectorFn};
use crate::error::{check_dim, Error, Result};
use crate::model::{MlpBatch, Model};

use super::{Problem, QuadratureSet, Role};

/// How parameter derivatives of the stacks are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    /// Scalar engine: dual lifting for JVPs, one reverse tape per VJP.
    Engine,
    /// Layer-wise batched differentiation when the model supports it,
    /// falling back to [`Backend::Engine`] otherwise.
    #[default]
    Batched,
}

/// A problem discretized with a parametric model at fixed quadrature points.
#[derive(Debug)]
pub struct Pinn<M: Model> {
    problem: Problem,
    model: M,
    quad: QuadratureSet,
    eval: Option<QuadratureSet>,
    backend: Backend,
    points: Vec<f64>,
}

/// One stack entry's point: role, coordinates and weight `w_r φ(x_r)`.
#[derive(Debug, Clone, Copy)]
pub struct StackPoint<'q> {
    pub role: Role,
    pub x: &'q [f64],
    pub weight: f64,
}

impl<M: Model> Pinn<M> {
    pub fn new(problem: Problem, model: M, quad: QuadratureSet) -> Result<Self> {
        check_dim(problem.input_dim(), model.input_dim())?;
        check_dim(problem.input_dim(), quad.dim())?;
        check_dim(1, model.output_dim())?;
        let points = quad.sets().iter().flat_map(|s| s.points.iter().copied()).collect();
        Ok(Self { problem, model, quad, eval: None, backend: Backend::default(), points })
    }

    /// Independent point set used for the H¹ error.
    pub fn with_eval(mut self, eval: QuadratureSet) -> Result<Self> {
        check_dim(self.problem.input_dim(), eval.dim())?;
        self.eval = Some(eval);
        Ok(self)
    }

    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn problem(&self) -> Problem {
        self.problem
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn quadrature(&self) -> &QuadratureSet {
        &self.quad
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn num_params(&self) -> usize {
        self.model.num_params()
    }

    pub fn stack_points(&self) -> impl Iterator<Item = StackPoint<'_>> {
        let problem = self.problem;
        self.quad.sets().iter().flat_map(move |s| {
            s.iter_points().zip(&s.weights).map(move |(x, &w)| StackPoint {
                role: s.role,
                x,
                weight: w * problem.density(s.role, x),
            })
        })
    }

    /// Diagonal weights of the residual stack.
    pub fn residual_weights(&self) -> Vec<f64> {
        self.stack_points()
            .flat_map(|p| std::iter::repeat_n(p.weight, self.problem.residual_len(p.role)))
            .collect()
    }

    /// Diagonal weights `w_r φ(x_r)` of the metric stack.
    pub fn metric_weights(&self) -> Vec<f64> {
        self.stack_points()
            .flat_map(|p| std::iter::repeat_n(p.weight, self.problem.metric_len(p.role)))
            .collect()
    }

    pub fn residual_len(&self) -> usize {
        self.stack_points().map(|p| self.problem.residual_len(p.role)).sum()
    }

    pub fn metric_len(&self) -> usize {
        self.stack_points().map(|p| self.problem.metric_len(p.role)).sum()
    }

    /// Batched forward pass over every training point, if the backend and
    /// model allow it.
    pub fn batch(&self, theta: &[f64]) -> Option<Result<MlpBatch>> {
        match self.backend {
            Backend::Engine => None,
            Backend::Batched => self.model.batch(theta, &self.points),
        }
    }

    /// `[R(θ)(x_r)]_r` over all roles in quadrature order.
    pub fn residual_stack(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.num_params(), theta.len())?;
        let out = match self.batch(theta) {
            Some(batch) => {
                let batch = batch?;
                let mut out = Vec::with_capacity(self.residual_len());
                for (b, p) in self.stack_points().enumerate() {
                    self.problem.residual(p.role, p.x, &batch.output_jets(b)[0], &mut out);
                }
                out
            }
            None => ResidualStackFn::new(self).eval::<f64>(theta)?,
        };
        crate::error::check_finite(&out, "residual stack")?;
        Ok(out)
    }

    /// `[𝔽_{u_θ̄} u_θ(x_r)]_r` with the linearization point `θ̄` held fixed.
    pub fn metric_stack(&self, theta: &[f64], frozen: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.num_params(), theta.len())?;
        check_dim(self.num_params(), frozen.len())?;
        let out = MetricStackFn::at(self, frozen).eval::<f64>(theta)?;
        crate::error::check_finite(&out, "metric stack")?;
        Ok(out)
    }

    /// `L(θ) = ½ Σ_r w_r φ(x_r) ‖R_r(θ)‖²`.
    pub fn loss(&self, theta: &[f64]) -> Result<f64> {
        let r = self.residual_stack(theta)?;
        let loss = 0.5 * r.iter().zip(self.residual_weights()).map(|(r, w)| w * r * r).sum::<f64>();
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(Error::NonFinite { what: "loss", index: 0 })
        }
    }

    pub fn loss_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.num_params(), theta.len())?;
        let Some(batch) = self.batch(theta) else {
            return autodiff::value_and_grad(&LossFn::new(self), theta);
        };
        let batch = batch?;
        let dim = batch.dim();
        let mut cot = vec![0.0; batch.outputs().len()];
        let mut loss = 0.0;
        let mut comps = Vec::with_capacity(batch.components());
        for (b, p) in self.stack_points().enumerate() {
            comps.clear();
            batch.output_jets(b)[0].to_components(&mut comps);
            let problem = self.problem;
            let (half_sq, partials) = autodiff::small_grad(&comps, |c: &[Var<'_>]| {
                let u = Jet::from_components(dim, c).expect("component count");
                let mut r = Vec::with_capacity(2);
                problem.residual(p.role, p.x, &u, &mut r);
                Var::dot(&r, &r).scale(0.5)
            });
            loss += p.weight * half_sq;
            for (c, d) in partials.iter().enumerate() {
                cot[batch.index(0, c, b)] = p.weight * d;
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "loss", index: 0 });
        }
        Ok((loss, batch.vjp(&cot)?))
    }

    /// Relative H¹ error of `u_θ` against the exact solution on the
    /// evaluation set (the training interior points if none was given).
    pub fn h1_relative_error(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.num_params(), theta.len())?;
        let eval = self.eval_set();
        let points: Vec<f64> = eval.sets().iter().flat_map(|s| s.points.iter().copied()).collect();
        let batch = match self.backend {
            Backend::Batched => self.model.batch(theta, &points).transpose()?,
            Backend::Engine => None,
        };
        let mut index = 0;
        self.h1_relative_error_of(|x| {
            let jet = match &batch {
                Some(b) => b.output_jets(index).swap_remove(0),
                None => self.model.jets::<f64>(theta, x)?.swap_remove(0),
            };
            index += 1;
            Ok(jet)
        })
    }

    /// Relative H¹ error of an arbitrary approximant given by its jet at each
    /// evaluation point (visited in order).
    pub fn h1_relative_error_of(&self, mut approx: impl FnMut(&[f64]) -> Result<Jet<f64>>) -> Result<f64> {
        let (mut err, mut norm) = (0.0, 0.0);
        for set in self.eval_set().sets() {
            for (x, &w) in set.iter_points().zip(&set.weights) {
                let u = approx(x)?;
                let exact = self.problem.exact_jet(x);
                let mut e = (u.v - exact.v).powi(2);
                let mut n = exact.v * exact.v;
                for i in 0..set.dim {
                    e += (u.g[i] - exact.g[i]).powi(2);
                    n += exact.g[i] * exact.g[i];
                }
                err += w * e;
                norm += w * n;
            }
        }
        if norm == 0.0 {
            return Err(Error::ZeroNormExact);
        }
        let rel = (err / norm).sqrt();
        if rel.is_finite() {
            Ok(rel)
        } else {
            Err(Error::NonFinite { what: "H1 error", index: 0 })
        }
    }

    fn eval_set(&self) -> &QuadratureSet {
        self.eval.as_ref().unwrap_or(&self.quad)
    }
}

/// The residual stack as a differentiable map of `θ`.
pub struct ResidualStackFn<'a, M: Model> {
    pinn: &'a Pinn<M>,
}

impl<'a, M: Model> ResidualStackFn<'a, M> {
    pub fn new(pinn: &'a Pinn<M>) -> Self {
        Self { pinn }
    }
}

impl<M: Model> VectorFn for ResidualStackFn<'_, M> {
    fn input_dim(&self) -> usize {
        self.pinn.num_params()
    }

    fn output_dim(&self) -> usize {
        self.pinn.residual_len()
    }

    fn eval<S: Scalar>(&self, theta: &[S]) -> Result<Vec<S>> {
        let mut out = Vec::with_capacity(self.output_dim());
        for p in self.pinn.stack_points() {
            let jets = self.pinn.model.jets(theta, p.x)?;
            self.pinn.problem.residual(p.role, p.x, &jets[0], &mut out);
        }
        Ok(out)
    }
}

/// Where the metric is linearized.
#[derive(Debug, Clone, Copy)]
enum Linearization<'a> {
    /// `θ̄ = sg(θ)`: the evaluation point itself behind a stop-gradient.
    Frozen,
    /// A fixed, separately given `θ̄`.
    At(&'a [f64]),
    /// `θ̄ = θ` without stop-gradient; only useful as a negative control.
    Unfrozen,
}

/// The metric stack `F(θ) = [𝔽_{u_sg(θ)} u_θ(x_r)]_r` as a differentiable map.
pub struct MetricStackFn<'a, M: Model> {
    pinn: &'a Pinn<M>,
    linearization: Linearization<'a>,
}

impl<'a, M: Model> MetricStackFn<'a, M> {
    /// Linearized at the evaluation point through the stop-gradient.
    pub fn frozen(pinn: &'a Pinn<M>) -> Self {
        Self { pinn, linearization: Linearization::Frozen }
    }

    pub fn at(pinn: &'a Pinn<M>, frozen: &'a [f64]) -> Self {
        Self { pinn, linearization: Linearization::At(frozen) }
    }

    /// Differentiates through the linearization point as well. This is not a
    /// metric Jacobian; it exists to show what the stop-gradient prevents.
    pub fn unfrozen(pinn: &'a Pinn<M>) -> Self {
        Self { pinn, linearization: Linearization::Unfrozen }
    }
}

impl<M: Model> VectorFn for MetricStackFn<'_, M> {
    fn input_dim(&self) -> usize {
        self.pinn.num_params()
    }

    fn output_dim(&self) -> usize {
        self.pinn.metric_len()
    }

    fn eval<S: Scalar>(&self, theta: &[S]) -> Result<Vec<S>> {
        let mut out = Vec::with_capacity(self.output_dim());
        for p in self.pinn.stack_points() {
            let jets = self.pinn.model.jets(theta, p.x)?;
            let u = jets[0];
            let frozen = match self.linearization {
                Linearization::Frozen => u.freeze(),
                Linearization::Unfrozen => u,
                Linearization::At(bar) => self.pinn.model.jets::<f64>(bar, p.x)?[0].lift(),
            };
            self.pinn.problem.metric(p.role, p.x, &u, &frozen, &mut out);
        }
        Ok(out)
    }
}

/// The loss as a differentiable scalar map.
pub struct LossFn<'a, M: Model> {
    pinn: &'a Pinn<M>,
}

impl<'a, M: Model> LossFn<'a, M> {
    pub fn new(pinn: &'a Pinn<M>) -> Self {
        Self { pinn }
    }
}

impl<M: Model> ScalarFn for LossFn<'_, M> {
    fn input_dim(&self) -> usize {
        self.pinn.num_params()
    }

    fn eval<S: Scalar>(&self, theta: &[S]) -> Result<S> {
        let r = ResidualStackFn::new(self.pinn).eval(theta)?;
        let w: Vec<S> = self.pinn.residual_weights().into_iter().map(S::cst).collect();
        let wr: Vec<S> = r.iter().zip(&w).map(|(&r, &w)| r * w).collect();
        Ok(S::dot(&wr, &r).scale(0.5))
    }
}
