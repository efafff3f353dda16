//! A small automatic-differentiation engine.
//!
//! Three scalar types implement [`Scalar`]: plain `f64`, the forward-mode
//! [`Dual`] number and the reverse-mode [`Var`] recorded on a [`Tape`].
//! Code written once against `Scalar` can therefore be evaluated, pushed
//! forward along a tangent, or pulled back along a cotangent. [`Jet`] lifts
//! any scalar to second-order input derivatives (value, spatial gradient and
//! the diagonal of the spatial Hessian), which is what PDE residuals need.
//!
//! [`Scalar::freeze`] is the stop-gradient: it keeps the primal value and
//! cuts every derivative path through the result.

mod dual;
mod jet;
mod tape;

pub use dual::Dual;
pub use jet::{input_derivatives, InputDerivatives, Jet, MAX_DIM};
pub use tape::{Tape, Var};

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{check_dim, Error, Result};

/// Arithmetic shared by every differentiable scalar type.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// A constant with zero derivative.
    fn cst(x: f64) -> Self;
    fn value(&self) -> f64;
    fn tanh(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn powi(self, n: i32) -> Self;
    /// Stop-gradient: same primal, zero derivative.
    fn freeze(self) -> Self;

    fn scale(self, c: f64) -> Self {
        self * Self::cst(c)
    }

    fn add_cst(self, c: f64) -> Self {
        self + Self::cst(c)
    }

    fn zero() -> Self {
        Self::cst(0.0)
    }

    /// `Σ a_i b_i`. Overridden where a fused reduction is cheaper.
    fn dot(a: &[Self], b: &[Self]) -> Self {
        a.iter()
            .zip(b)
            .fold(Self::zero(), |acc, (&x, &y)| acc + x * y)
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(x: f64) -> Self {
        x
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn freeze(self) -> Self {
        self
    }
    #[inline]
    fn scale(self, c: f64) -> Self {
        self * c
    }
    #[inline]
    fn add_cst(self, c: f64) -> Self {
        self + c
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
}

/// A vector-valued map of the parameters that can be evaluated with any
/// scalar type.
pub trait VectorFn {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval<S: Scalar>(&self, theta: &[S]) -> Result<Vec<S>>;
}

/// A scalar-valued map of the parameters.
pub trait ScalarFn {
    fn input_dim(&self) -> usize;
    fn eval<S: Scalar>(&self, theta: &[S]) -> Result<S>;
}

/// Jacobian-vector product `J f(θ) v` by forward-mode dual lifting.
pub fn jvp<F: VectorFn + ?Sized>(f: &F, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_dim(f.input_dim(), theta.len())?;
    check_dim(theta.len(), v.len())?;
    let lifted: Vec<Dual> = theta.iter().zip(v).map(|(&x, &t)| Dual::new(x, t)).collect();
    let out = f.eval(&lifted)?;
    let mut tangent = Vec::with_capacity(out.len());
    for (index, d) in out.iter().enumerate() {
        if !d.v.is_finite() || !d.t.is_finite() {
            return Err(Error::NonFinite { what: "jvp output", index });
        }
        tangent.push(d.t);
    }
    Ok(tangent)
}

/// Vector-Jacobian product `J f(θ)ᵀ w` with one reverse sweep over a tape.
pub fn vjp<F: VectorFn + ?Sized>(f: &F, theta: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    check_dim(f.input_dim(), theta.len())?;
    check_dim(f.output_dim(), w.len())?;
    let tape = Tape::new();
    let vars: Vec<Var> = theta.iter().map(|&x| tape.var(x)).collect();
    let out = f.eval(&vars)?;
    check_dim(w.len(), out.len())?;
    if let Some(index) = out.iter().position(|o| !o.value().is_finite()) {
        return Err(Error::NonFinite { what: "vjp output", index });
    }
    let adjoints = tape.reverse(out.iter().copied().zip(w.iter().copied()));
    let pulled: Vec<f64> = vars.iter().map(|v| v.adjoint(&adjoints)).collect();
    crate::error::check_finite(&pulled, "vjp cotangent")?;
    Ok(pulled)
}

/// Value and gradient of a scalar map.
pub fn value_and_grad<F: ScalarFn + ?Sized>(f: &F, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dim(f.input_dim(), theta.len())?;
    let tape = Tape::new();
    let vars: Vec<Var> = theta.iter().map(|&x| tape.var(x)).collect();
    let out = f.eval(&vars)?;
    let value = out.value();
    if !value.is_finite() {
        return Err(Error::NonFinite { what: "loss", index: 0 });
    }
    let adjoints = tape.reverse([(out, 1.0)]);
    let g: Vec<f64> = vars.iter().map(|v| v.adjoint(&adjoints)).collect();
    crate::error::check_finite(&g, "gradient")?;
    Ok((value, g))
}

/// `∇L(θ)`.
pub fn grad<F: ScalarFn + ?Sized>(f: &F, theta: &[f64]) -> Result<Vec<f64>> {
    value_and_grad(f, theta).map(|(_, g)| g)
}

/// Gradient of a scalar function of a handful of variables given as a plain
/// generic closure over [`Var`].
pub(crate) fn small_grad<F>(x: &[f64], f: F) -> (f64, Vec<f64>)
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = x.iter().map(|&v| tape.var(v)).collect();
    let out = f(&vars);
    let adjoints = tape.reverse([(out, 1.0)]);
    (out.value(), vars.iter().map(|v| v.adjoint(&adjoints)).collect())
}
