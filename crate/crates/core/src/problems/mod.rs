//! PDE problems discretized as least-squares residuals at quadrature points.
//!
//! Each problem supplies, per point role, a residual functional of the
//! network's output jet and a metric functional `𝔽_{ū} u` that is linear in
//! `u` once the linearization point `ū` is frozen.

mod pinn;
mod quadrature;

pub use pinn::{Backend, LossFn, MetricStackFn, Pinn, ResidualStackFn};
pub use quadrature::{PointSet, QuadratureSet};

use std::f64::consts::PI;

use crate::autodiff::{Jet, Scalar};
use crate::error::{Error, Result};

/// What a quadrature point is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Interior,
    Boundary,
    /// Initial-time slice of a space-time domain.
    Initial,
}

/// Which metric a problem's natural gradient uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    /// Metric induced by a linear strong-form least-squares functional.
    LeastSquares,
    /// Inner product of an SPD operator (Deep Ritz style).
    Energy,
    /// Hessian of the energy; requires it to be SPD.
    Newton,
    /// `⟨DR(u)[v], DR(u)[w]⟩` for a nonlinear residual `R`.
    GaussNewton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problem {
    /// `u'' + f = 0` on (0,1), `u = 0` at both ends, `u* = sin(πx)`.
    Poisson1d,
    /// `Δu + f = 0` on (0,1)², `u = 0` on the boundary, `u* = sin(πx) sin(πy)`.
    Poisson2d,
    /// `u_t − u_xx = f` on (0,1)×(0,1) with Dirichlet and initial data,
    /// `u* = cos(πx) exp(−π²t/4)`. Inputs are ordered `(t, x)`.
    Heat1p1d,
    /// `−Δu + u³ = f` on (0,1)², `u = 0` on the boundary, `u* = sin(πx) sin(πy)`.
    NlPoisson2d,
    /// L² projection of `sin(πx)` on (0,1): residual `u − sin(πx)`, metric `u`.
    L2Fit1d,
}

impl Problem {
    pub const SHIPPED: [Problem; 4] =
        [Problem::Poisson1d, Problem::Poisson2d, Problem::Heat1p1d, Problem::NlPoisson2d];

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "poisson1d" => Ok(Problem::Poisson1d),
            "poisson2d" => Ok(Problem::Poisson2d),
            "heat1p1d" => Ok(Problem::Heat1p1d),
            "nlpoisson2d" => Ok(Problem::NlPoisson2d),
            "l2fit1d" => Ok(Problem::L2Fit1d),
            other => Err(Error::UnknownProblem(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Problem::Poisson1d => "poisson1d",
            Problem::Poisson2d => "poisson2d",
            Problem::Heat1p1d => "heat1p1d",
            Problem::NlPoisson2d => "nlpoisson2d",
            Problem::L2Fit1d => "l2fit1d",
        }
    }

    pub fn input_dim(self) -> usize {
        match self {
            Problem::Poisson1d | Problem::L2Fit1d => 1,
            Problem::Poisson2d | Problem::Heat1p1d | Problem::NlPoisson2d => 2,
        }
    }

    pub fn metric_kind(self) -> MetricKind {
        match self {
            Problem::NlPoisson2d => MetricKind::GaussNewton,
            _ => MetricKind::LeastSquares,
        }
    }

    pub fn roles(self) -> &'static [Role] {
        match self {
            Problem::L2Fit1d => &[Role::Interior],
            Problem::Heat1p1d => &[Role::Interior, Role::Boundary, Role::Initial],
            _ => &[Role::Interior, Role::Boundary],
        }
    }

    /// Measure of the set the role's points are drawn from.
    pub fn measure(self, role: Role) -> f64 {
        match (self, role) {
            (_, Role::Interior) => 1.0,
            (Problem::Poisson1d | Problem::L2Fit1d, Role::Boundary) => 2.0,
            (Problem::Heat1p1d, Role::Boundary) => 2.0,
            (_, Role::Boundary) => 4.0,
            (_, Role::Initial) => 1.0,
        }
    }

    /// Map uniform samples `u ∈ [0,1)^dim` (plus one selector) to a point of the role's set.
    pub(crate) fn place(self, role: Role, u: &[f64], out: &mut Vec<f64>) {
        match (self.input_dim(), role) {
            (d, Role::Interior) => out.extend_from_slice(&u[..d]),
            (1, Role::Boundary) => out.push(if u[0] < 0.5 { 0.0 } else { 1.0 }),
            (_, Role::Boundary) if self == Problem::Heat1p1d => {
                out.push(u[0]);
                out.push(if u[1] < 0.5 { 0.0 } else { 1.0 });
            }
            (_, Role::Boundary) => {
                let s = 4.0 * u[0];
                let (x, y) = match s as usize {
                    0 => (s, 0.0),
                    1 => (1.0, s - 1.0),
                    2 => (3.0 - s, 1.0),
                    _ => (0.0, 4.0 - s),
                };
                out.push(x);
                out.push(y);
            }
            (_, Role::Initial) => {
                out.push(0.0);
                out.push(u[0]);
            }
        }
    }

    /// Density `φ_u` of the metric at a point; one for every shipped metric.
    pub fn density(self, _role: Role, _x: &[f64]) -> f64 {
        1.0
    }

    /// Exact solution as a jet at `x`.
    pub fn exact_jet(self, x: &[f64]) -> Jet<f64> {
        match self {
            Problem::Poisson1d | Problem::L2Fit1d => {
                let (s, c) = (PI * x[0]).sin_cos();
                let mut j = Jet::constant(1, s);
                j.g[0] = PI * c;
                j.h[0] = -PI * PI * s;
                j
            }
            Problem::Poisson2d | Problem::NlPoisson2d => {
                let (sx, cx) = (PI * x[0]).sin_cos();
                let (sy, cy) = (PI * x[1]).sin_cos();
                let mut j = Jet::constant(2, sx * sy);
                j.g[0] = PI * cx * sy;
                j.g[1] = PI * sx * cy;
                j.h[0] = -PI * PI * sx * sy;
                j.h[1] = -PI * PI * sx * sy;
                j
            }
            Problem::Heat1p1d => {
                let (t, xx) = (x[0], x[1]);
                let e = (-PI * PI * t / 4.0).exp();
                let (s, c) = (PI * xx).sin_cos();
                let mut j = Jet::constant(2, c * e);
                j.g[0] = -PI * PI / 4.0 * c * e;
                j.g[1] = -PI * s * e;
                j.h[0] = PI.powi(4) / 16.0 * c * e;
                j.h[1] = -PI * PI * c * e;
                j
            }
        }
    }

    fn source(self, x: &[f64]) -> f64 {
        let u = self.exact_jet(x).v;
        match self {
            Problem::Poisson1d => PI * PI * u,
            Problem::Poisson2d => 2.0 * PI * PI * u,
            Problem::NlPoisson2d => 2.0 * PI * PI * u + u * u * u,
            Problem::Heat1p1d => 0.75 * PI * PI * u,
            Problem::L2Fit1d => u,
        }
    }

    /// Number of residual components at a point of the given role.
    pub fn residual_len(self, role: Role) -> usize {
        usize::from(self.roles().contains(&role))
    }

    /// Number of metric components at a point of the given role.
    pub fn metric_len(self, role: Role) -> usize {
        match (self, role) {
            (Problem::Heat1p1d, Role::Interior) => 2,
            (Problem::Heat1p1d, Role::Boundary) => 0,
            _ => self.residual_len(role),
        }
    }

    /// Residual components at `x` for the output jet `u`.
    pub fn residual<S: Scalar>(self, role: Role, x: &[f64], u: &Jet<S>, out: &mut Vec<S>) {
        match (self, role) {
            (Problem::L2Fit1d, Role::Interior) => out.push(u.v.add_cst(-self.source(x))),
            (Problem::Heat1p1d, Role::Interior) => {
                out.push((u.g[0] - u.h[1]).add_cst(-self.source(x)));
            }
            (Problem::NlPoisson2d, Role::Interior) => {
                out.push((u.laplacian() - u.v.powi(3)).add_cst(self.source(x)));
            }
            (_, Role::Interior) => out.push(u.laplacian().add_cst(self.source(x))),
            (Problem::Heat1p1d, Role::Boundary | Role::Initial) => {
                out.push(u.v.add_cst(-self.exact_jet(x).v));
            }
            (_, Role::Boundary) if self != Problem::L2Fit1d => out.push(u.v),
            _ => {}
        }
    }

    /// Metric components `𝔽_{ū} u` at `x`; `frozen` is the linearization point.
    pub fn metric<S: Scalar>(self, role: Role, x: &[f64], u: &Jet<S>, frozen: &Jet<S>, out: &mut Vec<S>) {
        let _ = x;
        match (self, role) {
            (Problem::L2Fit1d, Role::Interior) => out.push(u.v),
            (Problem::Heat1p1d, Role::Interior) => {
                out.push(u.g[0] - u.h[1]);
                out.push(u.v);
            }
            (Problem::Heat1p1d, Role::Initial) => out.push(u.v),
            (Problem::Heat1p1d, Role::Boundary) => {}
            (Problem::NlPoisson2d, Role::Interior) => {
                let ubar = frozen.v;
                out.push(u.laplacian() - (ubar * ubar).scale(3.0) * u.v);
            }
            (_, Role::Interior) => out.push(u.laplacian()),
            (_, Role::Boundary) if self != Problem::L2Fit1d => out.push(u.v),
            _ => {}
        }
    }
}
