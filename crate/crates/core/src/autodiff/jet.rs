use std::ops::{Add, Mul, Neg, Sub};

use super::Scalar;
use crate::error::{check_dim, Error, Result};

/// Largest number of spatial (or space-time) input coordinates a jet tracks.
pub const MAX_DIM: usize = 3;

/// Second-order jet of a function of the inputs `x ∈ R^dim`: the value, the
/// gradient and the diagonal of the Hessian.
///
/// The diagonal obeys an exact algebra under the ring operations and scalar
/// functions, so propagating jets through a network yields `∇ₓu` and `Δu`
/// alongside `u` (forward-over-forward mode, collapsed to the coordinates a
/// Laplacian needs). The component type `S` can itself be a dual number or a
/// tape variable, which makes the jet differentiable in the parameters.
#[derive(Debug, Clone, Copy)]
pub struct Jet<S> {
    pub dim: usize,
    pub v: S,
    pub g: [S; MAX_DIM],
    pub h: [S; MAX_DIM],
}

impl<S: Scalar> Jet<S> {
    /// Number of scalar components of a jet in `dim` inputs.
    pub const fn components(dim: usize) -> usize {
        1 + 2 * dim
    }

    pub fn constant(dim: usize, c: S) -> Self {
        Self { dim, v: c, g: [S::zero(); MAX_DIM], h: [S::zero(); MAX_DIM] }
    }

    /// Jets of the coordinate functions `x ↦ x_i`.
    pub fn inputs(x: &[f64]) -> Result<Vec<Self>> {
        if x.is_empty() || x.len() > MAX_DIM {
            return Err(Error::InvalidArgument(format!(
                "jets support 1..={MAX_DIM} inputs, got {}",
                x.len()
            )));
        }
        Ok((0..x.len())
            .map(|i| {
                let mut j = Self::constant(x.len(), S::cst(x[i]));
                j.g[i] = S::cst(1.0);
                j
            })
            .collect())
    }

    /// Sum of the Hessian diagonal over all coordinates.
    pub fn laplacian(&self) -> S {
        self.h[..self.dim].iter().fold(S::zero(), |a, &b| a + b)
    }

    /// Sum of the Hessian diagonal over the listed coordinates.
    pub fn laplacian_over(&self, coords: &[usize]) -> S {
        coords.iter().fold(S::zero(), |a, &i| a + self.h[i])
    }

    pub fn grad(&self) -> &[S] {
        &self.g[..self.dim]
    }

    /// Components in the canonical order `[v, g_0.., h_0..]`.
    pub fn to_components(&self, out: &mut Vec<S>) {
        out.push(self.v);
        out.extend_from_slice(&self.g[..self.dim]);
        out.extend_from_slice(&self.h[..self.dim]);
    }

    pub fn from_components(dim: usize, c: &[S]) -> Result<Self> {
        check_dim(Self::components(dim), c.len())?;
        let mut j = Self::constant(dim, c[0]);
        j.g[..dim].copy_from_slice(&c[1..=dim]);
        j.h[..dim].copy_from_slice(&c[dim + 1..]);
        Ok(j)
    }

    pub fn freeze(&self) -> Self {
        self.map(Scalar::freeze)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        let mut out = Self::constant(self.dim, f(self.v));
        for i in 0..self.dim {
            out.g[i] = f(self.g[i]);
            out.h[i] = f(self.h[i]);
        }
        out
    }

    pub fn value_f64(&self) -> Jet<f64> {
        let mut out = Jet::constant(self.dim, self.v.value());
        for i in 0..self.dim {
            out.g[i] = self.g[i].value();
            out.h[i] = self.h[i].value();
        }
        out
    }

    /// Composition with a scalar function given `φ(v)`, `φ'(v)`, `φ''(v)`.
    pub fn compose(&self, f0: S, f1: S, f2: S) -> Self {
        let mut out = Self::constant(self.dim, f0);
        for i in 0..self.dim {
            out.g[i] = f1 * self.g[i];
            out.h[i] = f1 * self.h[i] + f2 * self.g[i] * self.g[i];
        }
        out
    }

    pub fn tanh(&self) -> Self {
        let t = self.v.tanh();
        let d1 = S::cst(1.0) - t * t;
        let d2 = (t * d1).scale(-2.0);
        self.compose(t, d1, d2)
    }

    pub fn sin(&self) -> Self {
        let s = self.v.sin();
        self.compose(s, self.v.cos(), -s)
    }

    pub fn cos(&self) -> Self {
        let c = self.v.cos();
        self.compose(c, -self.v.sin(), -c)
    }

    pub fn exp(&self) -> Self {
        let e = self.v.exp();
        self.compose(e, e, e)
    }

    pub fn powi(&self, n: i32) -> Self {
        match n {
            0 => Self::constant(self.dim, S::cst(1.0)),
            1 => *self,
            _ => {
                let nf = f64::from(n);
                self.compose(
                    self.v.powi(n),
                    self.v.powi(n - 1).scale(nf),
                    self.v.powi(n - 2).scale(nf * (nf - 1.0)),
                )
            }
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| x.scale(c))
    }

    pub fn mul_scalar(&self, s: S) -> Self {
        self.map(|x| x * s)
    }

    pub fn add_scalar(&self, s: S) -> Self {
        Self { v: self.v + s, ..*self }
    }

    /// `Σ_j w_j · inputs_j + bias`, one fused dot product per component.
    pub fn affine(weights: &[S], inputs: &[Self], bias: S) -> Self {
        let dim = inputs.first().map_or(0, |j| j.dim);
        let mut buf: Vec<S> = Vec::with_capacity(inputs.len());
        let mut component = |sel: &dyn Fn(&Self) -> S| {
            buf.clear();
            buf.extend(inputs.iter().map(sel));
            S::dot(weights, &buf)
        };
        let v = component(&|j| j.v) + bias;
        let mut out = Self::constant(dim, v);
        for i in 0..dim {
            out.g[i] = component(&|j| j.g[i]);
            out.h[i] = component(&|j| j.h[i]);
        }
        out
    }
}

impl Jet<f64> {
    /// The same jet as constants of another scalar type.
    pub fn lift<S: Scalar>(&self) -> Jet<S> {
        let mut out = Jet::constant(self.dim, S::cst(self.v));
        for i in 0..self.dim {
            out.g[i] = S::cst(self.g[i]);
            out.h[i] = S::cst(self.h[i]);
        }
        out
    }
}

impl<S: Scalar> Add for Jet<S> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut out = Self::constant(self.dim, self.v + rhs.v);
        for i in 0..self.dim {
            out.g[i] = self.g[i] + rhs.g[i];
            out.h[i] = self.h[i] + rhs.h[i];
        }
        out
    }
}

impl<S: Scalar> Sub for Jet<S> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl<S: Scalar> Neg for Jet<S> {
    type Output = Self;
    fn neg(self) -> Self {
        self.map(|x| -x)
    }
}

impl<S: Scalar> Mul for Jet<S> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut out = Self::constant(self.dim, self.v * rhs.v);
        for i in 0..self.dim {
            out.g[i] = self.v * rhs.g[i] + rhs.v * self.g[i];
            out.h[i] = self.v * rhs.h[i]
                + rhs.v * self.h[i]
                + (self.g[i] * rhs.g[i]).scale(2.0);
        }
        out
    }
}

/// Value, spatial gradient and Laplacian of a scalar function of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputDerivatives {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub laplacian: f64,
}

/// Evaluate `f` on coordinate jets at `x` and read off `u`, `∇u`, `Δu`.
pub fn input_derivatives<F>(f: F, x: &[f64]) -> Result<InputDerivatives>
where
    F: FnOnce(&[Jet<f64>]) -> Result<Jet<f64>>,
{
    let jets = Jet::<f64>::inputs(x)?;
    let u = f(&jets)?;
    let out = InputDerivatives { value: u.v, gradient: u.grad().to_vec(), laplacian: u.laplacian() };
    let mut all = vec![out.value, out.laplacian];
    all.extend_from_slice(&out.gradient);
    crate::error::check_finite(&all, "input derivatives")?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn tanh_at_origin() {
        let d = input_derivatives(|x| Ok(x[0].tanh()), &[0.0]).unwrap();
        assert_eq!(d.value, 0.0);
        assert_eq!(d.gradient, vec![1.0]);
        assert_eq!(d.laplacian, 0.0);
    }

    #[test]
    fn affine_has_zero_laplacian() {
        let w = [0.5, -2.0];
        let d = input_derivatives(|x| Ok(Jet::affine(&w, x, 0.25)), &[1.0, 3.0]).unwrap();
        assert_eq!(d.value, 0.5 - 6.0 + 0.25);
        assert_eq!(d.gradient, w.to_vec());
        assert_eq!(d.laplacian, 0.0);
    }

    #[test]
    fn product_and_powers_match_hand_calculus() {
        // u = x² y³ + sin(x y) at (0.3, -0.7)
        let (x0, y0) = (0.3f64, -0.7f64);
        let d = input_derivatives(
            |x| Ok(x[0].powi(2) * x[1].powi(3) + (x[0] * x[1]).sin()),
            &[x0, y0],
        )
        .unwrap();
        let s = (x0 * y0).sin();
        let c = (x0 * y0).cos();
        let uxx = 2.0 * y0.powi(3) - y0 * y0 * s;
        let uyy = 6.0 * x0 * x0 * y0 - x0 * x0 * s;
        assert!(close(d.value, x0 * x0 * y0.powi(3) + s, 1e-15));
        assert!(close(d.gradient[0], 2.0 * x0 * y0.powi(3) + y0 * c, 1e-15));
        assert!(close(d.gradient[1], 3.0 * x0 * x0 * y0 * y0 + x0 * c, 1e-15));
        assert!(close(d.laplacian, uxx + uyy, 1e-14));
    }

    #[test]
    fn components_round_trip() {
        let j = Jet::<f64>::inputs(&[0.2, 0.9]).unwrap()[1].exp();
        let mut c = Vec::new();
        j.to_components(&mut c);
        assert_eq!(c.len(), Jet::<f64>::components(2));
        let back = Jet::from_components(2, &c).unwrap();
        assert_eq!(back.v, j.v);
        assert_eq!(back.h, j.h);
    }

    #[test]
    fn rejects_too_many_inputs() {
        assert!(Jet::<f64>::inputs(&[0.0; MAX_DIM + 1]).is_err());
    }
}
