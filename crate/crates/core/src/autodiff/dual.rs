use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Scalar;

/// First-order dual number `v + t·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual {
    pub v: f64,
    pub t: f64,
}

impl Dual {
    pub const fn new(v: f64, t: f64) -> Self {
        Self { v, t }
    }

    #[inline]
    fn chain(self, f: f64, df: f64) -> Self {
        Self::new(f, df * self.t)
    }
}

impl Add for Dual {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self::new(self.v + rhs.v, self.t + rhs.t)
    }
}

impl Sub for Dual {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.v - rhs.v, self.t - rhs.t)
    }
}

impl Mul for Dual {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Self::new(self.v * rhs.v, self.v * rhs.t + self.t * rhs.v)
    }
}

impl Div for Dual {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let q = self.v / rhs.v;
        Self::new(q, (self.t - q * rhs.t) / rhs.v)
    }
}

impl Neg for Dual {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.v, -self.t)
    }
}

impl Scalar for Dual {
    #[inline]
    fn cst(x: f64) -> Self {
        Self::new(x, 0.0)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.v
    }
    #[inline]
    fn tanh(self) -> Self {
        let th = self.v.tanh();
        self.chain(th, 1.0 - th * th)
    }
    #[inline]
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::cst(1.0);
        }
        self.chain(self.v.powi(n), f64::from(n) * self.v.powi(n - 1))
    }
    #[inline]
    fn freeze(self) -> Self {
        Self::new(self.v, 0.0)
    }
    #[inline]
    fn scale(self, c: f64) -> Self {
        Self::new(self.v * c, self.t * c)
    }
    #[inline]
    fn add_cst(self, c: f64) -> Self {
        Self::new(self.v + c, self.t)
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        let mut v = 0.0;
        let mut t = 0.0;
        for (x, y) in a.iter().zip(b) {
            v += x.v * y.v;
            t += x.v * y.t + x.t * y.v;
        }
        Self::new(v, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn product_rule(a in -3.0..3.0f64, da in -3.0..3.0f64, b in -3.0..3.0f64, db in -3.0..3.0f64) {
            let p = Dual::new(a, da) * Dual::new(b, db);
            prop_assert_eq!(p.v, a * b);
            prop_assert!((p.t - (a * db + b * da)).abs() <= 1e-15 * (1.0 + (a * db).abs() + (b * da).abs()));
        }

        #[test]
        fn constants_have_zero_tangent(c in -1e3..1e3f64) {
            prop_assert_eq!(Dual::cst(c).t, 0.0);
            prop_assert_eq!(Dual::new(c, 4.0).freeze().t, 0.0);
        }
    }

    #[test]
    fn quotient_and_powers() {
        let x = Dual::new(2.0, 1.0);
        let q = Dual::cst(1.0) / x;
        assert!((q.t + 0.25).abs() < 1e-16);
        let c = x.powi(3);
        assert_eq!(c.v, 8.0);
        assert_eq!(c.t, 12.0);
        assert_eq!(x.powi(0).t, 0.0);
    }
}
