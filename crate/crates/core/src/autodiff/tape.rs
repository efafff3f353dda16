use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Scalar;

const CONST: u32 = u32::MAX;

#[derive(Default)]
struct Records {
    /// Node `i` owns edges `offsets[i]..offsets[i + 1]`.
    offsets: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
}

/// Reverse-mode tape: an append-only record of primitive operations and the
/// local partial derivative along every edge.
///
/// Only partials are stored; primal values live in the [`Var`] handles, so a
/// sweep never recomputes the forward pass. Nodes may have any number of
/// parents, which lets dot products enter as a single record.
pub struct Tape {
    records: RefCell<Records>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_capacity(0, 0)
    }

    pub fn with_capacity(nodes: usize, edges: usize) -> Self {
        let mut offsets = Vec::with_capacity(nodes + 1);
        offsets.push(0);
        Self {
            records: RefCell::new(Records {
                offsets,
                parents: Vec::with_capacity(edges),
                partials: Vec::with_capacity(edges),
            }),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.records.borrow().offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of recorded edges (local partials).
    pub fn edges(&self) -> usize {
        self.records.borrow().parents.len()
    }

    /// Forget every node. Requires that no [`Var`] handle is alive.
    pub fn clear(&mut self) {
        let r = self.records.get_mut();
        r.offsets.truncate(1);
        r.parents.clear();
        r.partials.clear();
    }

    /// A fresh independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(std::iter::empty());
        Var { tape: Some(self), idx, val: value }
    }

    fn push(&self, edges: impl IntoIterator<Item = (u32, f64)>) -> u32 {
        let mut r = self.records.borrow_mut();
        for (p, d) in edges {
            r.parents.push(p);
            r.partials.push(d);
        }
        let end = r.parents.len() as u32;
        r.offsets.push(end);
        (r.offsets.len() - 2) as u32
    }

    /// Pull back `Σ seed_k · d(out_k)` through the whole tape in a single
    /// reverse sweep and return the adjoint of every node.
    pub fn reverse<'t>(&'t self, seeds: impl IntoIterator<Item = (Var<'t>, f64)>) -> Vec<f64> {
        let r = self.records.borrow();
        let n = r.offsets.len() - 1;
        let mut adj = vec![0.0; n];
        for (v, s) in seeds {
            if v.idx != CONST {
                adj[v.idx as usize] += s;
            }
        }
        for i in (0..n).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let (lo, hi) = (r.offsets[i] as usize, r.offsets[i + 1] as usize);
            for e in lo..hi {
                adj[r.parents[e] as usize] += r.partials[e] * a;
            }
        }
        adj
    }
}

/// Handle to a value recorded on a [`Tape`]. Constants carry no tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.idx == CONST {
            write!(f, "Var(const {})", self.val)
        } else {
            write!(f, "Var(#{} = {})", self.idx, self.val)
        }
    }
}

impl<'t> Var<'t> {
    pub fn constant(val: f64) -> Self {
        Self { tape: None, idx: CONST, val }
    }

    pub fn is_constant(&self) -> bool {
        self.idx == CONST
    }

    /// Adjoint of this variable after [`Tape::reverse`]; zero for constants.
    pub fn adjoint(&self, adjoints: &[f64]) -> f64 {
        if self.idx == CONST {
            0.0
        } else {
            adjoints[self.idx as usize]
        }
    }

    #[inline]
    fn unary(self, val: f64, d: f64) -> Self {
        match self.tape {
            Some(t) if self.idx != CONST => Self { tape: Some(t), idx: t.push([(self.idx, d)]), val },
            _ => Self::constant(val),
        }
    }

    #[inline]
    fn binary(a: Self, b: Self, val: f64, da: f64, db: f64) -> Self {
        match (a.idx != CONST, b.idx != CONST) {
            (false, false) => Self::constant(val),
            (true, false) => a.unary(val, da),
            (false, true) => b.unary(val, db),
            (true, true) => {
                let t = a.tape.or(b.tape).expect("non-constant var without tape");
                Self { tape: Some(t), idx: t.push([(a.idx, da), (b.idx, db)]), val }
            }
        }
    }
}

impl Add for Var<'_> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let val = self.val + rhs.val;
        // Adding a constant does not change any partial: reuse the node.
        if rhs.idx == CONST {
            return Self { val, ..self };
        }
        if self.idx == CONST {
            return Self { val, ..rhs };
        }
        Self::binary(self, rhs, val, 1.0, 1.0)
    }
}

impl Sub for Var<'_> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let val = self.val - rhs.val;
        if rhs.idx == CONST {
            return Self { val, ..self };
        }
        Self::binary(self, rhs, val, 1.0, -1.0)
    }
}

impl Mul for Var<'_> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Self::binary(self, rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl Div for Var<'_> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let q = self.val / rhs.val;
        Self::binary(self, rhs, q, 1.0 / rhs.val, -q / rhs.val)
    }
}

impl Neg for Var<'_> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl Scalar for Var<'_> {
    #[inline]
    fn cst(x: f64) -> Self {
        Self::constant(x)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.val
    }
    fn tanh(self) -> Self {
        let th = self.val.tanh();
        self.unary(th, 1.0 - th * th)
    }
    fn sin(self) -> Self {
        self.unary(self.val.sin(), self.val.cos())
    }
    fn cos(self) -> Self {
        self.unary(self.val.cos(), -self.val.sin())
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::constant(1.0);
        }
        self.unary(self.val.powi(n), f64::from(n) * self.val.powi(n - 1))
    }
    #[inline]
    fn freeze(self) -> Self {
        Self::constant(self.val)
    }
    #[inline]
    fn scale(self, c: f64) -> Self {
        self.unary(self.val * c, c)
    }
    #[inline]
    fn add_cst(self, c: f64) -> Self {
        Self { val: self.val + c, ..self }
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        let mut val = 0.0;
        let mut tape = None;
        let mut edges: Vec<(u32, f64)> = Vec::with_capacity(2 * a.len());
        for (x, y) in a.iter().zip(b) {
            val += x.val * y.val;
            if x.idx != CONST {
                edges.push((x.idx, y.val));
                tape = tape.or(x.tape);
            }
            if y.idx != CONST {
                edges.push((y.idx, x.val));
                tape = tape.or(y.tape);
            }
        }
        match tape {
            None => Self::constant(val),
            Some(t) => Self { tape: Some(t), idx: t.push(edges), val },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_do_not_touch_the_tape() {
        let tape = Tape::new();
        let x = tape.var(1.5);
        let c = Var::constant(2.0);
        let y = (x + c) - c;
        assert_eq!(tape.len(), 1);
        assert_eq!(y.value(), 1.5);
        let z = c * c + c.tanh();
        assert!(z.is_constant());
        assert_eq!(tape.len(), 1);
    }

    #[test]
    fn single_sweep_gives_all_partials() {
        let tape = Tape::new();
        let x = tape.var(0.7);
        let y = tape.var(-1.3);
        // f = x·y + sin(x)/y
        let f = x * y + x.sin() / y;
        let adj = tape.reverse([(f, 1.0)]);
        let dx = -1.3 + 0.7f64.cos() / -1.3;
        let dy = 0.7 - 0.7f64.sin() / (1.3 * 1.3);
        assert!((x.adjoint(&adj) - dx).abs() < 1e-15);
        assert!((y.adjoint(&adj) - dy).abs() < 1e-15);
    }

    #[test]
    fn dot_is_one_node() {
        let tape = Tape::new();
        let a: Vec<Var> = (0..4).map(|i| tape.var(f64::from(i))).collect();
        let b: Vec<Var> = (0..4).map(|i| Var::constant(f64::from(i) + 1.0)).collect();
        let before = tape.len();
        let d = Var::dot(&a, &b);
        assert_eq!(tape.len(), before + 1);
        assert_eq!(d.value(), 0.0 + 2.0 + 6.0 + 12.0);
        let adj = tape.reverse([(d, 1.0)]);
        for (i, v) in a.iter().enumerate() {
            assert_eq!(v.adjoint(&adj), i as f64 + 1.0);
        }
    }

    #[test]
    fn replay_is_bit_exact() {
        let run = |tape: &Tape| {
            let x = tape.var(0.3);
            let y = (x * x).tanh() * x.exp() - x.powi(3);
            y.value()
        };
        let mut tape = Tape::new();
        let first = run(&tape);
        tape.clear();
        let second = run(&tape);
        assert_eq!(first.to_bits(), second.to_bits());
        assert_eq!(first.to_bits(), ((0.3f64 * 0.3).tanh() * 0.3f64.exp() - 0.3f64.powi(3)).to_bits());
    }
}
