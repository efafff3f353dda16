//! Matrix-free operators and a few dense vector kernels.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};

/// Largest dimension for which operations that need `p` matvecs or a dense
/// `p × p` matrix are allowed.
pub const DENSE_GUARD: usize = 2000;

/// A symmetric linear map accessed only through products `v ↦ Av`.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>>;

    /// `A·V` for a block of column vectors, in column order.
    fn apply_block(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), v.nrows())?;
        let mut out = DMatrix::zeros(v.nrows(), v.ncols());
        for (j, col) in v.column_iter().enumerate() {
            let y = self.apply(col.as_slice())?;
            out.column_mut(j).copy_from_slice(&y);
        }
        Ok(out)
    }

    /// Diagonal entries. The default spends one matvec per unit vector.
    fn diagonal(&self) -> Result<Vec<f64>> {
        let p = self.dim();
        guard(p)?;
        let mut e = vec![0.0; p];
        let mut diag = Vec::with_capacity(p);
        for i in 0..p {
            e[i] = 1.0;
            diag.push(self.apply(&e)?[i]);
            e[i] = 0.0;
        }
        Ok(diag)
    }

    /// Operator applications performed so far, for operators that count.
    fn matvecs(&self) -> usize {
        0
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        (**self).apply(v)
    }
    fn apply_block(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        (**self).apply_block(v)
    }
    fn diagonal(&self) -> Result<Vec<f64>> {
        (**self).diagonal()
    }
    fn matvecs(&self) -> usize {
        (**self).matvecs()
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        (**self).apply(v)
    }
    fn apply_block(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        (**self).apply_block(v)
    }
    fn diagonal(&self) -> Result<Vec<f64>> {
        (**self).diagonal()
    }
    fn matvecs(&self) -> usize {
        (**self).matvecs()
    }
}

pub(crate) fn guard(dim: usize) -> Result<()> {
    if dim > DENSE_GUARD {
        Err(Error::GuardExceeded { dim, limit: DENSE_GUARD })
    } else {
        Ok(())
    }
}

/// Thread-safe matvec counter.
#[derive(Debug, Default)]
pub struct MatvecCounter(AtomicUsize);

impl MatvecCounter {
    pub fn add(&self, n: usize) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> usize {
        self.0.load(Ordering::Relaxed)
    }
}

/// An explicit symmetric matrix behind the operator interface.
#[derive(Debug)]
pub struct DenseOperator {
    a: DMatrix<f64>,
    count: MatvecCounter,
}

impl DenseOperator {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        check_dim(a.nrows(), a.ncols())?;
        Ok(Self { a, count: MatvecCounter::default() })
    }

    /// `Q diag(eigs) Qᵀ` for a random orthogonal `Q` drawn from `seed`.
    pub fn with_spectrum(eigs: &[f64], seed: u64) -> Self {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let p = eigs.len();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(p, p, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        let q = g.qr().q();
        let a = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(eigs)) * q.transpose();
        let a = (&a + a.transpose()) * 0.5;
        Self { a, count: MatvecCounter::default() }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), v.len())?;
        self.count.add(1);
        let x = nalgebra::DVectorView::from_slice(v, v.len());
        Ok((&self.a * x).as_slice().to_vec())
    }

    fn apply_block(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), v.nrows())?;
        self.count.add(v.ncols());
        Ok(&self.a * v)
    }

    fn diagonal(&self) -> Result<Vec<f64>> {
        Ok(self.a.diagonal().as_slice().to_vec())
    }

    fn matvecs(&self) -> usize {
        self.count.get()
    }
}

/// `A + μI`.
#[derive(Debug)]
pub struct Shifted<O> {
    op: O,
    mu: f64,
}

impl<O: LinearOperator> Shifted<O> {
    pub fn new(op: O, mu: f64) -> Self {
        Self { op, mu }
    }

    pub fn inner(&self) -> &O {
        &self.op
    }

    pub fn shift(&self) -> f64 {
        self.mu
    }
}

impl<O: LinearOperator> LinearOperator for Shifted<O> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.op.apply(v)?;
        axpy(self.mu, v, &mut y);
        Ok(y)
    }

    fn diagonal(&self) -> Result<Vec<f64>> {
        Ok(self.op.diagonal()?.into_iter().map(|d| d + self.mu).collect())
    }

    fn matvecs(&self) -> usize {
        self.op.matvecs()
    }
}

/// Dense `p × p` matrix of an operator, one unit-vector matvec per column.
pub fn assemble_dense<O: LinearOperator + ?Sized>(op: &O) -> Result<DMatrix<f64>> {
    let p = op.dim();
    guard(p)?;
    op.apply_block(&DMatrix::identity(p, p))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y ← y + αx`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Spectral condition number of a symmetric positive definite matrix.
pub fn spd_condition_number(a: &DMatrix<f64>) -> f64 {
    let eigs = a.clone().symmetric_eigenvalues();
    let max = eigs.max();
    let min = eigs.min();
    max / min
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_operator_counts_and_applies() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let op = DenseOperator::new(a).unwrap();
        assert_eq!(op.apply(&[1.0, 0.0]).unwrap(), vec![2.0, 1.0]);
        let block = op.apply_block(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(block[(1, 1)], 3.0);
        assert_eq!(op.matvecs(), 3);
        assert_eq!(op.diagonal().unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn shifted_adds_identity() {
        let op = DenseOperator::new(DMatrix::identity(3, 3)).unwrap();
        let s = Shifted::new(&op, 0.5);
        assert_eq!(s.apply(&[1.0, 2.0, 3.0]).unwrap(), vec![1.5, 3.0, 4.5]);
        assert_eq!(assemble_dense(&s).unwrap(), DMatrix::identity(3, 3) * 1.5);
    }

    #[test]
    fn prescribed_spectrum_is_recovered() {
        let eigs = [4.0, 2.0, 1.0, 0.5];
        let op = DenseOperator::with_spectrum(&eigs, 3);
        let mut got: Vec<f64> = op.matrix().clone().symmetric_eigenvalues().iter().copied().collect();
        got.sort_by(|a, b| b.total_cmp(a));
        for (g, e) in got.iter().zip(eigs) {
            assert!((g - e).abs() < 1e-12);
        }
        assert!((spd_condition_number(op.matrix()) - 8.0).abs() < 1e-10);
    }

    #[test]
    fn guard_rejects_large_dimension() {
        assert!(matches!(guard(DENSE_GUARD + 1), Err(Error::GuardExceeded { .. })));
    }
}
