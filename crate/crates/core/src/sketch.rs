//! Randomized Nyström approximation, the Nyström preconditioner and pivoted
//! partial Cholesky factorizations.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, LinearOperator};

/// Fresh-seed retries after a failed Cholesky of the sketch core.
pub const CHOLESKY_RETRIES: usize = 3;

/// Low-rank eigendecomposition `Ĝ = U diag(λ̂) Uᵀ`.
#[derive(Debug, Clone)]
pub struct NystromFactor {
    u: DMatrix<f64>,
    lambda: Vec<f64>,
}

impl NystromFactor {
    /// Orthonormal `u` and nonnegative eigenvalues sorted descending.
    pub fn new(u: DMatrix<f64>, lambda: Vec<f64>) -> Result<Self> {
        check_dim(u.ncols(), lambda.len())?;
        if lambda.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::InvalidArgument("eigenvalue estimates must be nonnegative".into()));
        }
        if lambda.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument("eigenvalue estimates must be sorted descending".into()));
        }
        Ok(Self { u, lambda })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.lambda
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    /// `λ̂₁`, or zero for an empty factor.
    pub fn largest(&self) -> f64 {
        self.lambda.first().copied().unwrap_or(0.0)
    }

    /// `λ̂_ℓ`, or zero for an empty factor.
    pub fn smallest(&self) -> f64 {
        self.lambda.last().copied().unwrap_or(0.0)
    }

    /// Dense `U diag(λ̂) Uᵀ`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let scaled = &self.u * DMatrix::from_diagonal(&DVector::from_column_slice(&self.lambda));
        scaled * self.u.transpose()
    }
}

/// Rank-`ell` randomized Nyström approximation with a Gaussian test matrix,
/// retrying with fresh seeds when the shifted core is not numerically
/// positive definite.
pub fn nystrom_approximate<O: LinearOperator + ?Sized>(op: &O, ell: usize, seed: u64) -> Result<NystromFactor> {
    let p = op.dim();
    if ell == 0 || ell > p {
        return Err(Error::InvalidArgument(format!("sketch rank {ell} outside 1..={p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..=CHOLESKY_RETRIES {
        if let Some(factor) = nystrom_attempt(op, ell, &mut rng)? {
            return Ok(factor);
        }
    }
    Err(Error::NystromCholesky { attempts: CHOLESKY_RETRIES + 1 })
}

fn nystrom_attempt<O: LinearOperator + ?Sized>(op: &O, ell: usize, rng: &mut ChaCha8Rng) -> Result<Option<NystromFactor>> {
    let p = op.dim();
    let omega = DMatrix::from_fn(p, ell, |_, _| -> f64 { StandardNormal.sample(rng) });
    let omega = omega.qr().q();
    let y = op.apply_block(&omega)?;
    let nu = f64::EPSILON * y.norm();
    if nu == 0.0 {
        // GΩ = 0: the sketch sees a zero operator on its range.
        return Ok(Some(NystromFactor { u: omega, lambda: vec![0.0; ell] }));
    }
    let y_nu = &y + &omega * nu;
    let core = omega.transpose() * &y_nu;
    let core = (&core + core.transpose()) * 0.5;
    let Some(chol) = core.cholesky() else {
        return Ok(None);
    };
    // B = Y_ν C⁻¹ with ΩᵀY_ν = CᵀC and C = Lᵀ, so Bᵀ = L⁻¹ Y_νᵀ.
    let l = chol.l();
    let Some(bt) = l.solve_lower_triangular(&y_nu.transpose()) else {
        return Ok(None);
    };
    let svd = bt.transpose().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut basis = DMatrix::zeros(p, order.len());
    let mut lambda = Vec::with_capacity(order.len());
    for (j, &i) in order.iter().enumerate() {
        basis.set_column(j, &u.column(i));
        let s = svd.singular_values[i];
        lambda.push((s * s - nu).max(0.0));
    }
    Ok(Some(NystromFactor { u: basis, lambda }))
}

/// `P⁻¹ = (λ̂_ℓ+μ) U (Λ̂+μI)⁻¹ Uᵀ + (I − UUᵀ)`.
#[derive(Debug, Clone)]
pub struct PreconditionerHandle {
    factor: NystromFactor,
    mu: f64,
    /// `(λ̂_ℓ+μ)/(λ̂_i+μ)` per retained direction.
    scale: Vec<f64>,
}

impl PreconditionerHandle {
    pub fn new(factor: NystromFactor, mu: f64) -> Result<Self> {
        if mu < 0.0 || !mu.is_finite() {
            return Err(Error::InvalidArgument(format!("damping must be finite and nonnegative, got {mu}")));
        }
        let top = factor.smallest() + mu;
        if factor.rank() > 0 && top <= 0.0 {
            return Err(Error::SingularPreconditioner);
        }
        let scale = factor.lambda.iter().map(|l| top / (l + mu)).collect();
        Ok(Self { factor, mu, scale })
    }

    pub fn factor(&self) -> &NystromFactor {
        &self.factor
    }

    pub fn damping(&self) -> f64 {
        self.mu
    }

    /// `P⁻¹v` in `O(pℓ)` flops.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.apply_scaled(v, |s| s)
    }

    /// `P^{-1/2}v`, used to form the symmetrically preconditioned operator.
    pub fn apply_inverse_sqrt(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.apply_scaled(v, f64::sqrt)
    }

    fn apply_scaled(&self, v: &[f64], f: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
        check_dim(self.factor.dim(), v.len())?;
        let u = &self.factor.u;
        let x = DVector::from_column_slice(v);
        let mut c = u.tr_mul(&x);
        let mut out = x;
        // v − UUᵀv + U diag(f(s)) Uᵀv = v + U (f(s) − 1) Uᵀv
        for (ci, s) in c.iter_mut().zip(&self.scale) {
            *ci *= f(*s) - 1.0;
        }
        out.gemv(1.0, u, &c, 1.0);
        Ok(out.as_slice().to_vec())
    }
}

/// `d_eff(μ) = Σ λ_i / (λ_i + μ)`.
pub fn effective_dimension(eigs: &[f64], mu: f64) -> f64 {
    eigs.iter().map(|&l| l / (l + mu)).sum()
}

/// Sketch size `2⌈1.5·d_eff⌉ + 1`.
pub fn sketch_size(d_eff: f64) -> usize {
    2 * (1.5 * d_eff).ceil() as usize + 1
}

/// How the next pivot of a partial Cholesky factorization is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PivotStrategy {
    /// Largest residual diagonal entry.
    Greedy,
    /// Uniformly among indices with positive residual diagonal.
    Uniform,
    /// Sampled with probability proportional to the residual diagonal.
    RandomlyPivoted,
}

impl PivotStrategy {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "greedy" => Ok(Self::Greedy),
            "uniform" => Ok(Self::Uniform),
            "rp" => Ok(Self::RandomlyPivoted),
            other => Err(Error::InvalidArgument(format!("unknown pivot strategy '{other}'"))),
        }
    }
}

/// `G ≈ FFᵀ` from a partial Cholesky factorization on the pivots `S`.
#[derive(Debug, Clone)]
pub struct PartialCholesky {
    pub factor: DMatrix<f64>,
    pub pivots: Vec<usize>,
}

impl PartialCholesky {
    /// Eigendecomposition of `FFᵀ` in Nyström form.
    pub fn to_nystrom(&self) -> NystromFactor {
        let p = self.factor.nrows();
        if self.factor.ncols() == 0 {
            return NystromFactor { u: DMatrix::zeros(p, 0), lambda: Vec::new() };
        }
        let svd = self.factor.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let mut basis = DMatrix::zeros(p, order.len());
        let mut lambda = Vec::with_capacity(order.len());
        for (j, &i) in order.iter().enumerate() {
            basis.set_column(j, &u.column(i));
            lambda.push(svd.singular_values[i].powi(2));
        }
        NystromFactor { u: basis, lambda }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }
}

/// Rank-`ell` pivoted partial Cholesky. Stops early once the residual
/// diagonal vanishes, so the factor may have fewer than `ell` columns.
pub fn pivoted_cholesky<O: LinearOperator + ?Sized>(
    op: &O,
    ell: usize,
    strategy: PivotStrategy,
    seed: u64,
) -> Result<PartialCholesky> {
    let p = op.dim();
    linalg::guard(p)?;
    let ell = ell.min(p);
    let mut diag = op.diagonal()?;
    let scale = diag.iter().copied().fold(0.0, f64::max);
    let negative = -1e-8 * scale;
    let vanish = 1e-13 * scale;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = DMatrix::<f64>::zeros(p, ell);
    let mut pivots = Vec::with_capacity(ell);
    let mut e = vec![0.0; p];
    for step in 0..ell {
        let Some(s) = choose_pivot(&diag, &pivots, strategy, vanish, &mut rng) else {
            break;
        };
        e[s] = 1.0;
        let col = op.apply(&e)?;
        e[s] = 0.0;
        let mut g = DVector::from_vec(col);
        if step > 0 {
            let prev = f.columns(0, step);
            let row = prev.row(s).transpose();
            g.gemv(-1.0, &prev, &row, 1.0);
        }
        let pivot = g[s];
        if pivot <= vanish {
            break;
        }
        g /= pivot.sqrt();
        f.set_column(step, &g);
        pivots.push(s);
        for (d, gi) in diag.iter_mut().zip(g.iter()) {
            *d -= gi * gi;
        }
        diag[s] = 0.0;
        if let Some((i, &value)) = diag.iter().enumerate().find(|(_, &d)| d < negative) {
            return Err(Error::NegativeResidualDiagonal { step: i.min(step), value });
        }
        for d in diag.iter_mut() {
            *d = d.max(0.0);
        }
    }
    let k = pivots.len();
    Ok(PartialCholesky { factor: f.columns(0, k).into_owned(), pivots })
}

fn choose_pivot(
    diag: &[f64],
    taken: &[usize],
    strategy: PivotStrategy,
    vanish: f64,
    rng: &mut ChaCha8Rng,
) -> Option<usize> {
    let open = |i: &usize| !taken.contains(i) && diag[*i] > vanish;
    let candidates: Vec<usize> = (0..diag.len()).filter(open).collect();
    if candidates.is_empty() {
        return None;
    }
    match strategy {
        PivotStrategy::Greedy => candidates.into_iter().max_by(|&a, &b| diag[a].total_cmp(&diag[b]).then(b.cmp(&a))),
        PivotStrategy::Uniform => Some(candidates[rng.random_range(0..candidates.len())]),
        PivotStrategy::RandomlyPivoted => {
            let total: f64 = candidates.iter().map(|&i| diag[i]).sum();
            let mut target = rng.random::<f64>() * total;
            for &i in &candidates {
                target -= diag[i];
                if target < 0.0 {
                    return Some(i);
                }
            }
            candidates.last().copied()
        }
    }
}
