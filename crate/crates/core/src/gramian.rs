//! The matrix-free Gramian `G(θ) = J_θF(θ)ᵀ diag(w_r φ(x_r)) J_θF(θ)`.
//!
//! `F` is the metric stack linearized at a frozen copy of `θ`, so `J_θF`
//! differentiates only the slot that carries `u_θ`. A product `Gv` is one
//! JVP followed by one VJP; `G` itself is never formed.

use nalgebra::DMatrix;

use crate::autodiff::{self, Jet, Var, VectorFn};
use crate::error::{check_dim, check_finite, Result};
use crate::linalg::{LinearOperator, MatvecCounter};
use crate::model::{MlpBatch, Model};
use crate::problems::{MetricStackFn, Pinn};

pub use crate::linalg::assemble_dense;

/// Metric rows over the output-jet components of a batch: the metric of a
/// point is linear in `u_θ`'s jet once the linearization point is frozen.
struct BatchedMetric {
    batch: MlpBatch,
    rows: Vec<Row>,
}

struct Row {
    point: usize,
    weight: f64,
    coef: Vec<f64>,
}

impl BatchedMetric {
    fn new<M: Model>(pinn: &Pinn<M>, batch: MlpBatch) -> Self {
        let dim = batch.dim();
        let problem = pinn.problem();
        let mut rows = Vec::new();
        let mut comps = Vec::new();
        for (b, p) in pinn.stack_points().enumerate() {
            comps.clear();
            batch.output_jets(b)[0].to_components(&mut comps);
            for k in 0..problem.metric_len(p.role) {
                let (_, coef) = autodiff::small_grad(&comps, |c: &[Var<'_>]| {
                    let u = Jet::from_components(dim, c).expect("component count");
                    let frozen = u.freeze();
                    let mut out = Vec::with_capacity(2);
                    problem.metric(p.role, p.x, &u, &frozen, &mut out);
                    out[k]
                });
                rows.push(Row { point: b, weight: p.weight, coef });
            }
        }
        Self { batch, rows }
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let jv = self.batch.jvp(v)?;
        let mut cot = vec![0.0; jv.len()];
        for row in &self.rows {
            let idx = |c: usize| self.batch.index(0, c, row.point);
            let m: f64 = row.coef.iter().enumerate().map(|(c, a)| a * jv[idx(c)]).sum();
            let s = row.weight * m;
            for (c, a) in row.coef.iter().enumerate() {
                cot[idx(c)] += s * a;
            }
        }
        self.batch.vjp(&cot)
    }
}

enum Route<F> {
    Stack(F),
    Batched(Box<BatchedMetric>),
}

/// `G(θ)` at a fixed `θ` behind the [`LinearOperator`] interface.
pub struct GramianOperator<F> {
    route: Route<F>,
    theta: Vec<f64>,
    weights: Vec<f64>,
    count: MatvecCounter,
}

impl<'a, M: Model> GramianOperator<MetricStackFn<'a, M>> {
    /// Gramian of a discretized problem, frozen at `theta`.
    pub fn new(pinn: &'a Pinn<M>, theta: &[f64]) -> Result<Self> {
        check_dim(pinn.num_params(), theta.len())?;
        let route = match pinn.batch(theta) {
            Some(batch) => Route::Batched(Box::new(BatchedMetric::new(pinn, batch?))),
            None => Route::Stack(MetricStackFn::frozen(pinn)),
        };
        Ok(Self { route, theta: theta.to_vec(), weights: pinn.metric_weights(), count: MatvecCounter::default() })
    }
}

impl<F: VectorFn> GramianOperator<F> {
    /// Gramian of an arbitrary stack `F` with diagonal `weights`.
    pub fn from_stack(stack: F, theta: &[f64], weights: Vec<f64>) -> Result<Self> {
        check_dim(stack.input_dim(), theta.len())?;
        check_dim(stack.output_dim(), weights.len())?;
        Ok(Self { route: Route::Stack(stack), theta: theta.to_vec(), weights, count: MatvecCounter::default() })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
}

impl<F: VectorFn> LinearOperator for GramianOperator<F> {
    fn dim(&self) -> usize {
        self.theta.len()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), v.len())?;
        self.count.add(1);
        let out = match &self.route {
            Route::Batched(b) => b.apply(v)?,
            Route::Stack(f) => {
                let mut jv = autodiff::jvp(f, &self.theta, v)?;
                for (x, w) in jv.iter_mut().zip(&self.weights) {
                    *x *= w;
                }
                autodiff::vjp(f, &self.theta, &jv)?
            }
        };
        check_finite(&out, "gramian matvec")?;
        Ok(out)
    }

    fn matvecs(&self) -> usize {
        self.count.get()
    }
}

/// `J_θF₁ᵀ diag(weights) J_θF₂ v` for two stacks sharing their quadrature.
pub fn matvec_two_factor<F1: VectorFn, F2: VectorFn>(
    f1: &F1,
    f2: &F2,
    theta: &[f64],
    weights: &[f64],
    v: &[f64],
) -> Result<Vec<f64>> {
    check_dim(f1.output_dim(), f2.output_dim())?;
    check_dim(f1.output_dim(), weights.len())?;
    let mut jv = autodiff::jvp(f2, theta, v)?;
    for (x, w) in jv.iter_mut().zip(weights) {
        *x *= w;
    }
    autodiff::vjp(f1, theta, &jv)
}

/// Dense `J_θF` by one JVP per parameter.
pub fn dense_jacobian<F: VectorFn>(f: &F, theta: &[f64]) -> Result<DMatrix<f64>> {
    let p = theta.len();
    crate::linalg::guard(p)?;
    let mut j = DMatrix::zeros(f.output_dim(), p);
    let mut e = vec![0.0; p];
    for i in 0..p {
        e[i] = 1.0;
        j.column_mut(i).copy_from_slice(&autodiff::jvp(f, theta, &e)?);
        e[i] = 0.0;
    }
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Scalar;
    use crate::linalg::DenseOperator;
    use crate::model::{LinearModel, Mlp, MlpTopology, ParamVector};
    use crate::problems::{Backend, PointSet, Problem, QuadratureSet, Role};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_pinn(features: Vec<(f64, f64)>) -> Pinn<LinearModel> {
        // u(x) = θ₁ x + θ₂ x² on three points
        let model = LinearModel::new(
            1,
            vec![
                Box::new(|x: &[f64]| Jet { dim: 1, v: x[0], g: [1.0, 0.0, 0.0], h: [0.0; 3] }),
                Box::new(|x: &[f64]| Jet { dim: 1, v: x[0] * x[0], g: [2.0 * x[0], 0.0, 0.0], h: [2.0, 0.0, 0.0] }),
            ],
        );
        let (pts, w): (Vec<f64>, Vec<f64>) = features.into_iter().unzip();
        let q = QuadratureSet::new(vec![PointSet::new(Role::Interior, 1, pts, w).unwrap()]).unwrap();
        Pinn::new(Problem::L2Fit1d, model, q).unwrap()
    }

    fn mlp_pinn(problem: Problem, hidden: &[usize], n: usize, seed: u64) -> (Pinn<Mlp>, Vec<f64>) {
        let mut widths = vec![problem.input_dim()];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let topology = MlpTopology::tanh(&widths).unwrap();
        let quad = QuadratureSet::sample(problem, n, n, seed).unwrap();
        let theta = ParamVector::init(&topology, seed).into_vec();
        (Pinn::new(problem, Mlp::new(topology), quad).unwrap(), theta)
    }

    fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn zero_vector_maps_to_zero() {
        let (p, theta) = mlp_pinn(Problem::Poisson2d, &[4], 5, 1);
        let g = GramianOperator::new(&p, &theta).unwrap();
        assert!(g.apply(&vec![0.0; theta.len()]).unwrap().iter().all(|&x| x == 0.0));
        assert_eq!(g.matvecs(), 1);
    }

    #[test]
    fn linear_model_gives_weighted_feature_gram() {
        let pts = vec![(0.2, 0.5), (0.5, 0.25), (0.9, 1.0)];
        let pinn = linear_pinn(pts.clone());
        let g = GramianOperator::new(&pinn, &[0.3, -0.7]).unwrap();
        let mut expected = DMatrix::zeros(2, 2);
        for (x, w) in pts {
            let phi = nalgebra::DVector::from_vec(vec![x, x * x]);
            expected += w * &phi * phi.transpose();
        }
        let a = assemble_dense(&g).unwrap();
        assert!(rel(&a, &expected) <= 1e-14);
        let v = [0.4, -1.1];
        let gv = g.apply(&v).unwrap();
        let ev = &expected * nalgebra::DVector::from_column_slice(&v);
        assert!((gv[0] - ev[0]).abs() + (gv[1] - ev[1]).abs() <= 1e-14 * ev.norm());
    }

    #[test]
    fn diagonal_metric_on_linear_model() {
        // Features supported on disjoint points give a diagonal Gramian.
        let model = LinearModel::new(
            1,
            vec![
                Box::new(|x: &[f64]| Jet::constant(1, if x[0] < 0.5 { x[0] } else { 0.0 })),
                Box::new(|x: &[f64]| Jet::constant(1, if x[0] >= 0.5 { 2.0 * x[0] } else { 0.0 })),
            ],
        );
        let q = QuadratureSet::new(vec![PointSet::new(Role::Interior, 1, vec![0.25, 0.75], vec![0.5, 0.5]).unwrap()])
            .unwrap();
        let pinn = Pinn::new(Problem::L2Fit1d, model, q).unwrap();
        let a = assemble_dense(&GramianOperator::new(&pinn, &[1.0, 1.0]).unwrap()).unwrap();
        assert!((a[(0, 0)] - 0.5 * 0.0625).abs() < 1e-15);
        assert!((a[(1, 1)] - 0.5 * 2.25).abs() < 1e-15);
        assert_eq!(a[(0, 1)], 0.0);
    }

    #[test]
    fn batched_and_engine_routes_agree() {
        for problem in Problem::SHIPPED {
            let (p, theta) = mlp_pinn(problem, &[5, 4], 6, 2);
            let engine = Pinn::new(problem, p.model().clone(), p.quadrature().clone())
                .unwrap()
                .with_backend(Backend::Engine);
            let a = assemble_dense(&GramianOperator::new(&p, &theta).unwrap()).unwrap();
            let b = assemble_dense(&GramianOperator::new(&engine, &theta).unwrap()).unwrap();
            assert!(rel(&a, &b) <= 1e-13, "{}: {}", problem.name(), rel(&a, &b));
        }
    }

    #[test]
    fn matches_finite_difference_gauss_newton() {
        for problem in Problem::SHIPPED {
            let (p, theta) = mlp_pinn(problem, &[6], 8, 3);
            assert!(theta.len() <= 100);
            let h = 1e-5;
            let n = theta.len();
            let frozen = theta.clone();
            let m = p.metric_len();
            let mut j = DMatrix::zeros(m, n);
            for i in 0..n {
                let (mut tp, mut tm) = (theta.clone(), theta.clone());
                tp[i] += h;
                tm[i] -= h;
                let fp = p.metric_stack(&tp, &frozen).unwrap();
                let fm = p.metric_stack(&tm, &frozen).unwrap();
                for r in 0..m {
                    j[(r, i)] = (fp[r] - fm[r]) / (2.0 * h);
                }
            }
            let w = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(p.metric_weights()));
            let oracle = j.transpose() * w * &j;
            let a = assemble_dense(&GramianOperator::new(&p, &theta).unwrap()).unwrap();
            assert!(rel(&a, &oracle) <= 1e-8, "{}: {}", problem.name(), rel(&a, &oracle));
        }
    }

    #[test]
    fn symmetric_and_positive_semidefinite() {
        let (p, theta) = mlp_pinn(Problem::NlPoisson2d, &[6, 6], 10, 4);
        let g = GramianOperator::new(&p, &theta).unwrap();
        let a = assemble_dense(&g).unwrap();
        assert!((&a - a.transpose()).norm() <= 1e-12 * a.norm());
        let eigs = a.symmetric_eigenvalues();
        assert!(eigs.min() >= -1e-12 * eigs.max());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = theta.len();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (gv, gw) = (g.apply(&v).unwrap(), g.apply(&w).unwrap());
        let lhs = crate::linalg::dot(&w, &gv);
        let rhs = crate::linalg::dot(&gw, &v);
        assert!((lhs - rhs).abs() <= 1e-12 * a.norm() * crate::linalg::norm(&v) * crate::linalg::norm(&w));
    }

    #[test]
    fn stop_gradient_is_necessary_for_nonlinear_metric() {
        let (p, theta) = mlp_pinn(Problem::NlPoisson2d, &[5], 8, 5);
        let theta: Vec<f64> = theta.iter().map(|t| 3.0 * t).collect();
        let p = Pinn::new(p.problem(), p.model().clone(), p.quadrature().clone()).unwrap().with_backend(Backend::Engine);
        let good = assemble_dense(&GramianOperator::new(&p, &theta).unwrap()).unwrap();
        let bad = GramianOperator::from_stack(MetricStackFn::unfrozen(&p), &theta, p.metric_weights()).unwrap();
        let bad = assemble_dense(&bad).unwrap();
        assert!((&good - &bad).norm() > 1e-3, "{}", (&good - &bad).norm());
    }

    #[test]
    fn gradient_lies_in_range_of_jacobian_transpose() {
        let (p, theta) = mlp_pinn(Problem::Poisson1d, &[4], 20, 6);
        let g = p.loss_and_grad(&theta).unwrap().1;
        let f = MetricStackFn::frozen(&p);
        let j = dense_jacobian(&f, &theta).unwrap();
        // least-squares fit g ≈ Jᵀc through the SVD of Jᵀ
        let jt = j.transpose();
        let svd = jt.clone().svd(true, true);
        let c = svd.solve(&nalgebra::DVector::from_vec(g.clone()), 1e-14).unwrap();
        let recon = &jt * c;
        let gv = nalgebra::DVector::from_vec(g);
        assert!((&recon - &gv).norm() <= 1e-8 * gv.norm());
    }

    struct Lin(DMatrix<f64>);
    impl VectorFn for Lin {
        fn input_dim(&self) -> usize {
            self.0.ncols()
        }
        fn output_dim(&self) -> usize {
            self.0.nrows()
        }
        fn eval<S: Scalar>(&self, t: &[S]) -> Result<Vec<S>> {
            Ok((0..self.0.nrows())
                .map(|r| {
                    let row: Vec<S> = (0..self.0.ncols()).map(|c| S::cst(self.0[(r, c)])).collect();
                    S::dot(&row, t)
                })
                .collect())
        }
    }

    #[test]
    fn two_factor_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (m, n) = (7, 4);
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
        let theta = vec![0.0; n];
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&w));
        let oracle = a.transpose() * &d * &b * nalgebra::DVector::from_column_slice(&v);
        let got = matvec_two_factor(&Lin(a.clone()), &Lin(b.clone()), &theta, &w, &v).unwrap();
        let err: f64 = got.iter().zip(oracle.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 1e-12 * oracle.norm());

        let same = matvec_two_factor(&Lin(b.clone()), &Lin(b.clone()), &theta, &w, &v).unwrap();
        let op = GramianOperator::from_stack(Lin(b.clone()), &theta, w.clone()).unwrap();
        let single = op.apply(&v).unwrap();
        for (x, y) in same.iter().zip(&single) {
            assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
        }
        let doubled = matvec_two_factor(&Lin(&b * 2.0), &Lin(b), &theta, &w, &v).unwrap();
        for (x, y) in doubled.iter().zip(&single) {
            assert!((x - 2.0 * y).abs() <= 1e-14 * y.abs().max(1.0));
        }
        assert!(matvec_two_factor(&Lin(DMatrix::zeros(3, n)), &Lin(a), &theta, &w, &v).is_err());
    }

    #[test]
    fn dense_operator_round_trip() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert_eq!(assemble_dense(&DenseOperator::new(a.clone()).unwrap()).unwrap(), a);
    }
}
