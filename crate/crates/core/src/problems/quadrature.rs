use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Problem, Role};
use crate::error::{Error, Result};

/// Points of one role with their quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub role: Role,
    pub dim: usize,
    /// Points stored back to back, `dim` coordinates each.
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl PointSet {
    pub fn new(role: Role, dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() != dim * weights.len() {
            return Err(Error::InvalidArgument(format!(
                "{} coordinates do not form {} points of dimension {dim}",
                points.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
            return Err(Error::InvalidArgument(format!("quadrature weight {w} is not positive")));
        }
        Ok(Self { role, dim, points, weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }
}

/// Fixed Monte Carlo quadrature: one [`PointSet`] per role of a problem.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSet {
    sets: Vec<PointSet>,
}

impl QuadratureSet {
    pub fn new(sets: Vec<PointSet>) -> Result<Self> {
        if let Some(w) = sets.windows(2).find(|w| w[0].dim != w[1].dim) {
            return Err(Error::DimensionMismatch { expected: w[0].dim, got: w[1].dim });
        }
        Ok(Self { sets })
    }

    /// Uniform i.i.d. points with weights `|set| / N`. Lateral-boundary and
    /// initial-time sets both receive `n_boundary` points. A 1D boundary
    /// alternates between its two endpoints instead of drawing them.
    pub fn sample(problem: Problem, n_interior: usize, n_boundary: usize, seed: u64) -> Result<Self> {
        if n_interior == 0 || n_boundary == 0 {
            return Err(Error::InvalidArgument("quadrature counts must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sets = problem
            .roles()
            .iter()
            .map(|&role| {
                let n = if role == Role::Interior { n_interior } else { n_boundary };
                sample_role(problem, role, n, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sets)
    }

    /// Interior points only, for error evaluation.
    pub fn sample_interior(problem: Problem, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("quadrature counts must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::new(vec![sample_role(problem, Role::Interior, n, &mut rng)?])
    }

    pub fn sets(&self) -> &[PointSet] {
        &self.sets
    }

    pub fn dim(&self) -> usize {
        self.sets.first().map_or(0, |s| s.dim)
    }

    /// Total number of points over all roles.
    pub fn len(&self) -> usize {
        self.sets.iter().map(PointSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn set(&self, role: Role) -> Option<&PointSet> {
        self.sets.iter().find(|s| s.role == role)
    }
}

fn sample_role(problem: Problem, role: Role, n: usize, rng: &mut ChaCha8Rng) -> Result<PointSet> {
    let dim = problem.input_dim();
    let mut points = Vec::with_capacity(n * dim);
    let mut u = [0.0; crate::autodiff::MAX_DIM + 1];
    for i in 0..n {
        if dim == 1 && role == Role::Boundary {
            points.push((i % 2) as f64);
            continue;
        }
        for slot in u.iter_mut().take(dim.max(2)) {
            *slot = rng.random::<f64>();
        }
        problem.place(role, &u, &mut points);
    }
    let w = problem.measure(role) / n as f64;
    PointSet::new(role, dim, points, vec![w; n])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_weights_on_unit_square() {
        let q = QuadratureSet::sample(Problem::Poisson2d, 4, 4, 0).unwrap();
        let interior = q.set(Role::Interior).unwrap();
        assert_eq!(interior.weights, vec![0.25; 4]);
        assert_eq!(q.set(Role::Boundary).unwrap().weights, vec![1.0; 4]);
    }

    #[test]
    fn one_dimensional_boundary_covers_both_endpoints() {
        let q = QuadratureSet::sample(Problem::Poisson1d, 5, 3, 0).unwrap();
        assert_eq!(q.set(Role::Boundary).unwrap().points, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn weights_sum_to_measure() {
        for p in Problem::SHIPPED {
            let q = QuadratureSet::sample(p, 37, 11, 5).unwrap();
            for s in q.sets() {
                let total: f64 = s.weights.iter().sum();
                assert!((total - p.measure(s.role)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = QuadratureSet::sample(Problem::Heat1p1d, 20, 10, 9).unwrap();
        let b = QuadratureSet::sample(Problem::Heat1p1d, 20, 10, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, QuadratureSet::sample(Problem::Heat1p1d, 20, 10, 10).unwrap());
    }

    #[test]
    fn points_lie_in_their_sets() {
        let q = QuadratureSet::sample(Problem::Poisson2d, 50, 200, 2).unwrap();
        for x in q.set(Role::Interior).unwrap().iter_points() {
            assert!(x.iter().all(|c| (0.0..1.0).contains(c)));
        }
        for x in q.set(Role::Boundary).unwrap().iter_points() {
            let on_edge = x.iter().any(|&c| c == 0.0 || c == 1.0);
            assert!(on_edge && x.iter().all(|c| (0.0..=1.0).contains(c)), "{x:?}");
        }
        let h = QuadratureSet::sample(Problem::Heat1p1d, 5, 30, 2).unwrap();
        assert!(h.set(Role::Initial).unwrap().iter_points().all(|x| x[0] == 0.0));
        assert!(h.set(Role::Boundary).unwrap().iter_points().all(|x| x[1] == 0.0 || x[1] == 1.0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(QuadratureSet::sample(Problem::Poisson1d, 0, 3, 0).is_err());
        assert!(PointSet::new(Role::Interior, 1, vec![0.5], vec![0.0]).is_err());
        assert!(PointSet::new(Role::Interior, 2, vec![0.5], vec![1.0]).is_err());
    }
}
