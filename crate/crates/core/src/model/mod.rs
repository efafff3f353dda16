//! Feedforward networks with a flat parameter vector.
//!
//! Layer `ℓ` maps `x_{ℓ-1} ↦ σ(W_ℓ x_{ℓ-1} + b_ℓ)`; the last layer is affine.
//! Parameters are stored layer by layer, each layer as its row-major weight
//! matrix followed by its bias.

mod batch;

pub use batch::MlpBatch;

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Jet, Scalar};
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    /// Only first-order input derivatives exist, so PDE residuals reject it.
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => {
                if x.value() > 0.0 {
                    x
                } else {
                    S::zero()
                }
            }
        }
    }
}

/// Location of one layer inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub rows: usize,
    pub cols: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
}

/// Layer widths `n₀ = d, n₁, …, n_L, n_{L+1} = d′` and the hidden activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpTopology {
    widths: Vec<usize>,
    activation: Activation,
}

impl MlpTopology {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidTopology(format!(
                "need at least input and output widths, got {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidTopology(format!("zero width in {widths:?}")));
        }
        Ok(Self { widths, activation })
    }

    pub fn tanh(widths: &[usize]) -> Result<Self> {
        Self::new(widths.to_vec(), Activation::Tanh)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// `p = Σ_ℓ (n_ℓ n_{ℓ-1} + n_ℓ)`.
    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut offset = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let (cols, rows) = (w[0], w[1]);
                let weights = offset..offset + rows * cols;
                let bias = weights.end..weights.end + rows;
                offset = bias.end;
                LayerShape { rows, cols, weights, bias }
            })
            .collect()
    }
}

/// Flat parameter vector `θ ∈ R^p` tied to its topology.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    topology: MlpTopology,
    values: Vec<f64>,
}

impl ParamVector {
    /// Weights drawn from `N(0, 1/fan_in)`, biases zero; deterministic per seed.
    pub fn init(topology: &MlpTopology, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; topology.num_params()];
        for layer in topology.layers() {
            let scale = 1.0 / (layer.cols as f64).sqrt();
            for w in &mut values[layer.weights] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = scale * z;
            }
        }
        Self { topology: topology.clone(), values }
    }

    pub fn zeros(topology: &MlpTopology) -> Self {
        Self { topology: topology.clone(), values: vec![0.0; topology.num_params()] }
    }

    pub fn from_flat(topology: &MlpTopology, values: Vec<f64>) -> Result<Self> {
        check_dim(topology.num_params(), values.len())?;
        Ok(Self { topology: topology.clone(), values })
    }

    pub fn topology(&self) -> &MlpTopology {
        &self.topology
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Weight (row-major) and bias slices of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let shape = &self.topology.layers()[l];
        (&self.values[shape.weights.clone()], &self.values[shape.bias.clone()])
    }

    /// Stack several networks' parameters into one vector.
    pub fn concat(parts: &[ParamVector]) -> Vec<f64> {
        parts.iter().flat_map(|p| p.values.iter().copied()).collect()
    }

    /// Inverse of [`ParamVector::concat`].
    pub fn split(topologies: &[MlpTopology], flat: &[f64]) -> Result<Vec<ParamVector>> {
        let total: usize = topologies.iter().map(MlpTopology::num_params).sum();
        check_dim(total, flat.len())?;
        let mut offset = 0;
        topologies
            .iter()
            .map(|t| {
                let n = t.num_params();
                let part = Self::from_flat(t, flat[offset..offset + n].to_vec());
                offset += n;
                part
            })
            .collect()
    }
}

/// A parametric function `u_θ : R^d → R^{d′}` that can report second-order
/// input jets with any differentiable scalar type.
pub trait Model {
    fn num_params(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Output jets `[u_θ(x), ∇ₓu_θ(x), diag ∇ₓ²u_θ(x)]` per output.
    fn jets<S: Scalar>(&self, theta: &[S], x: &[f64]) -> Result<Vec<Jet<S>>>;

    /// Plain output values.
    fn values<S: Scalar>(&self, theta: &[S], x: &[f64]) -> Result<Vec<S>>;

    /// Batched layer-wise evaluation, when the model supports it.
    fn batch(&self, _theta: &[f64], _points: &[f64]) -> Option<Result<MlpBatch>> {
        None
    }
}

/// Multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    topology: MlpTopology,
}

impl Mlp {
    pub fn new(topology: MlpTopology) -> Self {
        Self { topology }
    }

    pub fn topology(&self) -> &MlpTopology {
        &self.topology
    }

    /// Network output at `x`.
    pub fn forward<S: Scalar>(&self, theta: &[S], x: &[S]) -> Result<Vec<S>> {
        check_dim(self.topology.num_params(), theta.len())?;
        check_dim(self.topology.input_dim(), x.len())?;
        let layers = self.topology.layers();
        let last = layers.len() - 1;
        let mut a = x.to_vec();
        for (l, shape) in layers.iter().enumerate() {
            let w = &theta[shape.weights.clone()];
            let b = &theta[shape.bias.clone()];
            a = (0..shape.rows)
                .map(|i| {
                    let z = S::dot(&w[i * shape.cols..(i + 1) * shape.cols], &a) + b[i];
                    if l == last {
                        z
                    } else {
                        self.topology.activation.apply(z)
                    }
                })
                .collect();
        }
        Ok(a)
    }

    /// `u(x)`, `∇ₓu(x)`, `Δu(x)` of output 0 for numeric parameters.
    pub fn input_derivatives(
        &self,
        theta: &[f64],
        x: &[f64],
    ) -> Result<crate::autodiff::InputDerivatives> {
        crate::autodiff::input_derivatives(
            |_| Ok(self.jets(theta, x)?.swap_remove(0)),
            x,
        )
    }
}

impl Model for Mlp {
    fn num_params(&self) -> usize {
        self.topology.num_params()
    }

    fn input_dim(&self) -> usize {
        self.topology.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.topology.output_dim()
    }

    fn jets<S: Scalar>(&self, theta: &[S], x: &[f64]) -> Result<Vec<Jet<S>>> {
        check_dim(self.topology.num_params(), theta.len())?;
        check_dim(self.topology.input_dim(), x.len())?;
        if self.topology.activation != Activation::Tanh {
            return Err(Error::UnsupportedActivation(self.topology.activation.name()));
        }
        let layers = self.topology.layers();
        let last = layers.len() - 1;
        let mut a: Vec<Jet<S>> = Jet::inputs(x)?;
        for (l, shape) in layers.iter().enumerate() {
            let w = &theta[shape.weights.clone()];
            let b = &theta[shape.bias.clone()];
            a = (0..shape.rows)
                .map(|i| {
                    let z = Jet::affine(&w[i * shape.cols..(i + 1) * shape.cols], &a, b[i]);
                    if l == last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
        }
        Ok(a)
    }

    fn values<S: Scalar>(&self, theta: &[S], x: &[f64]) -> Result<Vec<S>> {
        let xs: Vec<S> = x.iter().map(|&v| S::cst(v)).collect();
        self.forward(theta, &xs)
    }

    fn batch(&self, theta: &[f64], points: &[f64]) -> Option<Result<MlpBatch>> {
        (self.topology.activation == Activation::Tanh)
            .then(|| MlpBatch::new(&self.topology, theta, points))
    }
}

/// A basis function with its input jet.
pub type Feature = Box<dyn Fn(&[f64]) -> Jet<f64> + Send + Sync>;

/// `u_θ(x) = Σ_i θ_i φ_i(x)` for fixed feature functions given as jets.
pub struct LinearModel {
    input_dim: usize,
    features: Vec<Feature>,
}

impl std::fmt::Debug for LinearModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearModel")
            .field("input_dim", &self.input_dim)
            .field("features", &self.features.len())
            .finish()
    }
}

impl LinearModel {
    pub fn new(input_dim: usize, features: Vec<Feature>) -> Self {
        Self { input_dim, features }
    }
}

impl Model for LinearModel {
    fn num_params(&self) -> usize {
        self.features.len()
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn jets<S: Scalar>(&self, theta: &[S], x: &[f64]) -> Result<Vec<Jet<S>>> {
        check_dim(self.features.len(), theta.len())?;
        check_dim(self.input_dim, x.len())?;
        let feats: Vec<Jet<S>> = self
            .features
            .iter()
            .map(|f| f(x).lift())
            .collect();
        Ok(vec![Jet::affine(theta, &feats, S::zero())])
    }

    fn values<S: Scalar>(&self, theta: &[S], x: &[f64]) -> Result<Vec<S>> {
        Ok(self.jets(theta, x)?.into_iter().map(|j| j.v).collect())
    }
}
