//! Layer-wise forward and reverse differentiation of a tanh MLP over a batch
//! of points.
//!
//! Each hidden layer keeps the pre-activation jets `Z`, the activations `A`
//! and `tanh` of the pre-activation values: that is the tape. Jets of all
//! points are laid out as an `n × (C·B)` column-major matrix (`C = 1 + 2d`
//! components, `B` points) whose column `c·B + b` holds component `c` of
//! point `b`. Every parameter product is then a single GEMM.

use crate::autodiff::Jet;
use crate::error::{check_dim, Error, Result};

use super::{Activation, LayerShape, MlpTopology};

struct Hidden {
    z: Vec<f64>,
    t: Vec<f64>,
    a: Vec<f64>,
}

/// Forward evaluation of output jets at a fixed batch of points, recorded so
/// that parameter-space JVPs and VJPs can be replayed without re-running it.
pub struct MlpBatch {
    layers: Vec<LayerShape>,
    theta: Vec<f64>,
    dim: usize,
    npts: usize,
    input: Vec<f64>,
    hidden: Vec<Hidden>,
    out: Vec<f64>,
}

impl std::fmt::Debug for MlpBatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MlpBatch")
            .field("dim", &self.dim)
            .field("npts", &self.npts)
            .field("layers", &self.layers.len())
            .finish()
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

impl MlpBatch {
    /// `points` holds `B` points of dimension `d` back to back.
    pub fn new(topology: &MlpTopology, theta: &[f64], points: &[f64]) -> Result<Self> {
        check_dim(topology.num_params(), theta.len())?;
        if topology.activation() != Activation::Tanh {
            return Err(Error::UnsupportedActivation(topology.activation().name()));
        }
        let dim = topology.input_dim();
        if dim > crate::autodiff::MAX_DIM {
            return Err(Error::InvalidArgument(format!("input dimension {dim} too large for jets")));
        }
        if !points.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: points.len() % dim });
        }
        let npts = points.len() / dim;
        let ncomp = 1 + 2 * dim;
        let cols = ncomp * npts;

        let mut input = vec![0.0; dim * cols];
        for b in 0..npts {
            for i in 0..dim {
                input[b * dim + i] = points[b * dim + i];
                input[((1 + i) * npts + b) * dim + i] = 1.0;
            }
        }

        let mut batch = Self {
            layers: topology.layers(),
            theta: theta.to_vec(),
            dim,
            npts,
            input,
            hidden: Vec::new(),
            out: Vec::new(),
        };
        batch.forward();
        Ok(batch)
    }

    fn forward(&mut self) {
        let (npts, dim) = (self.npts, self.dim);
        let cols = (1 + 2 * dim) * npts;
        let last = self.layers.len() - 1;
        let mut hidden = Vec::with_capacity(last);
        for l in 0..=last {
            let shape = &self.layers[l];
            let prev: &[f64] = if l == 0 { &self.input } else { &hidden.last().map(|h: &Hidden| &h.a).unwrap()[..] };
            let mut z = vec![0.0; shape.rows * cols];
            self.affine(shape, prev, &mut z);
            if l == last {
                self.out = z;
                break;
            }
            let n = shape.rows;
            let blk = n * npts;
            let t: Vec<f64> = z[..blk].iter().map(|v| v.tanh()).collect();
            let mut a = vec![0.0; z.len()];
            for e in 0..blk {
                let s1 = 1.0 - t[e] * t[e];
                let s2 = -2.0 * t[e] * s1;
                a[e] = t[e];
                for i in 0..dim {
                    let (g, h) = ((1 + i) * blk + e, (1 + dim + i) * blk + e);
                    a[g] = s1 * z[g];
                    a[h] = s1 * z[h] + s2 * z[g] * z[g];
                }
            }
            hidden.push(Hidden { z, t, a });
        }
        self.hidden = hidden;
    }

    /// `out = W·prev + b` on the value block.
    fn affine(&self, shape: &LayerShape, prev: &[f64], out: &mut [f64]) {
        let cols = (1 + 2 * self.dim) * self.npts;
        let w = &self.theta[shape.weights.clone()];
        gemm(shape.rows, shape.cols, cols, 1.0, w, (shape.cols, 1), prev, (1, shape.cols), 0.0, out, (1, shape.rows));
        let bias = &self.theta[shape.bias.clone()];
        for b in 0..self.npts {
            for (o, bi) in out[b * shape.rows..(b + 1) * shape.rows].iter_mut().zip(bias) {
                *o += bi;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn npts(&self) -> usize {
        self.npts
    }

    pub fn components(&self) -> usize {
        1 + 2 * self.dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |s| s.rows)
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    /// Position of component `c` of output `o` at point `b` in output-sized buffers.
    #[inline]
    pub fn index(&self, o: usize, c: usize, b: usize) -> usize {
        (c * self.npts + b) * self.output_dim() + o
    }

    /// Output jets at every point, in the layout described by [`MlpBatch::index`].
    pub fn outputs(&self) -> &[f64] {
        &self.out
    }

    pub fn output_jets(&self, b: usize) -> Vec<Jet<f64>> {
        let c = self.components();
        (0..self.output_dim())
            .map(|o| {
                let comps: Vec<f64> = (0..c).map(|k| self.out[self.index(o, k, b)]).collect();
                Jet::from_components(self.dim, &comps).expect("component count")
            })
            .collect()
    }

    /// Tangent of all output jets along the parameter direction `dtheta`.
    pub fn jvp(&self, dtheta: &[f64]) -> Result<Vec<f64>> {
        self.jvp_block(dtheta, 1)
    }

    /// Pull back a cotangent on all output jets to parameter space.
    pub fn vjp(&self, out_bar: &[f64]) -> Result<Vec<f64>> {
        self.vjp_block(out_bar, 1)
    }

    /// Position of component `c` of output `o` at point `b` for tangent `t`
    /// of a block of `k` tangents.
    #[inline]
    pub fn block_index(&self, o: usize, t: usize, k: usize, c: usize, b: usize) -> usize {
        let n = self.output_dim();
        o + n * t + n * k * (c * self.npts + b)
    }

    /// Tangents along the `k` directions stored column-major in `dtheta`
    /// (`p × k`), laid out as in [`MlpBatch::block_index`].
    ///
    /// Within a block the jets of layer width `n` form an `n × (k·C·B)` matrix
    /// and, read the other way, an `(n·k) × (C·B)` matrix, so each layer costs
    /// two GEMMs regardless of `k`.
    pub fn jvp_block(&self, dtheta: &[f64], k: usize) -> Result<Vec<f64>> {
        let p = self.theta.len();
        check_dim(p * k, dtheta.len())?;
        let (npts, dim) = (self.npts, self.dim);
        let cols = (1 + 2 * dim) * npts;
        let last = self.layers.len() - 1;
        let mut dprev: Option<Vec<f64>> = None;
        for l in 0..=last {
            let shape = &self.layers[l];
            let (n, m) = (shape.rows, shape.cols);
            let nk = n * k;
            let prev: &[f64] = if l == 0 { &self.input } else { &self.hidden[l - 1].a };
            let mut dw = vec![0.0; nk * m];
            for t in 0..k {
                let src = &dtheta[p * t + shape.weights.start..p * t + shape.weights.end];
                for i in 0..n {
                    for q in 0..m {
                        dw[i + n * t + nk * q] = src[i * m + q];
                    }
                }
            }
            let mut dz = vec![0.0; nk * cols];
            gemm(nk, m, cols, 1.0, &dw, (1, nk), prev, (1, m), 0.0, &mut dz, (1, nk));
            if let Some(da) = &dprev {
                let w = &self.theta[shape.weights.clone()];
                gemm(n, m, k * cols, 1.0, w, (m, 1), da, (1, m), 1.0, &mut dz, (1, n));
            }
            for t in 0..k {
                let db = &dtheta[p * t + shape.bias.start..p * t + shape.bias.end];
                for b in 0..npts {
                    let off = n * t + nk * b;
                    for (o, bi) in dz[off..off + n].iter_mut().zip(db) {
                        *o += bi;
                    }
                }
            }
            if l == last {
                crate::error::check_finite(&dz, "output jet tangent")?;
                return Ok(dz);
            }
            let h = &self.hidden[l];
            let mut da = vec![0.0; dz.len()];
            for b in 0..npts {
                for i in 0..n {
                    let e = i + n * b;
                    let tv = h.t[e];
                    let s1 = 1.0 - tv * tv;
                    let s2 = -2.0 * tv * s1;
                    let s3 = -2.0 * s1 * (1.0 - 3.0 * tv * tv);
                    for t in 0..k {
                        let x = i + n * t + nk * b;
                        let dzv = dz[x];
                        da[x] = s1 * dzv;
                        for d in 0..dim {
                            let (cg, ch) = ((1 + d) * npts, (1 + dim + d) * npts);
                            let (zg, zh) = (h.z[e + n * cg], h.z[e + n * ch]);
                            let (g, hh) = (x + nk * cg, x + nk * ch);
                            let (dzg, dzh) = (dz[g], dz[hh]);
                            da[g] = s2 * dzv * zg + s1 * dzg;
                            da[hh] = s2 * dzv * zh + s1 * dzh + s3 * dzv * zg * zg + 2.0 * s2 * zg * dzg;
                        }
                    }
                }
            }
            dprev = Some(da);
        }
        unreachable!("loop returns at the output layer")
    }

    /// Pulls back `k` cotangents laid out as in [`MlpBatch::block_index`];
    /// returns the `p × k` column-major block of parameter cotangents.
    pub fn vjp_block(&self, out_bar: &[f64], k: usize) -> Result<Vec<f64>> {
        check_dim(self.out.len() * k, out_bar.len())?;
        let p = self.theta.len();
        let (npts, dim) = (self.npts, self.dim);
        let cols = (1 + 2 * dim) * npts;
        let mut grad = vec![0.0; p * k];
        let mut zbar = out_bar.to_vec();
        for l in (0..self.layers.len()).rev() {
            let shape = &self.layers[l];
            let (n, m) = (shape.rows, shape.cols);
            let nk = n * k;
            let prev: &[f64] = if l == 0 { &self.input } else { &self.hidden[l - 1].a };
            // Stacked W̄ = Z̄ · prevᵀ, b̄ = sum over value columns of Z̄.
            let mut wbar = vec![0.0; nk * m];
            gemm(nk, cols, m, 1.0, &zbar, (1, nk), prev, (m, 1), 0.0, &mut wbar, (1, nk));
            for t in 0..k {
                let dst = &mut grad[p * t + shape.weights.start..p * t + shape.weights.end];
                for i in 0..n {
                    for q in 0..m {
                        dst[i * m + q] = wbar[i + n * t + nk * q];
                    }
                }
                let gb = &mut grad[p * t + shape.bias.start..p * t + shape.bias.end];
                for b in 0..npts {
                    let off = n * t + nk * b;
                    for (g, z) in gb.iter_mut().zip(&zbar[off..off + n]) {
                        *g += z;
                    }
                }
            }
            if l == 0 {
                break;
            }
            // Ā = Wᵀ Z̄, then through the previous activation.
            let w = &self.theta[shape.weights.clone()];
            let mk = m * k;
            let mut abar = vec![0.0; mk * cols];
            gemm(m, n, k * cols, 1.0, w, (1, m), &zbar, (1, n), 0.0, &mut abar, (1, m));
            let h = &self.hidden[l - 1];
            let mut zb = vec![0.0; abar.len()];
            for b in 0..npts {
                for i in 0..m {
                    let e = i + m * b;
                    let tv = h.t[e];
                    let s1 = 1.0 - tv * tv;
                    let s2 = -2.0 * tv * s1;
                    let s3 = -2.0 * s1 * (1.0 - 3.0 * tv * tv);
                    for t in 0..k {
                        let x = i + m * t + mk * b;
                        let mut zv = s1 * abar[x];
                        for d in 0..dim {
                            let (cg, ch) = ((1 + d) * npts, (1 + dim + d) * npts);
                            let (zg, zh) = (h.z[e + m * cg], h.z[e + m * ch]);
                            let (g, hh) = (x + mk * cg, x + mk * ch);
                            let (ag, ah) = (abar[g], abar[hh]);
                            zv += s2 * zg * ag + (s2 * zh + s3 * zg * zg) * ah;
                            zb[g] = s1 * ag + 2.0 * s2 * zg * ah;
                            zb[hh] = s1 * ah;
                        }
                        zb[x] = zv;
                    }
                }
            }
            zbar = zb;
        }
        crate::error::check_finite(&grad, "parameter cotangent")?;
        Ok(grad)
    }
}
