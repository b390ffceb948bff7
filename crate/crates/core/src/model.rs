//! The embedding unmasking network.
//!
//! Four fully connected `d → d` layers. Layers 1–3 are followed by batch
//! normalization and LeakyReLU, layer 4 by batch normalization only.
//! Forward and backward passes are written out by hand in `f64`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::CounterRng;
use crate::vector::normalize_rows;

pub const NUM_LAYERS: usize = 4;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_BN_EPSILON: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.9;

/// RNG stream used for weight initialization.
pub const INIT_STREAM: u64 = 0x1417;

/// One FC + BN block. `weight` is row-major with one row per output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl Layer {
    fn identity_bn(dim: usize, weight: Vec<f64>) -> Self {
        Self {
            weight,
            bias: vec![0.0; dim],
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EumParams {
    pub dim: usize,
    pub leaky_slope: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    pub layers: [Layer; NUM_LAYERS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache {
    /// FC output before batch normalization.
    pub pre_bn: Matrix,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    /// `(pre_bn − mean) / sqrt(var + ε)`.
    pub normalized: Matrix,
    /// Block output (after LeakyReLU for layers 1–3).
    pub output: Matrix,
}

/// Everything the backward pass needs from one `forward_train` call.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub input: Matrix,
    pub layers: Vec<LayerCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: [LayerGrads; NUM_LAYERS],
    /// Gradient with respect to the network input, for diagnostics.
    pub input: Matrix,
}

impl ParamGrads {
    /// Trainable gradient arrays in the same order as [`EumParams::trainable`].
    pub fn arrays(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| {
            [l.weight.as_slice(), l.bias.as_slice(), l.gamma.as_slice(), l.beta.as_slice()]
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.arrays().flatten().fold(0.0, |m, g| m.max(g.abs()))
    }
}

#[inline]
fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// `out[n][j] = Σ_k w[j][k] · x[n][k] + b[j]`
fn linear(x: &Matrix, weight: &[f64], bias: &[f64]) -> Matrix {
    let d = bias.len();
    let mut out = Matrix::zeros(x.rows(), d);
    for n in 0..x.rows() {
        let xr = x.row(n);
        let or = out.row_mut(n);
        for (j, o) in or.iter_mut().enumerate() {
            let wr = &weight[j * d..(j + 1) * d];
            *o = bias[j] + wr.iter().zip(xr).map(|(w, v)| w * v).sum::<f64>();
        }
    }
    out
}

impl EumParams {
    /// Weights are zero-mean Gaussian with standard deviation
    /// `sqrt(2 / (d · (1 + slope²)))`; BN starts as the identity.
    pub fn init(dim: usize, seed: u64, leaky_slope: f64, bn_epsilon: f64, bn_momentum: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension(dim));
        }
        if !(leaky_slope.is_finite() && bn_epsilon > 0.0 && (0.0..1.0).contains(&bn_momentum)) {
            return Err(Error::InvalidConfig("leaky_slope, bn_epsilon or bn_momentum out of range".into()));
        }
        let mut rng = CounterRng::new(seed, INIT_STREAM);
        let std = libm::sqrt(2.0 / (dim as f64 * (1.0 + leaky_slope * leaky_slope)));
        let layers = core::array::from_fn(|_| {
            let weight = (0..dim * dim).map(|_| std * rng.gaussian()).collect();
            Layer::identity_bn(dim, weight)
        });
        Ok(Self { dim, leaky_slope, bn_epsilon, bn_momentum, layers })
    }

    /// `init` with the default slope, epsilon and momentum.
    pub fn with_defaults(dim: usize, seed: u64) -> Result<Self> {
        Self::init(dim, seed, DEFAULT_LEAKY_SLOPE, DEFAULT_BN_EPSILON, DEFAULT_BN_MOMENTUM)
    }

    pub fn trainable(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| {
            [l.weight.as_slice(), l.bias.as_slice(), l.gamma.as_slice(), l.beta.as_slice()]
        })
    }

    pub fn trainable_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias, &mut l.gamma, &mut l.beta])
    }

    pub fn num_trainable(&self) -> usize {
        NUM_LAYERS * (self.dim * self.dim + 3 * self.dim)
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: batch.cols() });
        }
        Ok(())
    }

    /// Training-mode forward pass: BN uses batch statistics (population
    /// variance) and updates the running statistics.
    pub fn forward_train(&mut self, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(batch)?;
        if batch.rows() < 2 {
            return Err(Error::BatchTooSmall(batch.rows()));
        }
        let (n, d) = (batch.rows(), self.dim);
        let slope = self.leaky_slope;
        let eps = self.bn_epsilon;
        let momentum = self.bn_momentum;
        let mut caches = Vec::with_capacity(NUM_LAYERS);
        let mut x = batch.clone();
        for (li, layer) in self.layers.iter_mut().enumerate() {
            let pre_bn = linear(&x, &layer.weight, &layer.bias);
            let mut mean = vec![0.0; d];
            for row in pre_bn.iter_rows() {
                mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; d];
            for row in pre_bn.iter_rows() {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);

            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
            let mut normalized = Matrix::zeros(n, d);
            let mut output = Matrix::zeros(n, d);
            for r in 0..n {
                let z = pre_bn.row(r);
                let xh = normalized.row_mut(r);
                for j in 0..d {
                    xh[j] = (z[j] - mean[j]) * inv_std[j];
                }
                let out = output.row_mut(r);
                for j in 0..d {
                    let y = layer.gamma[j] * xh[j] + layer.beta[j];
                    out[j] = if li + 1 < NUM_LAYERS { leaky(y, slope) } else { y };
                }
            }

            for j in 0..d {
                layer.running_mean[j] = momentum * layer.running_mean[j] + (1.0 - momentum) * mean[j];
                layer.running_var[j] = momentum * layer.running_var[j] + (1.0 - momentum) * var[j];
            }

            x = output.clone();
            caches.push(LayerCache { pre_bn, batch_mean: mean, batch_var: var, normalized, output });
        }
        Ok((x, ForwardCache { input: batch.clone(), layers: caches }))
    }

    /// Inference-mode forward pass using the running BN statistics.
    pub fn forward_infer(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = linear(&x, &layer.weight, &layer.bias);
            let scale: Vec<f64> = layer
                .running_var
                .iter()
                .zip(&layer.gamma)
                .map(|(v, g)| g / libm::sqrt(v + self.bn_epsilon))
                .collect();
            for r in 0..z.rows() {
                for (j, v) in z.row_mut(r).iter_mut().enumerate() {
                    let y = (*v - layer.running_mean[j]) * scale[j] + layer.beta[j];
                    *v = if li + 1 < NUM_LAYERS { leaky(y, self.leaky_slope) } else { y };
                }
            }
            x = z;
        }
        Ok(x)
    }

    /// L2-normalizes every row, then runs [`forward_infer`](Self::forward_infer).
    pub fn unmask(&self, batch: &Matrix) -> Result<Matrix> {
        self.forward_infer(&normalize_rows(batch)?)
    }

    /// Exact gradients of a scalar loss given `∂L/∂outputs`, including the
    /// batch-statistics terms of every BN layer.
    pub fn backward(&self, cache: &ForwardCache, grad_outputs: &Matrix) -> Result<ParamGrads> {
        let d = self.dim;
        let n = cache.input.rows();
        let shapes_ok = cache.layers.len() == NUM_LAYERS
            && cache.input.cols() == d
            && grad_outputs.rows() == n
            && grad_outputs.cols() == d
            && cache.layers.iter().all(|c| {
                c.pre_bn.rows() == n && c.pre_bn.cols() == d && c.batch_var.len() == d
            });
        if !shapes_ok || n < 2 {
            return Err(Error::CacheMismatch);
        }

        let inv_n = 1.0 / n as f64;
        let mut grad = grad_outputs.clone();
        let mut grads: Vec<LayerGrads> = Vec::with_capacity(NUM_LAYERS);
        for li in (0..NUM_LAYERS).rev() {
            let layer = &self.layers[li];
            let lc = &cache.layers[li];
            let input = if li == 0 { &cache.input } else { &cache.layers[li - 1].output };

            if li + 1 < NUM_LAYERS {
                for r in 0..n {
                    let xh = lc.normalized.row(r);
                    for (j, g) in grad.row_mut(r).iter_mut().enumerate() {
                        let y = layer.gamma[j] * xh[j] + layer.beta[j];
                        if y <= 0.0 {
                            *g *= self.leaky_slope;
                        }
                    }
                }
            }

            let mut d_gamma = vec![0.0; d];
            let mut d_beta = vec![0.0; d];
            for r in 0..n {
                let (g, xh) = (grad.row(r), lc.normalized.row(r));
                for j in 0..d {
                    d_gamma[j] += g[j] * xh[j];
                    d_beta[j] += g[j];
                }
            }

            // dz = inv_std / N · (N·dx̂ − Σ dx̂ − x̂ · Σ dx̂·x̂), with dx̂ = γ·g.
            // Σ dx̂ = γ·dβ and Σ dx̂·x̂ = γ·dγ.
            let mut dz = Matrix::zeros(n, d);
            for j in 0..d {
                let inv_std = 1.0 / libm::sqrt(lc.batch_var[j] + self.bn_epsilon);
                let sum_dxh = layer.gamma[j] * d_beta[j];
                let sum_dxh_xh = layer.gamma[j] * d_gamma[j];
                for r in 0..n {
                    let dxh = layer.gamma[j] * grad.row(r)[j];
                    let xh = lc.normalized.row(r)[j];
                    dz.row_mut(r)[j] = inv_std * inv_n * (n as f64 * dxh - sum_dxh - xh * sum_dxh_xh);
                }
            }

            let mut d_weight = vec![0.0; d * d];
            let mut d_bias = vec![0.0; d];
            for r in 0..n {
                let (dzr, xr) = (dz.row(r), input.row(r));
                for j in 0..d {
                    let g = dzr[j];
                    d_bias[j] += g;
                    let wrow = &mut d_weight[j * d..(j + 1) * d];
                    wrow.iter_mut().zip(xr).for_each(|(w, x)| *w += g * x);
                }
            }

            let mut d_input = Matrix::zeros(n, d);
            for r in 0..n {
                let dzr = dz.row(r);
                let out = d_input.row_mut(r);
                for j in 0..d {
                    let g = dzr[j];
                    let wrow = &layer.weight[j * d..(j + 1) * d];
                    out.iter_mut().zip(wrow).for_each(|(o, w)| *o += g * w);
                }
            }
            grad = d_input;
            grads.push(LayerGrads { weight: d_weight, bias: d_bias, gamma: d_gamma, beta: d_beta });
        }
        grads.reverse();
        let layers = <[LayerGrads; NUM_LAYERS]>::try_from(grads).map_err(|_| Error::CacheMismatch)?;
        Ok(ParamGrads { layers, input: grad })
    }

    /// `p ← p − lr · g` for every trainable array; running statistics are untouched.
    pub fn sgd_step(&mut self, grads: &ParamGrads, lr: f64) -> Result<()> {
        let shapes_ok = self.trainable().zip(grads.arrays()).all(|(p, g)| p.len() == g.len());
        if !shapes_ok {
            return Err(Error::ShapeMismatch);
        }
        let arrays: Vec<&[f64]> = grads.arrays().collect();
        for (p, g) in self.trainable_mut().zip(arrays) {
            p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
        }
        Ok(())
    }
}
