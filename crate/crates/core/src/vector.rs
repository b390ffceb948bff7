//! Vector primitives: norms, normalization, distances, similarities.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Below this norm a vector is treated as degenerate.
pub const ZERO_NORM: f64 = 1e-12;

/// An embedding with unit L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[inline]
pub fn norm(x: &[f64]) -> f64 {
    libm::sqrt(dot(x, x))
}

fn check_embedding(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidDimension(0));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    Ok(())
}

pub fn l2_normalize(v: &[f64]) -> Result<UnitVector> {
    check_embedding(v)?;
    let n = norm(v);
    if n <= ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    Ok(UnitVector(v.iter().map(|x| x / n).collect()))
}

/// Normalizes `v` in place and returns its original norm.
pub fn normalize_in_place(v: &mut [f64]) -> Result<f64> {
    let n = norm(v);
    if !n.is_finite() {
        return Err(Error::NonFinite);
    }
    if n <= ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(n)
}

/// Row-wise L2 normalization.
pub fn normalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        normalize_in_place(out.row_mut(i))?;
    }
    Ok(out)
}

/// Pulls `∂L/∂x̂` back through row-wise normalization: `(g − x̂(x̂·g)) / ‖x‖`.
pub fn normalize_rows_backward(raw: &Matrix, grad_units: &Matrix) -> Result<Matrix> {
    if !raw.same_shape(grad_units) {
        return Err(Error::ShapeMismatch);
    }
    let mut out = grad_units.clone();
    for i in 0..raw.rows() {
        let x = raw.row(i);
        let n = norm(x);
        if n < ZERO_NORM {
            return Err(Error::ZeroVector);
        }
        let g = out.row_mut(i);
        let proj = dot(x, g) / (n * n);
        g.iter_mut().zip(x).for_each(|(gi, xi)| *gi = (*gi - proj * xi) / n);
    }
    Ok(out)
}

/// Squared euclidean distance of raw slices, without normalization.
#[inline]
pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `‖x − y‖²` of two unit vectors; lies in `[0, 4]`.
pub fn sq_euclid(x: &UnitVector, y: &UnitVector) -> Result<f64> {
    check_dims(&x.0, &y.0)?;
    Ok(sq_dist(&x.0, &y.0))
}

pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    check_embedding(x)?;
    check_embedding(y)?;
    let (nx, ny) = (norm(x), norm(y));
    if nx <= ZERO_NORM || ny <= ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    Ok((dot(x, y) / (nx * ny)).clamp(-1.0, 1.0))
}

pub fn batch_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
