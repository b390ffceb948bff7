//! Central finite-difference check of [`pipeline_gradients`].
//!
//! Every trainable parameter and every raw anchor coordinate is perturbed by
//! `±h`, and the symmetric difference quotient of the batch loss is compared
//! with the analytic gradient.
//!
//! A fixed step is only meaningful where the loss is smooth on the scale of
//! `h`. Random problems are therefore screened and redrawn when a BN batch
//! variance falls below `ε` (the normalization then curves on a `√ε` scale,
//! and truncation error at `h = 1e-6` reaches `1e-4`), or when a LeakyReLU
//! input, a hinge argument or the SRT branch condition sits within
//! [`KINK_CLEARANCE`] of its switch point.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::loss::{self, compute_distances, LossKind};
use crate::matrix::Matrix;
use crate::model::EumParams;
use crate::rng::CounterRng;
use crate::trainer::pipeline_gradients;
use crate::vector::normalize_rows;

/// Gradients smaller than this are compared on an absolute scale.
///
/// With `h = 1e-6` and losses of order one, the difference quotient carries
/// roughly `1e-10` of rounding noise. Pre-BN biases have an exactly zero true
/// gradient, so a pure relative error would only measure that noise.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

/// `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR)`
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Minimum distance from any non-differentiable point.
pub const KINK_CLEARANCE: f64 = 1e-4;

const MAX_DRAWS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Site {
    /// Index into the flattened [`EumParams::trainable`] arrays.
    Param { array: usize, index: usize },
    Input { row: usize, col: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub site: Site,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCase {
    pub dim: usize,
    pub batch: usize,
    pub seed: u64,
    pub kind: LossKind,
    pub margin: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    /// Problems rejected by the smoothness screen before this one.
    pub redraws: u64,
    pub worst: Comparison,
}

struct Problem {
    params: EumParams,
    anchors: Matrix,
    positives: Matrix,
    negatives: Matrix,
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut CounterRng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gaussian()).collect();
    Matrix::from_vec(rows, cols, data).expect("shape is consistent")
}

impl Problem {
    /// First draw for `case.seed` that passes [`Problem::is_smooth`].
    fn draw(case: &GradCase) -> Result<(Self, u64)> {
        for attempt in 0..MAX_DRAWS {
            let p = Self::new(case, attempt)?;
            if p.is_smooth(case)? {
                return Ok((p, attempt));
            }
        }
        Err(Error::InvalidConfig("no smooth gradient-check problem found".into()))
    }

    /// Random inputs, plus non-trivial bias/γ/β so no parameter sits at its init value.
    fn new(case: &GradCase, attempt: u64) -> Result<Self> {
        let mut params = EumParams::with_defaults(case.dim, case.seed ^ (attempt << 32))?;
        let mut rng = CounterRng::new(case.seed, 0x9c + (attempt << 8));
        for layer in &mut params.layers {
            for (b, (g, be)) in layer.bias.iter_mut().zip(layer.gamma.iter_mut().zip(layer.beta.iter_mut())) {
                *b = 0.1 * rng.gaussian();
                *g = 1.0 + 0.2 * rng.gaussian();
                *be = 0.1 * rng.gaussian();
            }
        }
        Ok(Self {
            params,
            anchors: gaussian_matrix(case.batch, case.dim, &mut rng),
            positives: gaussian_matrix(case.batch, case.dim, &mut rng),
            negatives: gaussian_matrix(case.batch, case.dim, &mut rng),
        })
    }

    fn is_smooth(&self, case: &GradCase) -> Result<bool> {
        let mut params = self.params.clone();
        let (out, cache) = params.forward_train(&normalize_rows(&self.anchors)?)?;
        for (li, layer) in cache.layers.iter().enumerate() {
            if layer.batch_var.iter().any(|&v| v < params.bn_epsilon) {
                return Ok(false);
            }
            let p = &params.layers[li];
            let activated = li + 1 < params.layers.len();
            for row in layer.normalized.iter_rows() {
                let near_kink = row.iter().enumerate().any(|(j, x)| (p.gamma[j] * x + p.beta[j]).abs() < KINK_CLEARANCE);
                if activated && near_kink {
                    return Ok(false);
                }
            }
        }
        let dist = compute_distances(&out, &self.positives, &self.negatives)?;
        let m = dist.means()?;
        if (m.d2 - m.d3).abs() < KINK_CLEARANCE {
            return Ok(false);
        }
        let near = |x: f64| x.abs() < KINK_CLEARANCE;
        for i in 0..dist.len() {
            if near(dist.d1[i] - dist.d2[i] + case.margin) || near(dist.d1[i] - m.d3 + case.margin) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn loss(&self, params: &EumParams, anchors: &Matrix, case: &GradCase) -> Result<f64> {
        // Train-mode output does not depend on the running statistics.
        let mut params = params.clone();
        let (out, _) = params.forward_train(&normalize_rows(anchors)?)?;
        let dist = compute_distances(&out, &self.positives, &self.negatives)?;
        Ok(loss::loss(case.kind, &dist, case.margin)?.loss)
    }
}

pub fn check_pipeline(case: &GradCase) -> Result<GradCheck> {
    let (problem, redraws) = Problem::draw(case)?;
    let mut scratch = problem.params.clone();
    let (_, grads) = pipeline_gradients(
        &mut scratch,
        &problem.anchors,
        &problem.positives,
        &problem.negatives,
        case.kind,
        case.margin,
    )?;
    let h = case.step;
    let mut comparisons = Vec::new();

    let analytic: Vec<&[f64]> = grads.arrays().collect();
    for (array, values) in analytic.iter().enumerate() {
        for (index, &a) in values.iter().enumerate() {
            let shifted = |delta: f64| {
                let mut p = problem.params.clone();
                p.trainable_mut().nth(array).expect("array index in range")[index] += delta;
                problem.loss(&p, &problem.anchors, case)
            };
            let numeric = (shifted(h)? - shifted(-h)?) / (2.0 * h);
            comparisons.push((Site::Param { array, index }, a, numeric));
        }
    }

    for row in 0..case.batch {
        for col in 0..case.dim {
            let shifted = |delta: f64| {
                let mut x = problem.anchors.clone();
                x.row_mut(row)[col] += delta;
                problem.loss(&problem.params, &x, case)
            };
            let numeric = (shifted(h)? - shifted(-h)?) / (2.0 * h);
            comparisons.push((Site::Input { row, col }, grads.input.row(row)[col], numeric));
        }
    }

    let checked = comparisons.len();
    let worst = comparisons
        .into_iter()
        .map(|(site, analytic, numeric)| Comparison { site, analytic, numeric, rel_error: rel_error(analytic, numeric) })
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .expect("at least one parameter");
    Ok(GradCheck { checked, redraws, worst })
}
