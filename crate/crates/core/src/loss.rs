//! Triplet and self-restrained triplet (SRT) losses on EUM outputs.
//!
//! Distances are squared euclidean distances between L2-normalized rows:
//! `d1` anchor-output vs positive, `d2` anchor-output vs negative and `d3`
//! positive vs negative. Gradients are taken only with respect to the raw
//! anchor outputs (through the normalization). Positives and negatives are
//! constants.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::vector::{batch_mean, normalize_in_place, sq_dist};

/// Large relative to the [0, 4] range of squared distances between unit
/// vectors, so the hinge stays active through desk-scale training.
pub const DEFAULT_MARGIN: f64 = 2.0;

#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Triplet,
    Srt,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Triplet => "triplet",
            LossKind::Srt => "srt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "triplet" => Some(LossKind::Triplet),
            "srt" => Some(LossKind::Srt),
            _ => None,
        }
    }
}

/// Which case of the SRT loss was taken for a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// Plain triplet hinge `d1 − d2 + m`.
    Triplet,
    /// `d2` replaced by the batch mean of `d3`.
    Swap,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Triplet => "triplet",
            Branch::Swap => "swap",
        }
    }
}

/// Normalized rows kept around for the anchor gradient.
#[derive(Debug, Clone, PartialEq)]
struct Geometry {
    anchors: Matrix,
    anchor_norms: Vec<f64>,
    positives: Matrix,
    negatives: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTriple {
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub d3: Vec<f64>,
    geometry: Option<Geometry>,
}

impl DistanceTriple {
    /// Distances without the underlying vectors. Losses computed from this
    /// carry per-distance coefficients but no anchor gradient.
    pub fn from_distances(d1: Vec<f64>, d2: Vec<f64>, d3: Vec<f64>) -> Result<Self> {
        if d1.len() != d2.len() || d1.len() != d3.len() {
            return Err(Error::DimensionMismatch { expected: d1.len(), found: d2.len().max(d3.len()) });
        }
        if d1.iter().chain(&d2).chain(&d3).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { d1, d2, d3, geometry: None })
    }

    pub fn len(&self) -> usize {
        self.d1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d1.is_empty()
    }

    pub fn means(&self) -> Result<DistanceMeans> {
        Ok(DistanceMeans {
            d1: batch_mean(&self.d1)?,
            d2: batch_mean(&self.d2)?,
            d3: batch_mean(&self.d3)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceMeans {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub loss: f64,
    pub branch: Branch,
    pub means: DistanceMeans,
    /// `∂loss/∂d1ᵢ`.
    pub d1_coeffs: Vec<f64>,
    /// `∂loss/∂d2ᵢ`; identically zero on the swap branch.
    pub d2_coeffs: Vec<f64>,
    /// `∂loss/∂anchor_out`, present when the distances were computed from vectors.
    pub grad_anchor_out: Option<Matrix>,
}

pub fn compute_distances(anchor_out: &Matrix, positives: &Matrix, negatives: &Matrix) -> Result<DistanceTriple> {
    let n = anchor_out.rows();
    for m in [positives, negatives] {
        if m.rows() != n {
            return Err(Error::DimensionMismatch { expected: n, found: m.rows() });
        }
        if m.cols() != anchor_out.cols() {
            return Err(Error::DimensionMismatch { expected: anchor_out.cols(), found: m.cols() });
        }
    }
    let mut anchors = anchor_out.clone();
    let mut anchor_norms = Vec::with_capacity(n);
    for i in 0..n {
        anchor_norms.push(normalize_in_place(anchors.row_mut(i))?);
    }
    let mut pos = positives.clone();
    let mut neg = negatives.clone();
    for i in 0..n {
        normalize_in_place(pos.row_mut(i))?;
        normalize_in_place(neg.row_mut(i))?;
    }
    let mut d1 = Vec::with_capacity(n);
    let mut d2 = Vec::with_capacity(n);
    let mut d3 = Vec::with_capacity(n);
    for i in 0..n {
        d1.push(sq_dist(anchors.row(i), pos.row(i)));
        d2.push(sq_dist(anchors.row(i), neg.row(i)));
        d3.push(sq_dist(pos.row(i), neg.row(i)));
    }
    Ok(DistanceTriple {
        d1,
        d2,
        d3,
        geometry: Some(Geometry { anchors, anchor_norms, positives: pos, negatives: neg }),
    })
}

/// Chain rule from distance coefficients to raw anchor outputs.
///
/// With `â = a/‖a‖`, `∂d1/∂â = 2(â − p̂)`, `∂d2/∂â = 2(â − n̂)` and
/// `∂â/∂a = (I − ââᵀ)/‖a‖`.
fn anchor_gradient(geo: &Geometry, c1: &[f64], c2: &[f64]) -> Matrix {
    let (n, d) = (geo.anchors.rows(), geo.anchors.cols());
    let mut grad = Matrix::zeros(n, d);
    let mut g_hat = vec![0.0; d];
    for i in 0..n {
        if c1[i] == 0.0 && c2[i] == 0.0 {
            continue;
        }
        let (a, p, q) = (geo.anchors.row(i), geo.positives.row(i), geo.negatives.row(i));
        for j in 0..d {
            g_hat[j] = 2.0 * c1[i] * (a[j] - p[j]) + 2.0 * c2[i] * (a[j] - q[j]);
        }
        let along = a.iter().zip(&g_hat).map(|(x, g)| x * g).sum::<f64>();
        let inv_norm = 1.0 / geo.anchor_norms[i];
        for (out, (g, x)) in grad.row_mut(i).iter_mut().zip(g_hat.iter().zip(a)) {
            *out = (g - x * along) * inv_norm;
        }
    }
    grad
}

/// `(1/N) Σ max(d1ᵢ − rhsᵢ + m, 0)`; `rhs = None` uses `d2ᵢ` (and
/// differentiates through it), `Some(c)` uses the constant `c`.
fn hinge(dist: &DistanceTriple, margin: f64, rhs: Option<f64>, branch: Branch) -> Result<LossResult> {
    let n = dist.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::InvalidConfig("margin must be finite and non-negative".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut c1 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    for i in 0..n {
        let arg = dist.d1[i] - rhs.unwrap_or(dist.d2[i]) + margin;
        if arg > 0.0 {
            loss += arg;
            c1[i] = inv_n;
            if rhs.is_none() {
                c2[i] = -inv_n;
            }
        }
    }
    let grad_anchor_out = dist.geometry.as_ref().map(|g| anchor_gradient(g, &c1, &c2));
    Ok(LossResult {
        loss: loss * inv_n,
        branch,
        means: dist.means()?,
        d1_coeffs: c1,
        d2_coeffs: c2,
        grad_anchor_out,
    })
}

pub fn triplet_loss(dist: &DistanceTriple, margin: f64) -> Result<LossResult> {
    hinge(dist, margin, None, Branch::Triplet)
}

/// Triplet branch iff `μ(d2) < μ(d3)`; ties go to the swap branch.
pub fn srt_branch(dist: &DistanceTriple) -> Result<Branch> {
    let mu2 = batch_mean(&dist.d2)?;
    let mu3 = batch_mean(&dist.d3)?;
    Ok(if mu2 < mu3 { Branch::Triplet } else { Branch::Swap })
}

pub fn srt_loss(dist: &DistanceTriple, margin: f64) -> Result<LossResult> {
    match srt_branch(dist)? {
        Branch::Triplet => hinge(dist, margin, None, Branch::Triplet),
        Branch::Swap => {
            let mu3 = batch_mean(&dist.d3)?;
            hinge(dist, margin, Some(mu3), Branch::Swap)
        }
    }
}

pub fn loss(kind: LossKind, dist: &DistanceTriple, margin: f64) -> Result<LossResult> {
    match kind {
        LossKind::Triplet => triplet_loss(dist, margin),
        LossKind::Srt => srt_loss(dist, margin),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn triple(d1: &[f64], d2: &[f64], d3: &[f64]) -> DistanceTriple {
        DistanceTriple::from_distances(d1.to_vec(), d2.to_vec(), d3.to_vec()).unwrap()
    }

    fn rows(cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_vec(data.len() / cols, cols, data.to_vec()).unwrap()
    }

    fn random(n: usize, d: usize, rng: &mut CounterRng) -> Matrix {
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.gaussian()).collect()).unwrap()
    }

    #[test]
    fn distance_examples() {
        let a = rows(3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let t = compute_distances(&a, &a, &rows(3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        assert!(t.d1.iter().all(|d| d.abs() < 1e-15));

        let t = compute_distances(&rows(3, &[1.0, 0.0, 0.0]), &rows(3, &[0.0, 1.0, 0.0]), &rows(3, &[0.0, 0.0, 1.0]))
            .unwrap();
        assert_eq!((t.d1[0], t.d2[0], t.d3[0]), (2.0, 2.0, 2.0));

        let t = compute_distances(&rows(2, &[1.0, 0.0]), &rows(2, &[0.0, 1.0]), &rows(2, &[-1.0, 0.0])).unwrap();
        assert_eq!((t.d1[0], t.d2[0], t.d3[0]), (2.0, 4.0, 2.0));

        assert_eq!(
            compute_distances(&rows(2, &[0.0, 0.0]), &rows(2, &[0.0, 1.0]), &rows(2, &[1.0, 0.0])).unwrap_err(),
            Error::ZeroVector
        );
        assert!(matches!(
            compute_distances(&rows(2, &[1.0, 0.0]), &rows(2, &[0.0, 1.0, 1.0, 1.0]), &rows(2, &[1.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn triplet_examples() {
        assert_eq!(triplet_loss(&triple(&[0.2], &[0.9], &[1.0]), 0.5).unwrap().loss, 0.0);
        let r = triplet_loss(&triple(&[0.8], &[0.9], &[1.0]), 0.5).unwrap();
        assert!((r.loss - 0.4).abs() < 1e-12);
        assert_eq!(r.branch, Branch::Triplet);
        let r = triplet_loss(&triple(&[0.8, 0.2], &[0.9, 0.9], &[1.0, 1.0]), 0.5).unwrap();
        assert!((r.loss - 0.2).abs() < 1e-12);
        assert!(r.grad_anchor_out.is_none());
    }

    #[test]
    fn branch_examples() {
        assert_eq!(srt_branch(&triple(&[0.0, 0.0], &[0.5, 0.7], &[1.0, 1.0])).unwrap(), Branch::Triplet);
        assert_eq!(srt_branch(&triple(&[0.0], &[1.2], &[1.0])).unwrap(), Branch::Swap);
        assert_eq!(srt_branch(&triple(&[0.0], &[1.0], &[1.0])).unwrap(), Branch::Swap);
        assert_eq!(srt_branch(&triple(&[], &[], &[])).unwrap_err(), Error::EmptyBatch);
    }

    #[test]
    fn srt_examples() {
        let r = srt_loss(&triple(&[0.4], &[1.2], &[1.0]), 0.2).unwrap();
        assert_eq!(r.branch, Branch::Swap);
        assert_eq!(r.loss, 0.0);

        let r = srt_loss(&triple(&[0.9], &[1.2], &[1.0]), 0.2).unwrap();
        assert_eq!(r.branch, Branch::Swap);
        assert!((r.loss - 0.1).abs() < 1e-12);
        assert_eq!(r.d2_coeffs, vec![0.0]);
        assert_eq!(r.d1_coeffs, vec![1.0]);

        let r = srt_loss(&triple(&[0.4], &[0.6], &[1.0]), 0.2).unwrap();
        assert_eq!(r.branch, Branch::Triplet);
        assert!(r.loss.abs() < 1e-12);
        assert_eq!(srt_loss(&triple(&[], &[], &[]), 0.2).unwrap_err(), Error::EmptyBatch);
    }

    #[test]
    fn dead_zone_gives_exact_zero() {
        let mut rng = CounterRng::new(11, 0);
        let a = random(6, 5, &mut rng);
        let dist = compute_distances(&a, &a, &random(6, 5, &mut rng)).unwrap();
        // d1 = 0 and d2 > 0 for generic vectors, so with m = 0 every hinge argument is negative.
        for r in [triplet_loss(&dist, 0.0).unwrap(), srt_loss(&dist, 0.0).unwrap()] {
            assert_eq!(r.loss, 0.0);
            assert!(r.grad_anchor_out.unwrap().as_slice().iter().all(|g| *g == 0.0));
        }
    }

    /// Central differences of the loss w.r.t. anchor outputs, holding
    /// positives, negatives and (on the swap branch) μ(d3) fixed.
    fn fd_anchor_grad(a: &Matrix, p: &Matrix, q: &Matrix, margin: f64, fixed_rhs: Option<f64>) -> Matrix {
        let f = |a: &Matrix| {
            let n = a.rows();
            (0..n)
                .map(|i| {
                    let unit = |v: &[f64]| {
                        let s = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
                        v.iter().map(|x| x / s).collect::<Vec<_>>()
                    };
                    let (ua, up, uq) = (unit(a.row(i)), unit(p.row(i)), unit(q.row(i)));
                    let d1 = sq_dist(&ua, &up);
                    let rhs = fixed_rhs.unwrap_or_else(|| sq_dist(&ua, &uq));
                    (d1 - rhs + margin).max(0.0)
                })
                .sum::<f64>()
                / n as f64
        };
        let h = 1e-6;
        let mut grad = Matrix::zeros(a.rows(), a.cols());
        let mut x = a.clone();
        for k in 0..a.as_slice().len() {
            let orig = x.as_slice()[k];
            x.as_mut_slice()[k] = orig + h;
            let fp = f(&x);
            x.as_mut_slice()[k] = orig - h;
            let fm = f(&x);
            x.as_mut_slice()[k] = orig;
            grad.as_mut_slice()[k] = (fp - fm) / (2.0 * h);
        }
        grad
    }

    #[test]
    fn anchor_gradients_match_finite_differences() {
        let mut rng = CounterRng::new(5, 1);
        let mut seen = [false; 2];
        for _ in 0..40 {
            let (a, p, q) = (random(5, 4, &mut rng), random(5, 4, &mut rng), random(5, 4, &mut rng));
            let dist = compute_distances(&a, &p, &q).unwrap();
            let margin = 0.5;
            for kind in [LossKind::Triplet, LossKind::Srt] {
                let r = loss(kind, &dist, margin).unwrap();
                let rhs = if r.branch == Branch::Swap { Some(r.means.d3) } else { None };
                seen[(r.branch == Branch::Swap) as usize] = true;
                let fd = fd_anchor_grad(&a, &p, &q, margin, rhs);
                let g = r.grad_anchor_out.unwrap();
                for (x, y) in g.as_slice().iter().zip(fd.as_slice()) {
                    assert!((x - y).abs() < 1e-6, "{x} vs {y}");
                }
            }
        }
        assert!(seen[0] && seen[1], "both branches exercised");
    }

    #[test]
    fn increasing_active_d1_never_decreases_loss() {
        let base = triple(&[0.8, 0.3, 1.5], &[0.9, 1.9, 1.6], &[1.2, 1.2, 1.1]);
        for kind in [LossKind::Triplet, LossKind::Srt] {
            let before = loss(kind, &base, 0.2).unwrap();
            for i in 0..3 {
                if before.d1_coeffs[i] == 0.0 {
                    continue;
                }
                let mut bumped = base.clone();
                bumped.d1[i] += 0.05;
                assert!(loss(kind, &bumped, 0.2).unwrap().loss >= before.loss);
            }
        }
    }
}
