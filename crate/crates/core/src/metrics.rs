//! Biometric verification metrics over genuine/imposter score populations.
//!
//! Scores follow the similarity convention: higher means more alike. At a
//! threshold `t` a comparison is accepted when `score ≥ t`, so
//! `FNMR(t) = #{genuine < t} / G` and `FMR(t) = #{imposter ≥ t} / I`.
//! Candidate thresholds are every distinct observed score plus `±∞`.

use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::EumParams;
use crate::record::{stack, EmbeddingRecord};
use crate::vector::{dot, normalize_rows, sq_dist};

pub const FMR100: f64 = 0.01;
pub const FMR1000: f64 = 0.001;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub imposter: Vec<f64>,
}

impl ScoreSet {
    pub fn new(genuine: Vec<f64>, imposter: Vec<f64>) -> Self {
        Self { genuine, imposter }
    }

    pub fn extend(&mut self, other: ScoreSet) {
        self.genuine.extend(other.genuine);
        self.imposter.extend(other.imposter);
    }

    fn check(&self) -> Result<()> {
        if self.genuine.is_empty() || self.imposter.is_empty() {
            return Err(Error::EmptyScores);
        }
        if self.genuine.iter().chain(&self.imposter).any(|s| !s.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }
}

/// Which records go through the EUM before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyTo {
    MaskedOnly,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Similarity {
    Cosine,
    /// `−‖x̂ − ŷ‖²` on normalized embeddings; rank-equivalent to cosine.
    NegSqEuclid,
}

/// Unit-normalized embeddings ready for N:N scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSet {
    pub units: Matrix,
    pub identities: Vec<u32>,
}

impl ComparisonSet {
    /// Stacks records, replacing masked ones by their EUM output when
    /// `apply == MaskedOnly` and a model is given, then L2-normalizes.
    pub fn prepare<'a, I>(records: I, eum: Option<&EumParams>, apply: ApplyTo) -> Result<Self>
    where
        I: IntoIterator<Item = &'a EmbeddingRecord>,
    {
        let records: Vec<&EmbeddingRecord> = records.into_iter().collect();
        let first = records.first().ok_or(Error::EmptySet)?;
        let dim = first.dim();
        let mut raw = stack(dim, records.iter().copied())?;
        if let (Some(model), ApplyTo::MaskedOnly) = (eum, apply) {
            if model.dim != dim {
                return Err(Error::DimensionMismatch { expected: model.dim, found: dim });
            }
            let masked: Vec<usize> = (0..records.len()).filter(|&i| records[i].masked).collect();
            if !masked.is_empty() {
                let input = Matrix::from_rows(dim, masked.iter().map(|&i| raw.row(i)))?;
                let out = model.unmask(&input)?;
                for (k, &i) in masked.iter().enumerate() {
                    raw.row_mut(i).copy_from_slice(out.row(k));
                }
            }
        }
        Ok(Self { units: normalize_rows(&raw)?, identities: records.iter().map(|r| r.identity).collect() })
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }

    /// Scores references `rows` of `self` against every probe, in row-major order.
    pub fn score_rows(&self, probes: &ComparisonSet, rows: Range<usize>, sim: Similarity) -> Result<ScoreSet> {
        if self.units.cols() != probes.units.cols() {
            return Err(Error::DimensionMismatch { expected: self.units.cols(), found: probes.units.cols() });
        }
        let mut out = ScoreSet::default();
        for i in rows {
            let r = self.units.row(i);
            for (j, &pid) in probes.identities.iter().enumerate() {
                let p = probes.units.row(j);
                let s = match sim {
                    Similarity::Cosine => dot(r, p).clamp(-1.0, 1.0),
                    Similarity::NegSqEuclid => -sq_dist(r, p),
                };
                if pid == self.identities[i] {
                    out.genuine.push(s);
                } else {
                    out.imposter.push(s);
                }
            }
        }
        Ok(out)
    }
}

pub fn compute_scores_with<'a, R, P>(
    references: R,
    probes: P,
    eum: Option<&EumParams>,
    apply: ApplyTo,
    sim: Similarity,
) -> Result<ScoreSet>
where
    R: IntoIterator<Item = &'a EmbeddingRecord>,
    P: IntoIterator<Item = &'a EmbeddingRecord>,
{
    let refs = ComparisonSet::prepare(references, eum, apply)?;
    let probes = ComparisonSet::prepare(probes, eum, apply)?;
    refs.score_rows(&probes, 0..refs.len(), sim)
}

/// Every reference × probe pair scored by cosine similarity.
pub fn compute_scores<'a, R, P>(references: R, probes: P, eum: Option<&EumParams>, apply: ApplyTo) -> Result<ScoreSet>
where
    R: IntoIterator<Item = &'a EmbeddingRecord>,
    P: IntoIterator<Item = &'a EmbeddingRecord>,
{
    compute_scores_with(references, probes, eum, apply, Similarity::Cosine)
}

/// Counts at one candidate threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Operating {
    threshold: f64,
    genuine_below: usize,
    imposter_at_or_above: usize,
}

/// Ascending sweep over `−∞`, the distinct scores, and `+∞`.
fn sweep(scores: &ScoreSet) -> Vec<Operating> {
    let mut g = scores.genuine.clone();
    let mut im = scores.imposter.clone();
    g.sort_unstable_by(f64::total_cmp);
    im.sort_unstable_by(f64::total_cmp);
    let ni = im.len();
    let mut out = Vec::with_capacity(g.len() + im.len() + 2);
    out.push(Operating { threshold: f64::NEG_INFINITY, genuine_below: 0, imposter_at_or_above: ni });
    let (mut gi, mut ii) = (0, 0);
    while gi < g.len() || ii < im.len() {
        let t = match (g.get(gi), im.get(ii)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        out.push(Operating { threshold: t, genuine_below: gi, imposter_at_or_above: ni - ii });
        while gi < g.len() && g[gi] == t {
            gi += 1;
        }
        while ii < im.len() && im[ii] == t {
            ii += 1;
        }
    }
    out.push(Operating { threshold: f64::INFINITY, genuine_below: g.len(), imposter_at_or_above: 0 });
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EqualErrorRate {
    pub rate: f64,
    pub threshold: f64,
}

/// Minimizes `|FMR − FNMR|` (exactly, in integer arithmetic), taking the
/// lowest threshold on ties. The rate is the midpoint `(FMR + FNMR) / 2`.
pub fn eer(scores: &ScoreSet) -> Result<EqualErrorRate> {
    scores.check()?;
    let (ng, ni) = (scores.genuine.len(), scores.imposter.len());
    let gap = |op: &Operating| {
        let fmr = op.imposter_at_or_above as u128 * ng as u128;
        let fnmr = op.genuine_below as u128 * ni as u128;
        fmr.abs_diff(fnmr)
    };
    let ops = sweep(scores);
    let mut best = ops[0];
    for op in &ops[1..] {
        if gap(op) < gap(&best) {
            best = *op;
        }
    }
    let rate = (best.imposter_at_or_above as f64 / ni as f64 + best.genuine_below as f64 / ng as f64) / 2.0;
    Ok(EqualErrorRate { rate, threshold: best.threshold })
}

/// Lowest FNMR over thresholds whose FMR does not exceed `fmr_ceiling`.
pub fn fnmr_at_fmr(scores: &ScoreSet, fmr_ceiling: f64) -> Result<f64> {
    scores.check()?;
    if !(fmr_ceiling > 0.0 && fmr_ceiling < 1.0) {
        return Err(Error::InvalidConfig("fmr ceiling must lie in (0, 1)".into()));
    }
    let (ng, ni) = (scores.genuine.len() as f64, scores.imposter.len() as f64);
    // FNMR grows with the threshold, so the first qualifying threshold wins.
    let op = sweep(scores)
        .into_iter()
        .find(|op| op.imposter_at_or_above as f64 / ni <= fmr_ceiling)
        .expect("+inf threshold has FMR 0");
    Ok(op.genuine_below as f64 / ng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fmr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roc {
    /// Distinct operating points by ascending FMR, from `(0, 0)` to `(1, 1)`.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Probability that a random genuine score beats a random imposter score,
/// ties counting one half.
pub fn auc(scores: &ScoreSet) -> Result<f64> {
    scores.check()?;
    let mut g = scores.genuine.clone();
    let mut im = scores.imposter.clone();
    g.sort_unstable_by(f64::total_cmp);
    im.sort_unstable_by(f64::total_cmp);
    // Twice the rank statistic, to keep ties integral.
    let mut twice: u128 = 0;
    let (mut below, mut gi) = (0usize, 0usize);
    while gi < g.len() {
        let v = g[gi];
        while below < im.len() && im[below] < v {
            below += 1;
        }
        let mut equal = 0;
        while below + equal < im.len() && im[below + equal] == v {
            equal += 1;
        }
        let mut same = 0;
        while gi < g.len() && g[gi] == v {
            gi += 1;
            same += 1;
        }
        twice += same as u128 * (2 * below + equal) as u128;
    }
    Ok(twice as f64 / (2.0 * g.len() as f64 * im.len() as f64))
}

pub fn roc(scores: &ScoreSet) -> Result<Roc> {
    scores.check()?;
    let (ng, ni) = (scores.genuine.len() as f64, scores.imposter.len() as f64);
    let mut points: Vec<RocPoint> = sweep(scores)
        .into_iter()
        .rev()
        .map(|op| RocPoint {
            fmr: op.imposter_at_or_above as f64 / ni,
            tpr: 1.0 - op.genuine_below as f64 / ng,
        })
        .collect();
    // `−∞` and the lowest score share an operating point.
    points.dedup();
    Ok(Roc { points, auc: auc(scores)? })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn population_var(v: &[f64], m: f64) -> f64 {
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreMeans {
    pub genuine: f64,
    pub imposter: f64,
}

pub fn means(scores: &ScoreSet) -> Result<ScoreMeans> {
    scores.check()?;
    Ok(ScoreMeans { genuine: mean(&scores.genuine), imposter: mean(&scores.imposter) })
}

/// Fisher discriminant ratio `(μ_G − μ_I)² / (σ_G² + σ_I²)` with population variances.
pub fn fdr(scores: &ScoreSet) -> Result<f64> {
    let m = means(scores)?;
    let var = population_var(&scores.genuine, m.genuine) + population_var(&scores.imposter, m.imposter);
    if var <= 0.0 {
        return Err(Error::DegenerateDistributions);
    }
    Ok((m.genuine - m.imposter) * (m.genuine - m.imposter) / var)
}

/// All metrics for one score set. Rates are fractions, not percentages.
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationReport {
    pub eer: f64,
    pub eer_threshold: f64,
    pub fmr100: f64,
    pub fmr1000: f64,
    pub g_mean: f64,
    pub i_mean: f64,
    pub fdr: f64,
    pub auc: f64,
    pub n_genuine: usize,
    pub n_imposter: usize,
}

pub fn report(scores: &ScoreSet) -> Result<VerificationReport> {
    let e = eer(scores)?;
    let m = means(scores)?;
    Ok(VerificationReport {
        eer: e.rate,
        eer_threshold: e.threshold,
        fmr100: fnmr_at_fmr(scores, FMR100)?,
        fmr1000: fnmr_at_fmr(scores, FMR1000)?,
        g_mean: m.genuine,
        i_mean: m.imposter,
        fdr: fdr(scores)?,
        auc: auc(scores)?,
        n_genuine: scores.genuine.len(),
        n_imposter: scores.imposter.len(),
    })
}
