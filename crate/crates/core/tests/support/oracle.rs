//! Brute-force threshold sweep written from the metric definitions only.
//! Shared by the metric tests and the acceptance run.

#![allow(dead_code)]

use eum_core::metrics::RocPoint;
use eum_core::{CounterRng, ScoreSet};

/// Thresholds below, between and above the distinct scores.
pub fn thresholds(s: &ScoreSet) -> Vec<f64> {
    let mut all: Vec<f64> = s.genuine.iter().chain(&s.imposter).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let mut t = vec![f64::NEG_INFINITY];
    t.extend(all.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    t.push(f64::INFINITY);
    t
}

/// `(#genuine < t, #imposter ≥ t)`
pub fn counts(s: &ScoreSet, t: f64) -> (u64, u64) {
    let fn_ = s.genuine.iter().filter(|&&g| g < t).count() as u64;
    let fm = s.imposter.iter().filter(|&&i| i >= t).count() as u64;
    (fn_, fm)
}

pub fn oracle_eer(s: &ScoreSet) -> f64 {
    let (ng, ni) = (s.genuine.len() as u64, s.imposter.len() as u64);
    let mut best: Option<(u64, u64, u64)> = None;
    for t in thresholds(s) {
        let (f_n, f_m) = counts(s, t);
        // |f_m/ni − f_n/ng| scaled by ni·ng.
        let gap = (f_m * ng).abs_diff(f_n * ni);
        if best.is_none_or(|(g, _, _)| gap < g) {
            best = Some((gap, f_n, f_m));
        }
    }
    let (_, f_n, f_m) = best.unwrap();
    (f_m as f64 / ni as f64 + f_n as f64 / ng as f64) / 2.0
}

pub fn oracle_fnmr_at(s: &ScoreSet, ceiling: f64) -> f64 {
    let (ng, ni) = (s.genuine.len() as f64, s.imposter.len() as f64);
    thresholds(s)
        .into_iter()
        .map(|t| counts(s, t))
        .filter(|&(_, f_m)| f_m as f64 / ni <= ceiling)
        .map(|(f_n, _)| f_n as f64 / ng)
        .fold(f64::INFINITY, f64::min)
}

pub fn oracle_auc(s: &ScoreSet) -> f64 {
    let mut twice = 0u64;
    for g in &s.genuine {
        for i in &s.imposter {
            twice += if g > i { 2 } else if g == i { 1 } else { 0 };
        }
    }
    twice as f64 / (2.0 * s.genuine.len() as f64 * s.imposter.len() as f64)
}

pub fn oracle_roc(s: &ScoreSet) -> Vec<RocPoint> {
    let (ng, ni) = (s.genuine.len() as f64, s.imposter.len() as f64);
    let mut pts: Vec<RocPoint> = thresholds(s)
        .into_iter()
        .rev()
        .map(|t| {
            let (f_n, f_m) = counts(s, t);
            RocPoint { fmr: f_m as f64 / ni, tpr: 1.0 - f_n as f64 / ng }
        })
        .collect();
    pts.dedup();
    pts
}

/// Sizes 1–500; half the sets draw from a coarse dyadic grid so ties and
/// duplicates are common and every midpoint threshold is exact.
pub fn random_set(rng: &mut CounterRng) -> ScoreSet {
    let ng = 1 + rng.below(500);
    let ni = 1 + rng.below(500);
    let coarse = rng.below(2) == 0;
    let levels = 2 + rng.below(20);
    let mut draw = |shift: f64| {
        if coarse {
            (rng.below(levels) as f64 / 32.0 + shift).min(1.0)
        } else {
            (0.3 * rng.gaussian() + shift).clamp(-1.0, 1.0)
        }
    };
    let genuine = (0..ng).map(|_| draw(0.125)).collect();
    let imposter = (0..ni).map(|_| draw(0.0)).collect();
    ScoreSet::new(genuine, imposter)
}
