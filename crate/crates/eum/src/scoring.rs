//! N:N scoring, optionally split across threads.
//!
//! Reference rows are cut into contiguous chunks and the partial score sets
//! are concatenated in chunk order, so every thread count yields the same
//! `ScoreSet` as the serial path.

use std::thread;

use eum_core::metrics::{ComparisonSet, Similarity};
use eum_core::ScoreSet;

use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "EUM_THREADS";

/// `EUM_THREADS`, defaulting to 1. Zero also means serial.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(std::env::VarError::NotPresent) => Ok(1),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(|n| n.max(1))
            .map_err(|_| Error::Usage(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}"))),
        Err(e) => Err(Error::Usage(format!("{THREADS_ENV}: {e}"))),
    }
}

pub fn score(refs: &ComparisonSet, probes: &ComparisonSet, sim: Similarity, threads: usize) -> Result<ScoreSet> {
    let n = refs.len();
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return Ok(refs.score_rows(probes, 0..n, sim)?);
    }
    let chunk = n.div_ceil(threads);
    let parts: Vec<eum_core::Result<ScoreSet>> = thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|start| s.spawn(move || refs.score_rows(probes, start..(start + chunk).min(n), sim)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("scoring thread panicked")).collect()
    });
    let mut out = ScoreSet::default();
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use eum_core::{ApplyTo, CounterRng, EmbeddingRecord, Split};

    fn set(n: usize, seed: u64) -> ComparisonSet {
        let mut rng = CounterRng::new(seed, 0);
        let recs: Vec<EmbeddingRecord> = (0..n)
            .map(|i| EmbeddingRecord {
                identity: (i % 7) as u32,
                sample: i as u32,
                masked: false,
                split: Split::EvalRef,
                vector: (0..5).map(|_| rng.gaussian()).collect(),
            })
            .collect();
        ComparisonSet::prepare(&recs, None, ApplyTo::None).unwrap()
    }

    #[test]
    fn thread_count_does_not_change_scores() {
        let (r, p) = (set(23, 1), set(9, 2));
        let serial = score(&r, &p, Similarity::Cosine, 1).unwrap();
        assert_eq!(serial.genuine.len() + serial.imposter.len(), 23 * 9);
        for t in [2, 3, 8, 64] {
            assert_eq!(score(&r, &p, Similarity::Cosine, t).unwrap(), serial);
        }
    }
}
