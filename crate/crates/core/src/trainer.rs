//! Mini-batch SGD training of the EUM with early stopping.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::loss::{self, compute_distances, Branch, LossKind, LossResult, DEFAULT_MARGIN};
use crate::matrix::Matrix;
use crate::model::{EumParams, ParamGrads, DEFAULT_BN_EPSILON, DEFAULT_BN_MOMENTUM, DEFAULT_LEAKY_SLOPE};
use crate::record::{EmbeddingRecord, Split};
use crate::rng::CounterRng;
use crate::vector::{normalize_rows, normalize_rows_backward};

/// RNG stream for training batches. Independent of the loss kind.
pub const SAMPLE_STREAM: u64 = 0x5a3;
/// RNG stream for the frozen validation batches.
pub const VAL_STREAM: u64 = 0x7a1;

/// Early stopping requires an improvement of at least this much.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub margin: f64,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_drop_iters: Vec<usize>,
    pub lr_drop_factor: f64,
    pub max_iters: usize,
    pub val_every: usize,
    pub val_batches: usize,
    pub patience: usize,
    pub log_every: usize,
    pub seed: u64,
    pub dim: usize,
    pub leaky_slope: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl TrainConfig {
    /// Desk-scale defaults: batch 128, LR 0.5 over 5000 iterations, drops at
    /// 1.5k/3k/4.5k. The higher LR compensates for the 24× shorter schedule.
    pub fn desk(dim: usize, loss: LossKind, seed: u64) -> Self {
        Self {
            loss,
            margin: DEFAULT_MARGIN,
            batch_size: 128,
            initial_lr: 0.5,
            lr_drop_iters: alloc::vec![1500, 3000, 4500],
            lr_drop_factor: 10.0,
            max_iters: 5000,
            val_every: 500,
            val_batches: 4,
            patience: 3,
            log_every: 10,
            seed,
            dim,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            bn_epsilon: DEFAULT_BN_EPSILON,
            bn_momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    /// Full-scale schedule: batch 512, LR 0.1 divided by 10 at 30k/60k/90k.
    pub fn full_scale(dim: usize, loss: LossKind, seed: u64) -> Self {
        Self {
            batch_size: 512,
            initial_lr: 0.1,
            lr_drop_iters: alloc::vec![30_000, 60_000, 90_000],
            max_iters: 120_000,
            val_every: 10_000,
            log_every: 100,
            ..Self::desk(dim, loss, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.patience < 1 || self.val_every < 1 || self.val_batches < 1 || self.log_every < 1 {
            return bad("patience, val_every, val_batches and log_every must be positive");
        }
        if !(self.initial_lr > 0.0 && self.lr_drop_factor > 0.0) {
            return bad("learning rate and drop factor must be positive");
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad("margin must be finite and non-negative");
        }
        if self.lr_drop_iters.windows(2).any(|w| w[0] >= w[1]) {
            return bad("lr_drop_iters must be strictly increasing");
        }
        if self.dim == 0 {
            return Err(Error::InvalidDimension(0));
        }
        Ok(())
    }
}

/// `initial_lr / factor^k` where `k` counts drop points `≤ iteration`.
pub fn lr_at(iteration: usize, cfg: &TrainConfig) -> f64 {
    let drops = cfg.lr_drop_iters.iter().filter(|&&it| it <= iteration).count();
    cfg.initial_lr / libm::pow(cfg.lr_drop_factor, drops as f64)
}

pub fn sgd_step(params: &mut EumParams, grads: &ParamGrads, lr: f64) -> Result<()> {
    params.sgd_step(grads, lr)
}

/// Indices into the sampled record slice for one triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripletRow {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Anchors are masked (pre-EUM), positives unmasked of the same identity,
/// negatives masked of a different identity.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub anchors: Matrix,
    pub positives: Matrix,
    pub negatives: Matrix,
    pub anchor_identities: Vec<u32>,
    pub negative_identities: Vec<u32>,
    pub rows: Vec<TripletRow>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone)]
struct IdentityPool {
    identity: u32,
    masked: Vec<usize>,
    unmasked: Vec<usize>,
}

/// Draws triplets from a fixed record collection.
#[derive(Debug, Clone)]
pub struct TripletSampler<'a> {
    records: &'a [EmbeddingRecord],
    dim: usize,
    pools: Vec<IdentityPool>,
    /// `(pool, record)` for every masked record.
    anchors: Vec<(usize, usize)>,
}

impl<'a> TripletSampler<'a> {
    pub fn new(records: &'a [EmbeddingRecord]) -> Result<Self> {
        let dim = records.first().map(|r| r.dim()).ok_or(Error::InsufficientIdentities(0))?;
        let mut by_id: BTreeMap<u32, IdentityPool> = BTreeMap::new();
        for (idx, r) in records.iter().enumerate() {
            if r.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: r.dim() });
            }
            let pool = by_id.entry(r.identity).or_insert_with(|| IdentityPool {
                identity: r.identity,
                masked: Vec::new(),
                unmasked: Vec::new(),
            });
            if r.masked {
                pool.masked.push(idx);
            } else {
                pool.unmasked.push(idx);
            }
        }
        if by_id.len() < 2 {
            return Err(Error::InsufficientIdentities(by_id.len()));
        }
        if let Some(p) = by_id.values().find(|p| p.masked.is_empty() || p.unmasked.is_empty()) {
            return Err(Error::MissingPairForIdentity(p.identity));
        }
        let pools: Vec<IdentityPool> = by_id.into_values().collect();
        let anchors = pools
            .iter()
            .enumerate()
            .flat_map(|(pi, p)| p.masked.iter().map(move |&ri| (pi, ri)))
            .collect();
        Ok(Self { records, dim, pools, anchors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_identities(&self) -> usize {
        self.pools.len()
    }

    pub fn sample(&self, batch_size: usize, rng: &mut CounterRng) -> TripletBatch {
        let mut rows = Vec::with_capacity(batch_size);
        let mut anchor_identities = Vec::with_capacity(batch_size);
        let mut negative_identities = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let (pool_idx, anchor) = self.anchors[rng.below(self.anchors.len())];
            let pool = &self.pools[pool_idx];
            let positive = pool.unmasked[rng.below(pool.unmasked.len())];
            let mut other = rng.below(self.pools.len() - 1);
            if other >= pool_idx {
                other += 1;
            }
            let neg_pool = &self.pools[other];
            let negative = neg_pool.masked[rng.below(neg_pool.masked.len())];
            rows.push(TripletRow { anchor, positive, negative });
            anchor_identities.push(pool.identity);
            negative_identities.push(neg_pool.identity);
        }
        let gather = |pick: fn(&TripletRow) -> usize| {
            let mut data = Vec::with_capacity(batch_size * self.dim);
            for row in &rows {
                data.extend_from_slice(&self.records[pick(row)].vector);
            }
            Matrix::from_vec(batch_size, self.dim, data).expect("rows share the sampler dimension")
        };
        TripletBatch {
            anchors: gather(|r| r.anchor),
            positives: gather(|r| r.positive),
            negatives: gather(|r| r.negative),
            anchor_identities,
            negative_identities,
            rows,
        }
    }
}

pub fn sample_triplets(dataset: &[EmbeddingRecord], batch_size: usize, rng: &mut CounterRng) -> Result<TripletBatch> {
    Ok(TripletSampler::new(dataset)?.sample(batch_size, rng))
}

/// Mean loss over frozen validation batches, in inference mode.
pub fn validate(params: &EumParams, val_set: &[TripletBatch], kind: LossKind, margin: f64) -> Result<f64> {
    if val_set.is_empty() {
        return Err(Error::EmptyValidationSet);
    }
    let mut total = 0.0;
    for batch in val_set {
        let out = params.unmask(&batch.anchors)?;
        let dist = compute_distances(&out, &batch.positives, &batch.negatives)?;
        total += loss::loss(kind, &dist, margin)?.loss;
    }
    Ok(total / val_set.len() as f64)
}

/// Loss and exact gradients for one batch through the whole pipeline:
/// input normalization → EUM in train mode → output normalization → loss.
/// `grads.input` is with respect to the raw, unnormalized anchors. Updates
/// the BN running statistics like any train-mode forward pass.
pub fn pipeline_gradients(
    params: &mut EumParams,
    anchors: &Matrix,
    positives: &Matrix,
    negatives: &Matrix,
    kind: LossKind,
    margin: f64,
) -> Result<(LossResult, ParamGrads)> {
    let input = normalize_rows(anchors)?;
    let (out, cache) = params.forward_train(&input)?;
    let dist = compute_distances(&out, positives, negatives)?;
    let result = loss::loss(kind, &dist, margin)?;
    let grad_out = result.grad_anchor_out.as_ref().ok_or(Error::CacheMismatch)?;
    let mut grads = params.backward(&cache, grad_out)?;
    grads.input = normalize_rows_backward(anchors, &grads.input)?;
    Ok((result, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLog {
    pub iter: usize,
    pub loss: f64,
    pub mean_d1: f64,
    pub mean_d2: f64,
    pub mean_d3: f64,
    pub branch: Branch,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationLog {
    pub iter: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub iterations: Vec<IterationLog>,
    /// The first entry (iteration 0) scores the initial parameters.
    pub validations: Vec<ValidationLog>,
    pub best_iter: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.validations.iter().map(|v| v.loss).reduce(f64::min)
    }
}

pub fn train(cfg: &TrainConfig, dataset: &[EmbeddingRecord]) -> Result<(EumParams, TrainHistory)> {
    train_observed(cfg, dataset, |_, _| {})
}

/// Like [`train`], calling `observer(iteration, batch)` for every training batch.
pub fn train_observed<F>(cfg: &TrainConfig, dataset: &[EmbeddingRecord], mut observer: F) -> Result<(EumParams, TrainHistory)>
where
    F: FnMut(usize, &TripletBatch),
{
    cfg.validate()?;
    let mut params = EumParams::init(cfg.dim, cfg.seed, cfg.leaky_slope, cfg.bn_epsilon, cfg.bn_momentum)?;
    let mut history = TrainHistory::default();
    if cfg.max_iters == 0 {
        return Ok((params, history));
    }

    let train_records: Vec<EmbeddingRecord> = dataset.iter().filter(|r| r.split == Split::Train).cloned().collect();
    let val_records: Vec<EmbeddingRecord> = dataset.iter().filter(|r| r.split == Split::Val).cloned().collect();
    let sampler = TripletSampler::new(&train_records)?;
    if sampler.dim() != cfg.dim {
        return Err(Error::DimensionMismatch { expected: cfg.dim, found: sampler.dim() });
    }
    if val_records.is_empty() {
        return Err(Error::EmptyValidationSet);
    }
    let val_sampler = TripletSampler::new(&val_records)?;
    let mut val_rng = CounterRng::new(cfg.seed, VAL_STREAM);
    let val_set: Vec<TripletBatch> =
        (0..cfg.val_batches).map(|_| val_sampler.sample(cfg.batch_size, &mut val_rng)).collect();

    let mut rng = CounterRng::new(cfg.seed, SAMPLE_STREAM);
    let mut best_loss = validate(&params, &val_set, cfg.loss, cfg.margin)?;
    let mut best_params = params.clone();
    let mut stale = 0;
    history.validations.push(ValidationLog { iter: 0, loss: best_loss });

    for iter in 0..cfg.max_iters {
        let batch = sampler.sample(cfg.batch_size, &mut rng);
        observer(iter, &batch);
        let (result, grads) =
            pipeline_gradients(&mut params, &batch.anchors, &batch.positives, &batch.negatives, cfg.loss, cfg.margin)?;
        let lr = lr_at(iter, cfg);
        params.sgd_step(&grads, lr)?;

        if iter % cfg.log_every == 0 || iter + 1 == cfg.max_iters {
            history.iterations.push(IterationLog {
                iter,
                loss: result.loss,
                mean_d1: result.means.d1,
                mean_d2: result.means.d2,
                mean_d3: result.means.d3,
                branch: result.branch,
                lr,
            });
        }

        if (iter + 1) % cfg.val_every == 0 {
            let v = validate(&params, &val_set, cfg.loss, cfg.margin)?;
            history.validations.push(ValidationLog { iter: iter + 1, loss: v });
            if v <= best_loss - MIN_IMPROVEMENT {
                best_loss = v;
                best_params = params.clone();
                history.best_iter = iter + 1;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }

    // Training may end between validation points; score the final state too.
    let last_val_iter = history.validations.last().map_or(0, |v| v.iter);
    let last_iter = history.iterations.last().map_or(0, |l| l.iter + 1);
    if !history.stopped_early && last_iter > last_val_iter {
        let v = validate(&params, &val_set, cfg.loss, cfg.margin)?;
        history.validations.push(ValidationLog { iter: last_iter, loss: v });
        if v <= best_loss - MIN_IMPROVEMENT {
            best_params = params;
            history.best_iter = last_iter;
        }
    }
    Ok((best_params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn record(identity: u32, sample: u32, masked: bool, split: Split, v: &[f64]) -> EmbeddingRecord {
        EmbeddingRecord { identity, sample, masked, split, vector: v.to_vec() }
    }

    fn toy(n_ids: u32, per: u32) -> Vec<EmbeddingRecord> {
        let mut out = Vec::new();
        let mut rng = CounterRng::new(42, 0);
        for id in 0..n_ids {
            for s in 0..per {
                for masked in [false, true] {
                    let v: Vec<f64> = (0..4).map(|_| rng.gaussian()).collect();
                    out.push(record(id, s, masked, Split::Train, &v));
                }
            }
        }
        out
    }

    #[test]
    fn lr_schedule_examples() {
        let cfg = TrainConfig::full_scale(8, LossKind::Srt, 0);
        assert_eq!(lr_at(0, &cfg), 0.1);
        assert!((lr_at(29_999, &cfg) - 0.1).abs() < 1e-18);
        assert!((lr_at(30_000, &cfg) - 0.01).abs() < 1e-15);
        assert!((lr_at(90_001, &cfg) - 0.0001).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for it in (0..100_000).step_by(997) {
            let lr = lr_at(it, &cfg);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn sampler_two_identities_forces_negative() {
        let data = toy(2, 3);
        let mut rng = CounterRng::new(1, 0);
        let b = sample_triplets(&data, 64, &mut rng).unwrap();
        for (a, n) in b.anchor_identities.iter().zip(&b.negative_identities) {
            assert_eq!(*n, 1 - *a);
        }
    }

    #[test]
    fn sampler_invariants_over_many_draws() {
        let data = toy(7, 2);
        let sampler = TripletSampler::new(&data).unwrap();
        let mut rng = CounterRng::new(9, 0);
        for _ in 0..1000 {
            let b = sampler.sample(4, &mut rng);
            for row in &b.rows {
                let (a, p, n) = (&data[row.anchor], &data[row.positive], &data[row.negative]);
                assert!(a.masked && !p.masked && n.masked);
                assert_eq!(a.identity, p.identity);
                assert_ne!(a.identity, n.identity);
            }
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let data = toy(5, 2);
        let a = sample_triplets(&data, 16, &mut CounterRng::new(3, 0)).unwrap();
        let b = sample_triplets(&data, 16, &mut CounterRng::new(3, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampler_errors() {
        let one = toy(1, 2);
        assert_eq!(TripletSampler::new(&one).unwrap_err(), Error::InsufficientIdentities(1));
        let mut data = toy(3, 1);
        data.retain(|r| !(r.identity == 2 && !r.masked));
        assert_eq!(TripletSampler::new(&data).unwrap_err(), Error::MissingPairForIdentity(2));
    }

    #[test]
    fn validate_examples() {
        let data = toy(4, 3);
        let sampler = TripletSampler::new(&data).unwrap();
        let mut rng = CounterRng::new(0, 0);
        let set: Vec<TripletBatch> = (0..3).map(|_| sampler.sample(8, &mut rng)).collect();
        let params = EumParams::with_defaults(4, 1).unwrap();
        let before = params.clone();
        for kind in [LossKind::Triplet, LossKind::Srt] {
            let a = validate(&params, &set, kind, 0.2).unwrap();
            let b = validate(&params, &set, kind, 0.2).unwrap();
            assert_eq!(a, b);
            assert!(a >= 0.0);
        }
        assert_eq!(params, before);
        assert_eq!(validate(&params, &[], LossKind::Srt, 0.2).unwrap_err(), Error::EmptyValidationSet);
    }

    #[test]
    fn validate_bounded_when_anchors_equal_positives() {
        let mut data = toy(4, 3);
        for i in 0..data.len() {
            if data[i].masked {
                let twin = data.iter().position(|r| !r.masked && r.identity == data[i].identity && r.sample == data[i].sample).unwrap();
                data[i].vector = data[twin].vector.clone();
            }
        }
        let sampler = TripletSampler::new(&data).unwrap();
        let mut rng = CounterRng::new(0, 0);
        let set: Vec<TripletBatch> = (0..2).map(|_| sampler.sample(8, &mut rng)).collect();
        let params = EumParams::with_defaults(4, 1).unwrap();
        let v = validate(&params, &set, LossKind::Srt, 0.2).unwrap();
        // Every hinge argument is at most 4 + m on either branch.
        assert!((0.0..=4.0 + 0.2).contains(&v));

        // With the identity map (EUM bypassed) d1 = 0, so the swap hinge is exactly max(m − μ(d3), 0).
        for b in &set {
            let d = compute_distances(&b.anchors, &b.positives, &b.negatives).unwrap();
            let r = loss::srt_loss(&d, 0.2).unwrap();
            if r.branch == Branch::Swap {
                assert!((r.loss - (0.2 - r.means.d3).max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::desk(4, LossKind::Srt, 0);
        assert!(cfg.validate().is_ok());
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
        cfg.batch_size = 4;
        cfg.lr_drop_iters = vec![10, 10];
        assert!(cfg.validate().is_err());
        cfg.lr_drop_iters = vec![];
        cfg.patience = 0;
        assert!(cfg.validate().is_err());
    }

    fn split_toy() -> Vec<EmbeddingRecord> {
        let mut data = toy(6, 4);
        for r in data.iter_mut() {
            if r.sample == 3 {
                r.split = Split::Val;
            }
        }
        data
    }

    #[test]
    fn zero_iterations_returns_init() {
        let mut cfg = TrainConfig::desk(4, LossKind::Srt, 3);
        cfg.max_iters = 0;
        let (p, h) = train(&cfg, &split_toy()).unwrap();
        assert_eq!(p, EumParams::with_defaults(4, 3).unwrap());
        assert!(h.iterations.is_empty() && h.validations.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_best_is_returned() {
        let mut cfg = TrainConfig::desk(4, LossKind::Srt, 3);
        cfg.batch_size = 8;
        cfg.max_iters = 200;
        cfg.val_every = 20;
        cfg.log_every = 1;
        let data = split_toy();
        let (p1, h1) = train(&cfg, &data).unwrap();
        let (p2, h2) = train(&cfg, &data).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(h1, h2);
        assert!(h1.iterations.windows(2).all(|w| w[0].iter < w[1].iter));

        let best = h1.best_val_loss().unwrap();
        let at_best = h1.validations.iter().find(|v| v.iter == h1.best_iter).unwrap();
        assert_eq!(at_best.loss, best);
        for v in h1.validations.iter().filter(|v| v.iter <= h1.best_iter) {
            assert!(at_best.loss <= v.loss);
        }
    }

    #[test]
    fn batch_sequence_is_loss_independent() {
        let data = split_toy();
        let mut cfg = TrainConfig::desk(4, LossKind::Srt, 5);
        cfg.batch_size = 4;
        cfg.max_iters = 30;
        cfg.val_every = 1000;
        let mut seqs: Vec<Vec<Vec<TripletRow>>> = Vec::new();
        for kind in [LossKind::Srt, LossKind::Triplet] {
            cfg.loss = kind;
            let mut seen = Vec::new();
            train_observed(&cfg, &data, |_, b| seen.push(b.rows.clone())).unwrap();
            seqs.push(seen);
        }
        assert_eq!(seqs[0], seqs[1]);
        assert_eq!(seqs[0].len(), 30);
    }

    #[test]
    fn missing_validation_split_is_an_error() {
        let cfg = TrainConfig::desk(4, LossKind::Srt, 0);
        assert_eq!(train(&cfg, &toy(3, 2)).unwrap_err(), Error::EmptyValidationSet);
    }
}
