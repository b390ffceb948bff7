//! Evaluation protocols and the baseline / triplet / SRT comparison.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use eum_core::metrics::{self, ComparisonSet, Roc, Similarity};
use eum_core::{trainer, ApplyTo, EmbeddingRecord, EumParams, LossKind, Split, TrainConfig, TrainHistory, VerificationReport};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::embeddings::Dataset;
use crate::error::{IoContext, Result};
use crate::scoring;

/// Which embeddings are compared: references come from `eval_ref`, probes
/// from `eval_probe`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// Unmasked references, unmasked probes.
    Ff,
    /// Unmasked references, masked probes.
    Fm,
    /// Masked references, masked probes.
    Mm,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::Ff => "ff",
            Setting::Fm => "fm",
            Setting::Mm => "mm",
        }
    }

    fn masked_sides(self) -> (bool, bool) {
        match self {
            Setting::Ff => (false, false),
            Setting::Fm => (false, true),
            Setting::Mm => (true, true),
        }
    }

    pub fn select(self, records: &[EmbeddingRecord]) -> (Vec<&EmbeddingRecord>, Vec<&EmbeddingRecord>) {
        let (ref_masked, probe_masked) = self.masked_sides();
        let pick = |split: Split, masked: bool| records.iter().filter(|r| r.split == split && r.masked == masked).collect();
        (pick(Split::EvalRef, ref_masked), pick(Split::EvalProbe, probe_masked))
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Serializable mirror of [`ApplyTo`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Apply {
    Masked,
    None,
}

impl From<Apply> for ApplyTo {
    fn from(a: Apply) -> Self {
        match a {
            Apply::Masked => ApplyTo::MaskedOnly,
            Apply::None => ApplyTo::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: VerificationReport,
    pub roc: Roc,
}

pub fn score_setting(
    data: &Dataset,
    setting: Setting,
    model: Option<&EumParams>,
    apply: Apply,
    sim: Similarity,
    threads: usize,
) -> Result<eum_core::ScoreSet> {
    if let Some(m) = model {
        checkpoint::ensure_dim(m, data.dim)?;
    }
    let (refs, probes) = setting.select(&data.records);
    let refs = ComparisonSet::prepare(refs, model, apply.into())?;
    let probes = ComparisonSet::prepare(probes, model, apply.into())?;
    scoring::score(&refs, &probes, sim, threads)
}

pub fn evaluate(data: &Dataset, setting: Setting, model: Option<&EumParams>, apply: Apply, threads: usize) -> Result<Evaluation> {
    let scores = score_setting(data, setting, model, apply, Similarity::Cosine, threads)?;
    Ok(Evaluation { report: metrics::report(&scores)?, roc: metrics::roc(&scores)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Baseline,
    Triplet,
    Srt,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Triplet => "triplet",
            Variant::Srt => "srt",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub setting: Setting,
    pub variant: Variant,
    pub report: VerificationReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub loss: LossKind,
    /// As stored in a checkpoint, i.e. rounded to `f32`.
    pub params: EumParams,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub baseline_ff: VerificationReport,
    pub rows: Vec<CompareRow>,
    pub models: Vec<TrainedModel>,
}

impl Comparison {
    pub fn row(&self, setting: Setting, variant: Variant) -> Option<&VerificationReport> {
        self.rows.iter().find(|r| r.setting == setting && r.variant == variant).map(|r| &r.report)
    }
}

pub fn train_quantized(cfg: &TrainConfig, data: &Dataset) -> Result<(EumParams, TrainHistory)> {
    let (mut params, history) = trainer::train(cfg, &data.records)?;
    checkpoint::quantize(&mut params);
    Ok((params, history))
}

/// Trains one model per config (triplet first, then SRT) and scores each
/// against the raw baseline on the fm and mm settings.
pub fn compare(data: &Dataset, triplet: &TrainConfig, srt: &TrainConfig, threads: usize) -> Result<Comparison> {
    let baseline_ff = evaluate(data, Setting::Ff, None, Apply::None, threads)?.report;
    let mut models = Vec::new();
    for cfg in [triplet, srt] {
        let (params, history) = train_quantized(cfg, data)?;
        models.push(TrainedModel { loss: cfg.loss, params, history });
    }
    let mut rows = Vec::new();
    for setting in [Setting::Fm, Setting::Mm] {
        let report = evaluate(data, setting, None, Apply::None, threads)?.report;
        rows.push(CompareRow { setting, variant: Variant::Baseline, report });
        for (m, variant) in models.iter().zip([Variant::Triplet, Variant::Srt]) {
            let report = evaluate(data, setting, Some(&m.params), Apply::Masked, threads)?.report;
            rows.push(CompareRow { setting, variant, report });
        }
    }
    Ok(Comparison { baseline_ff, rows, models })
}

pub const COMPARE_HEADER: [&str; 9] = ["setting", "variant", "eer", "fmr100", "fmr1000", "g_mean", "i_mean", "fdr", "auc"];

/// One `# baseline ff eer=…` comment line, then the table.
pub fn write_compare_csv(path: &Path, cmp: &Comparison) -> Result<()> {
    let mut file = fs::File::create(path).at(path)?;
    writeln!(file, "# baseline ff eer={}", cmp.baseline_ff.eer).at(path)?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(COMPARE_HEADER)?;
    for row in &cmp.rows {
        let r = &row.report;
        let mut rec = vec![row.setting.name().to_string(), row.variant.name().to_string()];
        rec.extend([r.eer, r.fmr100, r.fmr1000, r.g_mean, r.i_mean, r.fdr, r.auc].map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().at(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(identity: u32, sample: u32, masked: bool, split: Split) -> EmbeddingRecord {
        EmbeddingRecord { identity, sample, masked, split, vector: vec![1.0, identity as f64, sample as f64 + 1.0] }
    }

    #[test]
    fn settings_pick_splits_and_mask_flags() {
        let recs = vec![
            rec(0, 0, false, Split::EvalRef),
            rec(0, 0, true, Split::EvalRef),
            rec(0, 1, false, Split::EvalProbe),
            rec(0, 1, true, Split::EvalProbe),
            rec(0, 2, true, Split::Train),
        ];
        let key = |v: Vec<&EmbeddingRecord>| v.iter().map(|r| (r.sample, r.masked)).collect::<Vec<_>>();
        let (r, p) = Setting::Ff.select(&recs);
        assert_eq!((key(r), key(p)), (vec![(0, false)], vec![(1, false)]));
        let (r, p) = Setting::Fm.select(&recs);
        assert_eq!((key(r), key(p)), (vec![(0, false)], vec![(1, true)]));
        let (r, p) = Setting::Mm.select(&recs);
        assert_eq!((key(r), key(p)), (vec![(0, true)], vec![(1, true)]));
    }
}
