use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use eum_core::synth::{self, SplitFractions};
use eum_core::{LossKind, SynthSpec, TrainConfig, VerificationReport};

use crate::checkpoint;
use crate::embeddings::{self, Dataset};
use crate::error::{Error, IoContext, Result};
use crate::experiment::{self, Apply, Comparison, Setting};
use crate::manifest::{Manifest, Run};
use crate::output::{self, percent};
use crate::scoring;

#[derive(Debug, Parser)]
#[command(name = "eum", version, about = "Train and evaluate embedding unmasking models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic masked/unmasked embedding dataset.
    GenData(GenDataArgs),
    /// Train one EUM.
    Train(TrainArgs),
    /// Score one evaluation setting, with or without a model.
    Eval(EvalArgs),
    /// Baseline vs triplet vs SRT on the fm and mm settings.
    Compare(CompareArgs),
    /// Convert a dataset between the binary and CSV formats (by extension).
    Convert(ConvertArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Repeat the run described by a `<dataset>.json` sidecar.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub identities: Option<u32>,
    /// Unmasked samples per identity.
    #[arg(long)]
    pub unmasked: Option<u32>,
    /// Masked samples per identity.
    #[arg(long)]
    pub masked: Option<u32>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Per-coordinate noise around each identity prototype.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Blend weight toward the shared mask direction, in [0, 1].
    #[arg(long)]
    pub mask_strength: Option<f64>,
    #[arg(long)]
    pub mask_noise: Option<f64>,
    /// Train, val, eval_ref and eval_probe fractions.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    pub split: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset path; `.csv` selects the CSV format. The spec goes to `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Iterations at which the learning rate is divided, e.g. `1500,3000,4500`.
    #[arg(long, value_delimiter = ',')]
    pub lr_drops: Option<Vec<usize>>,
    #[arg(long)]
    pub lr_drop_factor: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub val_every: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
}

impl TrainFlags {
    fn is_empty(&self) -> bool {
        let TrainFlags { margin, batch_size, lr, lr_drops, lr_drop_factor, max_iters, val_every, patience } = self;
        margin.is_none()
            && batch_size.is_none()
            && lr.is_none()
            && lr_drops.is_none()
            && lr_drop_factor.is_none()
            && max_iters.is_none()
            && val_every.is_none()
            && patience.is_none()
    }

    fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = &self.$flag { cfg.$field = v.clone(); })*
            };
        }
        set!(margin => margin, batch_size => batch_size, lr => initial_lr, lr_drops => lr_drop_iters,
             lr_drop_factor => lr_drop_factor, max_iters => max_iters, val_every => val_every, patience => patience);
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Repeat the run described by a `manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_loss)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub setting: Option<Setting>,
    /// EUM checkpoint; without one the raw embeddings are scored.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub apply_to: Option<Apply>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

fn parse_loss(s: &str) -> std::result::Result<LossKind, String> {
    LossKind::parse(s).ok_or_else(|| format!("unknown loss {s:?} (expected triplet or srt)"))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Compare(a) => compare(a),
        Command::Convert(a) => convert(a),
    }
}

fn load_manifest(path: &Path) -> Result<Run> {
    Ok(output::read_json::<Manifest>(path)?.run)
}

fn exclusive(manifest: &Option<PathBuf>, other_flags: bool) -> Result<()> {
    if manifest.is_some() && other_flags {
        return Err(Error::Usage("--manifest cannot be combined with other run flags".into()));
    }
    Ok(())
}

fn wrong_manifest(path: &Path, want: &str) -> Error {
    Error::Usage(format!("{} is not a {want} manifest", path.display()))
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::Usage(format!("{flag} is required (or pass --manifest)")))
}

fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let flagged = a.identities.is_some()
        || a.unmasked.is_some()
        || a.masked.is_some()
        || a.dim.is_some()
        || a.sigma.is_some()
        || a.mask_strength.is_some()
        || a.mask_noise.is_some()
        || a.split.is_some()
        || a.seed.is_some();
    exclusive(&a.manifest, flagged)?;
    let spec = match &a.manifest {
        Some(path) => match load_manifest(path)? {
            Run::GenData { spec } => spec,
            _ => return Err(wrong_manifest(path, "gen-data")),
        },
        None => {
            let d = SynthSpec::default();
            let split = match a.split.as_deref() {
                Some(&[train, val, eval_ref, eval_probe]) => SplitFractions { train, val, eval_ref, eval_probe },
                Some(_) => return Err(Error::Usage("--split takes four fractions".into())),
                None => d.split,
            };
            SynthSpec {
                num_identities: a.identities.unwrap_or(d.num_identities),
                samples_unmasked: a.unmasked.unwrap_or(d.samples_unmasked),
                samples_masked: a.masked.unwrap_or(d.samples_masked),
                dim: a.dim.unwrap_or(d.dim),
                intra_class_sigma: a.sigma.unwrap_or(d.intra_class_sigma),
                mask_strength: a.mask_strength.unwrap_or(d.mask_strength),
                mask_noise_sigma: a.mask_noise.unwrap_or(d.mask_noise_sigma),
                seed: a.seed.unwrap_or(d.seed),
                split,
            }
        }
    };
    let records = synth::gen_dataset(&spec)?;
    let mut data = Dataset::new(spec.dim, records)?;
    embeddings::save(&a.out, &data)?;
    output::write_json(&sidecar(&a.out), &Manifest::new(Run::GenData { spec }))?;

    embeddings::quantize(&mut data);
    let p = synth::phenomenon_report(&data.records)?;
    println!("wrote {} records (d = {}) to {}", data.records.len(), data.dim, a.out.display());
    println!("           genuine    imposter");
    println!("ff      {:>10.4}  {:>10.4}", p.gmean_ff, p.imean_ff);
    println!("fm      {:>10.4}  {:>10.4}", p.gmean_fm, p.imean_fm);
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).at(dir)
}

fn train(a: TrainArgs) -> Result<()> {
    exclusive(&a.manifest, a.data.is_some() || a.loss.is_some() || a.seed.is_some() || !a.flags.is_empty())?;
    let (data_path, data, config) = match &a.manifest {
        Some(path) => match load_manifest(path)? {
            Run::Train { data, config } => {
                let loaded = embeddings::load(&data)?;
                (data, loaded, config)
            }
            _ => return Err(wrong_manifest(path, "train")),
        },
        None => {
            let data_path = required(a.data, "--data")?;
            let data = embeddings::load(&data_path)?;
            let mut cfg = TrainConfig::desk(data.dim, a.loss.unwrap_or(LossKind::Srt), a.seed.unwrap_or(0));
            a.flags.apply(&mut cfg);
            (data_path, data, cfg)
        }
    };
    config.validate()?;
    create_dir(&a.out)?;
    let (params, history) = experiment::train_quantized(&config, &data)?;
    checkpoint::write_checkpoint(&a.out.join("model.eum"), &params)?;
    output::write_history_csv(&a.out.join("history.csv"), &history)?;
    output::write_validation_csv(&a.out.join("validation.csv"), &history)?;
    output::write_json(&a.out.join("manifest.json"), &Manifest::new(Run::Train { data: data_path, config: config.clone() }))?;

    print_history(config.loss, &history);
    Ok(())
}

fn print_history(loss: LossKind, h: &eum_core::TrainHistory) {
    let (Some(first), Some(last)) = (h.iterations.first(), h.iterations.last()) else {
        println!("{}: no iterations run", loss.name());
        return;
    };
    println!(
        "{}: {} iterations{}, best validation loss {:.6} at iteration {}",
        loss.name(),
        last.iter + 1,
        if h.stopped_early { " (stopped early)" } else { "" },
        h.best_val_loss().unwrap_or(f64::NAN),
        h.best_iter,
    );
    println!("  mean d1 {:.4} -> {:.4}, mean d2 {:.4} -> {:.4}", first.mean_d1, last.mean_d1, first.mean_d2, last.mean_d2);
}

fn eval(a: EvalArgs) -> Result<()> {
    let flagged = a.data.is_some() || a.setting.is_some() || a.model.is_some() || a.apply_to.is_some();
    exclusive(&a.manifest, flagged)?;
    let (data_path, model_path, setting, apply) = match &a.manifest {
        Some(path) => match load_manifest(path)? {
            Run::Eval { data, model, setting, apply_to } => (data, model, setting, apply_to),
            _ => return Err(wrong_manifest(path, "eval")),
        },
        None => (
            required(a.data, "--data")?,
            a.model,
            a.setting.unwrap_or(Setting::Fm),
            a.apply_to.unwrap_or(Apply::Masked),
        ),
    };
    let data = embeddings::load(&data_path)?;
    let model = model_path.as_deref().map(checkpoint::read_checkpoint).transpose()?;
    let threads = scoring::threads_from_env()?;
    let ev = experiment::evaluate(&data, setting, model.as_ref(), apply, threads)?;

    create_dir(&a.out)?;
    output::write_json(&a.out.join("report.json"), &ev.report)?;
    output::write_roc_csv(&a.out.join("roc.csv"), &ev.roc)?;
    let run = Run::Eval { data: data_path, model: model_path, setting, apply_to: apply };
    output::write_json(&a.out.join("manifest.json"), &Manifest::new(run))?;

    let label = if model.is_some() && apply == Apply::Masked { "eum" } else { "raw" };
    print_table(&[(setting.name(), label, &ev.report)]);
    Ok(())
}

fn print_table(rows: &[(&str, &str, &VerificationReport)]) {
    println!("{:<8}{:<10}{:>10}{:>10}{:>10}{:>9}{:>9}{:>9}", "setting", "variant", "EER", "FMR100", "FMR1000", "G-mean", "I-mean", "FDR");
    for (setting, variant, r) in rows {
        println!(
            "{:<8}{:<10}{:>10}{:>10}{:>10}{:>9.4}{:>9.4}{:>9.4}",
            setting,
            variant,
            percent(r.eer),
            percent(r.fmr100),
            percent(r.fmr1000),
            r.g_mean,
            r.i_mean,
            r.fdr
        );
    }
}

fn compare(a: CompareArgs) -> Result<()> {
    exclusive(&a.manifest, a.data.is_some() || a.seed.is_some() || !a.flags.is_empty())?;
    let (data_path, data, triplet, srt) = match &a.manifest {
        Some(path) => match load_manifest(path)? {
            Run::Compare { data, triplet, srt } => {
                let loaded = embeddings::load(&data)?;
                (data, loaded, triplet, srt)
            }
            _ => return Err(wrong_manifest(path, "compare")),
        },
        None => {
            let data_path = required(a.data, "--data")?;
            let data = embeddings::load(&data_path)?;
            let seed = a.seed.unwrap_or(0);
            let mut cfgs = [LossKind::Triplet, LossKind::Srt].map(|loss| TrainConfig::desk(data.dim, loss, seed));
            cfgs.iter_mut().for_each(|c| a.flags.apply(c));
            let [triplet, srt] = cfgs;
            (data_path, data, triplet, srt)
        }
    };
    triplet.validate()?;
    srt.validate()?;
    let threads = scoring::threads_from_env()?;
    create_dir(&a.out)?;
    let cmp = experiment::compare(&data, &triplet, &srt, threads)?;
    write_comparison(&a.out, &cmp)?;
    output::write_json(&a.out.join("manifest.json"), &Manifest::new(Run::Compare { data: data_path, triplet, srt }))?;

    println!("baseline ff EER {}", percent(cmp.baseline_ff.eer));
    for m in &cmp.models {
        print_history(m.loss, &m.history);
    }
    let rows: Vec<_> = cmp.rows.iter().map(|r| (r.setting.name(), r.variant.name(), &r.report)).collect();
    print_table(&rows);
    Ok(())
}

/// `compare.csv` plus per-loss checkpoints and histories.
pub fn write_comparison(dir: &Path, cmp: &Comparison) -> Result<()> {
    experiment::write_compare_csv(&dir.join("compare.csv"), cmp)?;
    for m in &cmp.models {
        let name = m.loss.name();
        checkpoint::write_checkpoint(&dir.join(format!("model_{name}.eum")), &m.params)?;
        output::write_history_csv(&dir.join(format!("history_{name}.csv")), &m.history)?;
        output::write_validation_csv(&dir.join(format!("validation_{name}.csv")), &m.history)?;
    }
    Ok(())
}

fn convert(a: ConvertArgs) -> Result<()> {
    let data = embeddings::load(&a.input)?;
    embeddings::save(&a.output, &data)?;
    println!("converted {} records (d = {}) to {}", data.records.len(), data.dim, a.output.display());
    Ok(())
}
