//! Command-line front end: `synth`, `train`, `evaluate` and `predict`.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::preprocess::{fit_standardization, prepare, prepare_all, InputsMode, StandardizationStats};
use crate::rnn::{load_checkpoint, save_checkpoint, CellKind, ModelParams};
use crate::signal_io::{
    load_manifest, load_record, load_split, save_manifest, save_record, write_atomic, DatasetManifest, Split,
};
use crate::staging::{predict_hypnogram, render_hypnogram_csv, write_hypnogram_csv};
use crate::synthgen::{generate, generate_manifest, sleep_fraction, SynthConfig};
use crate::training::{evaluate_sequences, history_csv, train_with_progress, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const HYPNOGRAM_DIR: &str = "hypnograms";

#[derive(Debug, Parser)]
#[command(name = "sleepwake", version, about = "Sleep/wake staging from 1 Hz heart rate and SpO2")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory (records and manifest).
    Synth(SynthArgs),
    /// Train a model and write checkpoint, history and run metadata.
    Train(TrainArgs),
    /// Score a checkpoint on one split; writes metrics and hypnograms.
    Evaluate(EvaluateArgs),
    /// Stage a single record file.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with generator settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of patients [default: 40].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub patients: Option<u64>,
    /// Shortest record, seconds [default: 3600].
    #[arg(long)]
    pub duration_min_s: Option<usize>,
    /// Longest record, seconds [default: 7200].
    #[arg(long)]
    pub duration_max_s: Option<usize>,
    /// Mean wake bout, 30-s windows [default: 5].
    #[arg(long)]
    pub wake_bout_mean_windows: Option<f64>,
    /// Mean sleep bout, 30-s windows [default: 14].
    #[arg(long)]
    pub sleep_bout_mean_windows: Option<f64>,
    /// Mean subject HR while awake, bpm [default: 70].
    #[arg(long)]
    pub hr_baseline_mean: Option<f64>,
    /// Between-subject HR std, bpm [default: 5].
    #[arg(long)]
    pub hr_baseline_std: Option<f64>,
    /// HR drop during sleep, bpm [default: 7].
    #[arg(long)]
    pub hr_sleep_drop: Option<f64>,
    /// HR noise std, bpm [default: 3].
    #[arg(long)]
    pub hr_noise_std: Option<f64>,
    /// HR quantization step, bpm [default: 3].
    #[arg(long)]
    pub hr_quantum: Option<f64>,
    /// SpO2 baseline, percent [default: 97].
    #[arg(long)]
    pub spo2_baseline: Option<f64>,
    /// Desaturation events per hour of sleep [default: 20].
    #[arg(long)]
    pub desat_rate_per_hour: Option<f64>,
    /// Smallest desaturation depth, percent [default: 4].
    #[arg(long)]
    pub desat_depth_min: Option<f64>,
    /// Largest desaturation depth, percent [default: 8].
    #[arg(long)]
    pub desat_depth_max: Option<f64>,
    /// Shortest desaturation decay, seconds [default: 20].
    #[arg(long)]
    pub desat_decay_min_s: Option<usize>,
    /// Longest desaturation decay, seconds [default: 40].
    #[arg(long)]
    pub desat_decay_max_s: Option<usize>,
    /// Shortest recovery, seconds [default: 5].
    #[arg(long)]
    pub desat_recovery_min_s: Option<usize>,
    /// Longest recovery, seconds [default: 10].
    #[arg(long)]
    pub desat_recovery_max_s: Option<usize>,
    /// SpO2 quantization step, percent [default: 1].
    #[arg(long)]
    pub spo2_quantum: Option<f64>,
    /// Chance that a recovery turns the next window into wake [default: 0.3].
    #[arg(long)]
    pub awakening_probability: Option<f64>,
    /// Dropout segments per hour [default: 2].
    #[arg(long)]
    pub dropout_rate_per_hour: Option<f64>,
    /// Shortest dropout, seconds [default: 10].
    #[arg(long)]
    pub dropout_min_s: Option<usize>,
    /// Longest dropout, seconds [default: 60].
    #[arg(long)]
    pub dropout_max_s: Option<usize>,
    /// Seed for generation and split assignment [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train/validation/test fractions.
    #[arg(long, num_args = 3, value_delimiter = ',', default_values_t = [0.5, 0.25, 0.25])]
    pub split_fractions: Vec<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CellArg {
    Gru,
    Lstm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InputsArg {
    Hr,
    #[value(name = "hr+spo2")]
    HrSpo2,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory or manifest file.
    #[arg(long)]
    pub data: PathBuf,
    /// Run output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON training configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Hidden units per direction [default: 256].
    #[arg(long, value_parser = ["64", "128", "256"])]
    pub hidden: Option<String>,
    /// Recurrent cell [default: gru].
    #[arg(long, value_enum)]
    pub cell: Option<CellArg>,
    /// Input channels [default: hr+spo2].
    #[arg(long, value_enum)]
    pub inputs: Option<InputsArg>,
    /// Training epochs [default: 100].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: Option<u64>,
    /// Sequences per mini-batch [default: 2].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: Option<u64>,
    /// Seed for initialization and batch order [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Adam learning rate [default: 0.0001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Global gradient-norm clip [default: off].
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Truncated BPTT length in steps [default: full sequence].
    #[arg(long)]
    pub bptt: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset directory or manifest file (must hold fitted statistics).
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint file or training run directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split to score: train, validation or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Dataset directory or manifest file providing the statistics.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint file or training run directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Record CSV to stage.
    #[arg(long)]
    pub record: PathBuf,
    /// Output hypnogram CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    data: String,
    config: &'a TrainConfig,
    standardization: &'a StandardizationStats,
    train_patients: Vec<&'a str>,
    validation_patients: Vec<&'a str>,
    best_epoch: usize,
    epochs_run: usize,
    wall_clock_seconds: f64,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Predict(a) => cmd_predict(&a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(MANIFEST_FILE)
    } else {
        data.to_path_buf()
    }
}

fn checkpoint_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(CHECKPOINT_FILE)
    } else {
        path.to_path_buf()
    }
}

macro_rules! override_fields {
    ($cfg:expr, $args:expr, $($field:ident),* $(,)?) => {
        $( if let Some(v) = $args.$field { $cfg.$field = v; } )*
    };
}

pub fn synth_config(a: &SynthArgs) -> Result<SynthConfig> {
    let mut cfg = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(p) = a.patients {
        cfg.patients = p as usize;
    }
    override_fields!(
        cfg,
        a,
        duration_min_s,
        duration_max_s,
        wake_bout_mean_windows,
        sleep_bout_mean_windows,
        hr_baseline_mean,
        hr_baseline_std,
        hr_sleep_drop,
        hr_noise_std,
        hr_quantum,
        spo2_baseline,
        desat_rate_per_hour,
        desat_depth_min,
        desat_depth_max,
        desat_decay_min_s,
        desat_decay_max_s,
        desat_recovery_min_s,
        desat_recovery_max_s,
        spo2_quantum,
        awakening_probability,
        dropout_rate_per_hour,
        dropout_min_s,
        dropout_max_s,
        seed,
    );
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = synth_config(a)?;
    let fractions: [f64; 3] = a
        .split_fractions
        .as_slice()
        .try_into()
        .map_err(|_| Error::Config("--split-fractions takes three values".into()))?;
    let records = generate(&cfg)?;
    let mut manifest = generate_manifest(&records, fractions, cfg.seed)?;
    manifest.root = a.out.clone();
    create_dir(&a.out.join("records"))?;
    for r in &records {
        save_record(r, &manifest.record_path(&r.patient_id).expect("generated id"))?;
    }
    save_manifest(&manifest, &a.out.join(MANIFEST_FILE))?;
    let mut cfg_json = serde_json::to_string_pretty(&cfg).expect("config serializes");
    cfg_json.push('\n');
    write_atomic(&a.out.join("synth_config.json"), cfg_json.as_bytes())?;

    println!("wrote {} records to {}", records.len(), a.out.display());
    for split in [Split::Train, Split::Validation, Split::Test] {
        let ids = manifest.ids(split);
        let subset: Vec<_> = records
            .iter()
            .filter(|r| ids.contains(&r.patient_id.as_str()))
            .cloned()
            .collect();
        println!(
            "{:<10} {:>4} patients, {:.1}% sleep windows",
            split.as_str(),
            subset.len(),
            100.0 * sleep_fraction(&subset)
        );
    }
    Ok(())
}

pub fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(h) = &a.hidden {
        cfg.hidden_size = h.parse().map_err(|_| Error::Config(format!("bad hidden size `{h}`")))?;
    }
    if let Some(c) = a.cell {
        cfg.cell_kind = match c {
            CellArg::Gru => CellKind::Gru,
            CellArg::Lstm => CellKind::Lstm,
        };
    }
    if let Some(i) = a.inputs {
        cfg.inputs_mode = match i {
            InputsArg::Hr => InputsMode::Hr,
            InputsArg::HrSpo2 => InputsMode::HrSpo2,
        };
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e as usize;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b as usize;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(lr) = a.lr {
        cfg.adam.learning_rate = lr;
    }
    if a.grad_clip.is_some() {
        cfg.grad_clip = a.grad_clip;
    }
    if a.bptt.is_some() {
        cfg.bptt_window = a.bptt;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads the manifest and fits (and persists) train-split statistics if the
/// manifest has none yet.
fn manifest_with_stats(data: &Path) -> Result<(DatasetManifest, StandardizationStats)> {
    let path = manifest_path(data);
    let mut manifest = load_manifest(&path)?;
    let stats = match manifest.standardization {
        Some(s) => s,
        None => {
            let s = fit_standardization(&load_split(&manifest, Split::Train)?)?;
            manifest.standardization = Some(s);
            save_manifest(&manifest, &path)?;
            log::info!("fitted standardization on the train split and saved it to {}", path.display());
            s
        }
    };
    Ok((manifest, stats))
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = train_config(a)?;
    let started = Instant::now();
    let (manifest, stats) = manifest_with_stats(&a.data)?;
    let train_set = prepare_all(&load_split(&manifest, Split::Train)?, &stats, cfg.inputs_mode)?;
    let val_set = prepare_all(&load_split(&manifest, Split::Validation)?, &stats, cfg.inputs_mode)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Manifest("train and validation splits must both be nonempty".into()));
    }
    create_dir(&a.out)?;

    let outcome = train_with_progress(&cfg, &train_set, &val_set, |r| {
        let kappa = r.val_kappa.map(|k| format!("{k:.4}")).unwrap_or_else(|| "n/a".into());
        println!(
            "epoch {:>3}  train loss {:.5}  val acc {:.3}%  val kappa {kappa}",
            r.epoch, r.train_loss, r.val_acc
        );
    })?;

    save_checkpoint(&outcome.best, &a.out.join(CHECKPOINT_FILE))?;
    write_atomic(&a.out.join(HISTORY_FILE), history_csv(&outcome.history).as_bytes())?;
    let meta = RunMetadata {
        tool: "sleepwake",
        version: env!("CARGO_PKG_VERSION"),
        command: "train",
        data: manifest_path(&a.data).display().to_string(),
        config: &cfg,
        standardization: &stats,
        train_patients: train_set.iter().map(|s| s.patient_id.as_str()).collect(),
        validation_patients: val_set.iter().map(|s| s.patient_id.as_str()).collect(),
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.history.len(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    let mut json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    json.push('\n');
    write_atomic(&a.out.join(METADATA_FILE), json.as_bytes())?;
    println!("best epoch {} written to {}", outcome.best_epoch, a.out.display());
    Ok(())
}

fn inputs_mode_for(params: &ModelParams) -> Result<InputsMode> {
    match params.input_size {
        1 => Ok(InputsMode::Hr),
        2 => Ok(InputsMode::HrSpo2),
        d => Err(Error::Shape(format!("checkpoint expects {d} input channels; only 1 or 2 are supported"))),
    }
}

fn fitted_stats(data: &Path) -> Result<(DatasetManifest, StandardizationStats)> {
    let manifest = load_manifest(&manifest_path(data))?;
    let stats = manifest.standardization.ok_or_else(|| {
        Error::Manifest("manifest has no standardization statistics; run `train` first".into())
    })?;
    Ok((manifest, stats))
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let split: Split = a.split.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
    let params = load_checkpoint(&checkpoint_path(&a.checkpoint))?;
    let mode = inputs_mode_for(&params)?;
    let (manifest, stats) = fitted_stats(&a.data)?;
    let seqs = prepare_all(&load_split(&manifest, split)?, &stats, mode)?;
    let (report, pairs) = evaluate_sequences(&params, &seqs)?;

    let hyp_dir = a.out.join(HYPNOGRAM_DIR);
    create_dir(&hyp_dir)?;
    for (reference, predicted) in &pairs {
        write_hypnogram_csv(reference, &hyp_dir.join(format!("{}.reference.csv", reference.patient_id)))?;
        write_hypnogram_csv(predicted, &hyp_dir.join(format!("{}.predicted.csv", predicted.patient_id)))?;
    }
    write_atomic(&a.out.join(METRICS_FILE), report.to_csv().as_bytes())?;

    let av = &report.averages;
    let show = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into());
    println!("{} patients on the {} split", report.rows.len(), split.as_str());
    println!(
        "acc {}  se {}  sp {}  prec {}  npv {}  kappa {}  E1 {} min  E2 {}%",
        show(av.acc.mean),
        show(av.se.mean),
        show(av.sp.mean),
        show(av.prec.mean),
        show(av.npv.mean),
        show(av.kappa.mean),
        show(av.e1_minutes.mean),
        show(av.e2_percent.mean)
    );
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let params = load_checkpoint(&checkpoint_path(&a.checkpoint))?;
    let mode = inputs_mode_for(&params)?;
    let (_, stats) = fitted_stats(&a.data)?;
    let record = load_record(&a.record)?;
    let seq = prepare(&record, &stats, mode)?;
    let hyp = predict_hypnogram(&params, &seq)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_atomic(&a.out, render_hypnogram_csv(&hyp).as_bytes())?;
    println!("TST_hat_min {}", hyp.total_sleep_minutes());
    Ok(())
}
