//! Command-line front end: `synth`, `train`, `eval`, `infer`.

use crate::config::{apply_override, load_config, validate_config, ExperimentConfig};
use crate::data::{
    file_hash, generate_synthetic_dataset, load_volume, save_field, save_mask, Manifest, Partition, Split,
    SyntheticSpec, TruthRegistry,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_with, predict_volume, MetricReport};
use crate::generalist::{register_generalists, AdapterRegistry, GeneralistDescriptor};
use crate::trainer::{load_checkpoint, train, TrainData, TrainOutcome, TrainState};
use crate::volume::SegmentationMask;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Parser)]
#[command(name = "semisam", version, about = "Semi-supervised 3D segmentation with frozen generalist guidance")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its manifest.
    Synth(SynthArgs),
    /// Train a specialist.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Predict one volume.
    Infer(InferArgs),
}

fn parse_shape(s: &str) -> std::result::Result<[usize; 3], String> {
    let v: Vec<usize> = s.split(',').map(|x| x.trim().parse::<usize>().map_err(|e| e.to_string())).collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [n] => Ok([n; 3]),
        [a, b, c] => Ok([a, b, c]),
        _ => Err(format!("expected N or D,H,W, got `{s}`")),
    }
}

fn parse_range<T: std::str::FromStr + Copy>(s: &str) -> std::result::Result<[T; 2], String> {
    let v: Vec<T> = s.split(',').map(|x| x.trim().parse::<T>().map_err(|_| format!("bad value in `{s}`"))).collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [a] => Ok([a, a]),
        [a, b] => Ok([a, b]),
        _ => Err(format!("expected X or MIN,MAX, got `{s}`")),
    }
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown split `{s}`"))
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub n: usize,
    #[arg(long, default_value = "48", value_parser = parse_shape)]
    pub shape: [usize; 3],
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub labeled_count: usize,
    #[arg(long, default_value_t = 0)]
    pub val_count: usize,
    #[arg(long, default_value_t = 0)]
    pub test_count: usize,
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Blob radius as R or MIN,MAX voxels.
    #[arg(long, value_parser = parse_range::<f64>)]
    pub radius: Option<[f64; 2]>,
    #[arg(long, value_parser = parse_range::<usize>)]
    pub blobs: Option<[usize; 2]>,
    /// Unlabeled bright distractor blobs per case, as N or MIN,MAX.
    #[arg(long, value_parser = parse_range::<usize>)]
    pub distractors: Option<[usize; 2]>,
    #[arg(long, value_parser = parse_range::<f64>)]
    pub distractor_radius: Option<[f64; 2]>,
    #[arg(long)]
    pub distractor_mean: Option<f64>,
    /// Comma-separated distractor intensities cycled over cases.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub distractor_cycle: Option<Vec<f64>>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dot-path override `key=value`; repeatable, applied in order.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Dataset manifest (file or directory holding manifest.json).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Resume from this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Report CSV path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    /// Also write probability maps here.
    #[arg(long)]
    pub save_predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Probability map output (NIfTI).
    #[arg(long)]
    pub out: PathBuf,
    /// Binary mask output at threshold 0.5.
    #[arg(long)]
    pub mask_out: Option<PathBuf>,
}

/// Run record written into every run directory before training starts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: serde_json::Value,
    pub config_hash: String,
    pub code_hash: String,
    /// Hash over code and config together.
    pub run_hash: String,
    pub dataset: PathBuf,
    pub dataset_hash: String,
    pub started_unix: u64,
    pub resumed_from: Option<PathBuf>,
    pub outputs: RunOutputs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutputs {
    pub config: PathBuf,
    pub log: PathBuf,
    pub checkpoints: PathBuf,
    pub final_checkpoint: PathBuf,
}

/// Written once training has finished.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunCompletion {
    pub finished_unix: u64,
    pub iterations: u64,
    pub best_val: Option<(u64, f64)>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn code_hash() -> String {
    let exe = std::env::current_exe().ok().and_then(|p| std::fs::read(p).ok());
    let mut h = Sha256::new();
    h.update(env!("CARGO_PKG_VERSION"));
    if let Some(bytes) = exe {
        h.update(bytes);
    }
    crate::config::hex(&h.finalize())
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("manifest.json")
    } else {
        p.to_path_buf()
    }
}

fn write_json<T: Serialize>(v: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

/// Loads, overrides and validates a config. Without a file the overrides
/// alone must supply every required key.
pub fn resolve_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut raw = match &args.config {
        Some(p) => load_config(p)?,
        None => serde_json::Value::Object(Default::default()),
    };
    for o in &args.overrides {
        apply_override(&mut raw, o)?;
    }
    validate_config(&raw)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<Manifest> {
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        n_volumes: a.n,
        shape: a.shape,
        noise_std: a.noise_std.unwrap_or(d.noise_std),
        radius: a.radius.unwrap_or(d.radius),
        n_blobs: a.blobs.unwrap_or(d.n_blobs),
        n_distractors: a.distractors.unwrap_or(d.n_distractors),
        distractor_radius: a.distractor_radius.unwrap_or(d.distractor_radius),
        distractor_mean: a.distractor_mean.unwrap_or(d.distractor_mean),
        distractor_cycle: a.distractor_cycle.clone().unwrap_or_default(),
        ..d
    };
    let part = Partition { labeled: a.labeled_count, val: a.val_count, test: a.test_count };
    let m = generate_synthetic_dataset(&spec, a.seed, &a.out, part)?;
    log::info!(
        "wrote {} volumes to {} (train {} labeled / {} unlabeled, val {}, test {})",
        a.n,
        a.out.display(),
        m.train.labeled.len(),
        m.train.unlabeled.len(),
        m.val.labeled.len(),
        m.test.labeled.len()
    );
    Ok(m)
}

fn needs_truth(cfg: &ExperimentConfig) -> bool {
    cfg.generalists.iter().any(|g| matches!(g, GeneralistDescriptor::Oracle(_)))
}

pub fn cmd_train(a: &TrainArgs) -> Result<TrainOutcome> {
    let mut cfg = resolve_config(&a.cfg)?;
    let data = a.data.clone().or_else(|| cfg.data.clone().map(PathBuf::from)).ok_or_else(|| Error::config("data", "no dataset given"))?;
    let out = a.out.clone().or_else(|| cfg.out_dir.clone().map(PathBuf::from)).ok_or_else(|| Error::config("out_dir", "no output directory given"))?;
    cfg.data = Some(data.display().to_string());
    cfg.out_dir = Some(out.display().to_string());

    let mpath = manifest_path(&data);
    let manifest = Manifest::load(&mpath)?;
    let train_idx = manifest.index(Split::Train)?;
    let td = TrainData {
        labeled: train_idx.load_labeled()?,
        unlabeled: train_idx.load_unlabeled()?,
        val: manifest.index(Split::Val)?.load_labeled()?,
    };
    if td.unlabeled.is_empty() {
        return Err(Error::Data("training split has no unlabeled cases".into()));
    }
    let handles = if cfg.sam_enabled() {
        let truth = if needs_truth(&cfg) { manifest.truth_registry()? } else { TruthRegistry::new() };
        register_generalists(&cfg.generalists, Arc::new(truth), &AdapterRegistry::default())?
    } else {
        Vec::new()
    };
    let resume = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;

    std::fs::create_dir_all(&out)?;
    let config_path = out.join("config.json");
    let value = cfg.to_value();
    write_json(&value, &config_path)?;
    let code = code_hash();
    let config_hash = cfg.hash();
    let run = RunManifest {
        run_hash: crate::config::hex(&Sha256::digest(format!("{code}{config_hash}"))),
        config: value,
        config_hash,
        code_hash: code,
        dataset: mpath.clone(),
        dataset_hash: file_hash(&mpath)?,
        started_unix: now(),
        resumed_from: a.checkpoint.clone(),
        outputs: RunOutputs {
            config: config_path,
            log: out.join("log.csv"),
            checkpoints: out.join("checkpoints"),
            final_checkpoint: out.join("checkpoints").join("final.ckpt"),
        },
    };
    write_json(&run, &out.join("run_manifest.json"))?;

    let outcome = train(&cfg, &td, &handles, &out, resume)?;
    write_json(
        &RunCompletion { finished_unix: now(), iterations: outcome.state.t, best_val: outcome.best_val },
        &out.join("complete.json"),
    )?;
    log::info!("finished {} iterations in {}", outcome.state.t, out.display());
    Ok(outcome)
}

fn load_for_inference(cfg: &ConfigArgs, checkpoint: &Path) -> Result<(TrainState, [usize; 3])> {
    let state = load_checkpoint(checkpoint)?;
    let stride = if cfg.config.is_some() || !cfg.overrides.is_empty() {
        let c = resolve_config(cfg)?;
        state.check_compatible(&c)?;
        c.stride()
    } else {
        state.arch.patch.map(|p| (p / 2).max(1))
    };
    Ok((state, stride))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<MetricReport> {
    let (state, stride) = load_for_inference(&a.cfg, &a.checkpoint)?;
    let manifest = Manifest::load(&manifest_path(&a.data))?;
    let cases = manifest.index(a.split)?.load_labeled()?;
    if cases.is_empty() {
        return Err(Error::Data(format!("split {:?} has no labeled cases", a.split)));
    }
    if let Some(d) = &a.save_predictions {
        std::fs::create_dir_all(d)?;
    }
    let report = evaluate_with(&cases, 0.5, |c| {
        let p = predict_volume(&state.arch, &state.student, c.volume.data(), stride)?;
        if let Some(d) = &a.save_predictions {
            save_field(&p, c.volume.spacing(), &d.join(format!("{}_prob.nii.gz", c.id())))?;
        }
        Ok(p)
    })?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    report.write_csv(&a.out)?;
    log::info!(
        "{} cases: dice {:.4} jaccard {:.4} hd95 {:.3} asd {:.3}",
        report.cases.len(),
        report.mean.dice,
        report.mean.jaccard,
        report.mean.hd95,
        report.mean.asd
    );
    Ok(report)
}

pub fn cmd_infer(a: &InferArgs) -> Result<()> {
    let (state, stride) = load_for_inference(&a.cfg, &a.checkpoint)?;
    let vol = load_volume(&a.input)?;
    let p = predict_volume(&state.arch, &state.student, vol.z_scored().data(), stride)?;
    save_field(&p, vol.spacing(), &a.out)?;
    if let Some(m) = &a.mask_out {
        let mask = SegmentationMask::new(p.mapv(|v| u8::from(v >= 0.5)), vol.spacing(), vol.id())?;
        save_mask(&mask, m)?;
    }
    Ok(())
}

/// Caps the global thread pool from `SEMISAM_NUM_WORKERS`.
pub fn init_workers() -> Result<()> {
    if let Ok(v) = std::env::var("SEMISAM_NUM_WORKERS") {
        let n: usize = v.parse().map_err(|_| Error::Invalid(format!("SEMISAM_NUM_WORKERS=`{v}` is not a count")))?;
        // a pool may already exist when running in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    init_workers()?;
    match cli.command {
        Command::Synth(a) => cmd_synth(&a).map(drop),
        Command::Train(a) => cmd_train(&a).map(drop),
        Command::Eval(a) => cmd_eval(&a).map(drop),
        Command::Infer(a) => cmd_infer(&a),
    }
}
