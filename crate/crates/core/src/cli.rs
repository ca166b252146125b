//! Command-line front end: thin orchestration over the library, writing a
//! [`RunManifest`] next to every artifact.
//!
//! Exit codes: [`EXIT_OK`], [`EXIT_NUMERICAL`] (divergence, degenerate data,
//! failed gradient check), [`EXIT_USAGE`] (bad flags, values or config
//! files), [`EXIT_IO`] (missing or unwritable files) and [`EXIT_FORMAT`]
//! (corrupt artifacts, incompatible checkpoints).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::checks::{gradcheck_suite, GRADCHECK_TOLERANCE};
use crate::dataio::{load_tilepack, save_tilepack, SceneSample, Split, TilePack, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::lossmetrics::{evaluate_split, MetricsReport};
use crate::model::{load_params, save_params, Checkpoint, EncoderKind, InputAblation};
use crate::synthgen::{generate_eval_split, generate_series, SceneConfig};
use crate::tensor::OpKind;
use crate::train::{
    finetune_full, mlr_baseline, pretrain_encoder, run_ablations, AblationData, StepRecord,
    TrainConfig, TrainOutcome,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_FORMAT: i32 = 4;

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

#[derive(Debug, Parser)]
#[command(
    name = "lai-fusion",
    version,
    about = "Pixel-wise LAI regression from radar and optical time series"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic train and evaluation tile packs.
    GenData(GenDataArgs),
    /// Compare every autodiff op against finite differences.
    Gradcheck(GradcheckArgs),
    /// Pretrain one encoder with its pixel-wise head.
    Pretrain(PretrainArgs),
    /// Fine-tune the full model from two pretrained encoders.
    Train(FinetuneArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Train and score every input-ablation variant.
    Ablate(AblateArgs),
    /// Fit and score the per-pixel linear baseline.
    Baseline(BaselineArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub tile_size: usize,
    #[arg(long, default_value_t = 8)]
    pub n_train: usize,
    /// Samples in each evaluation split.
    #[arg(long, default_value_t = 8)]
    pub n_eval: usize,
    #[arg(long, default_value_t = 0.2)]
    pub cloud_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.05)]
    pub drift: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// Corrupt one op's backward pass (negative control).
    #[arg(long, hide = true)]
    pub corrupt_op: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Published recipe: 100 epochs, batch 32.
    Paper,
    /// Single-core recipe: 12 epochs, batch 8.
    Desk,
}

#[derive(Debug, Args, Clone)]
pub struct TrainFlags {
    /// TOML file with `TrainConfig` fields; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Paper)]
    pub preset: Preset,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Keep the last epoch instead of selecting on the non_cloudy pack.
    #[arg(long)]
    pub no_validation: bool,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// 1 = radar branch, 2 = past-LAI branch.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub encoder: u8,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Zero the mask one-hot channels.
    #[arg(long)]
    pub no_masks: bool,
    /// Zero the seasonality features.
    #[arg(long)]
    pub no_seasonality: bool,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub enc1: PathBuf,
    #[arg(long)]
    pub enc2: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory, or a single tile pack.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "non_cloudy")]
    pub split: String,
    /// Also write the metrics row as CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Save every variant's checkpoint under this directory.
    #[arg(long)]
    pub save_checkpoints: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Provenance record written next to every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name.
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub scene_config: Option<SceneConfig>,
    /// Fully resolved training configuration.
    pub train_config: Option<TrainConfig>,
    pub inputs: IndexMap<String, PathBuf>,
    pub artifacts: Vec<PathBuf>,
}

impl RunManifest {
    fn new(command: &str, args: &[String]) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args: args.to_vec(),
            seed: None,
            scene_config: None,
            train_config: None,
            inputs: IndexMap::new(),
            artifacts: Vec::new(),
        }
    }

    fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("run manifest serializes");
        write_file(path, (text + "\n").as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// Maps a library error onto the process exit-code contract.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Geometry(_) => EXIT_USAGE,
        Error::Io { .. } => EXIT_IO,
        Error::Manifest { .. }
        | Error::VersionMismatch { .. }
        | Error::Truncated { .. }
        | Error::SizeMismatch { .. }
        | Error::DataCorruption(_)
        | Error::ParamMismatch(_)
        | Error::Contract(_) => EXIT_FORMAT,
        Error::TrainingDivergence { .. }
        | Error::AllMasked
        | Error::UndefinedVariance
        | Error::EmptySplit(_)
        | Error::DegenerateDataset(_)
        | Error::DegenerateFeatures(_)
        | Error::DegenerateStatistics(_) => EXIT_NUMERICAL,
    }
}

/// Parses `argv` (including the program name), runs the command and
/// returns the exit code. Normal output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    let args: Vec<String> = argv
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(cli.command, &args, None, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(
    command: Command,
    args: &[String],
    fixed: Option<&TrainConfig>,
    out: &mut dyn Write,
) -> Result<i32> {
    match command {
        Command::GenData(a) => cmd_gen_data(a, args, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Pretrain(a) => cmd_pretrain(a, args, fixed, out),
        Command::Train(a) => cmd_train(a, args, fixed, out),
        Command::Eval(a) => cmd_eval(a, args, out),
        Command::Ablate(a) => cmd_ablate(a, args, fixed, out),
        Command::Baseline(a) => cmd_baseline(a, args, out),
        Command::Replay(a) => cmd_replay(a, out),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

/// `preset`, overlaid with the config file, overlaid with flags.
pub fn resolve_train_config(flags: &TrainFlags) -> Result<TrainConfig> {
    let base = match flags.preset {
        Preset::Paper => TrainConfig::default(),
        Preset::Desk => TrainConfig::desk(),
    };
    let mut cfg = match &flags.config {
        None => base,
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let file: toml::Table = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let mut merged = toml::Table::try_from(&base).expect("config serializes");
            merge_tables(&mut merged, file);
            merged
                .try_into()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
    };
    if let Some(v) = flags.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = flags.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.lr0 {
        cfg.lr0 = v;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if flags.max_steps.is_some() {
        cfg.max_steps = flags.max_steps;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn pack_dir(data: &Path, split: Split) -> PathBuf {
    data.join(split.name())
}

fn load_split(data: &Path, split: Split) -> Result<Vec<SceneSample>> {
    let pack = load_tilepack(pack_dir(data, split))?;
    if pack.split != split {
        return Err(Error::DataCorruption(format!(
            "{} holds split {} (expected {split})",
            pack_dir(data, split).display(),
            pack.split
        )));
    }
    Ok(pack.samples)
}

fn load_validation(data: &Path, flags: &TrainFlags) -> Result<Option<Vec<SceneSample>>> {
    if flags.no_validation {
        return Ok(None);
    }
    load_split(data, Split::NonCloudy).map(Some)
}

fn cmd_gen_data(a: GenDataArgs, args: &[String], out: &mut dyn Write) -> Result<i32> {
    let cfg = SceneConfig {
        seed: a.seed,
        tile_size: a.tile_size,
        n_samples: a.n_train,
        cloud_fraction: a.cloud_fraction,
        s1_noise_std: a.noise,
        temporal_drift: a.drift,
        ..SceneConfig::default()
    };
    cfg.validate()?;
    if a.n_train == 0 || a.n_eval == 0 {
        return Err(Error::Config(
            "--n-train and --n-eval must be positive".into(),
        ));
    }
    let mut manifest = RunManifest::new("gen-data", args);
    manifest.seed = Some(a.seed);
    manifest.scene_config = Some(cfg.clone());
    let mut packs = vec![(Split::Train, generate_series(&cfg)?)];
    for split in Split::EVAL {
        packs.push((split, generate_eval_split(&cfg, split, a.n_eval)?));
    }
    for (split, samples) in packs {
        let dir = pack_dir(&a.out, split);
        let n = samples.len();
        save_tilepack(
            &dir,
            &TilePack {
                split,
                tile_size: a.tile_size,
                samples,
            },
        )?;
        say(
            out,
            format_args!("wrote {split}: {n} samples -> {}", dir.display()),
        )?;
        manifest.artifacts.push(dir);
    }
    manifest.write(&a.out.join(RUN_MANIFEST_FILE))?;
    Ok(EXIT_OK)
}

fn cmd_gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let fault = match &a.corrupt_op {
        None => None,
        Some(name) => Some(
            OpKind::from_name(name).ok_or_else(|| Error::Config(format!("unknown op `{name}`")))?,
        ),
    };
    if a.seeds == 0 {
        return Err(Error::Config("--seeds must be positive".into()));
    }
    let rows = gradcheck_suite(a.seeds, fault)?;
    let mut failed = Vec::new();
    for r in &rows {
        let status = if r.passed { "ok" } else { "FAIL" };
        say(
            out,
            format_args!("{:<22} max_rel_err={:.3e} {status}", r.name, r.max_rel_err),
        )?;
        if !r.passed {
            failed.push(r.name.as_str());
        }
    }
    if failed.is_empty() {
        say(
            out,
            format_args!(
                "gradcheck passed: {} checks below {GRADCHECK_TOLERANCE:e} over {} seeds",
                rows.len(),
                a.seeds
            ),
        )?;
        Ok(EXIT_OK)
    } else {
        say(out, format_args!("gradcheck FAILED: {}", failed.join(", ")))?;
        Ok(EXIT_NUMERICAL)
    }
}

/// Writes the checkpoint, its step log and run manifest into `dir`.
fn save_outcome(
    dir: &Path,
    outcome: &TrainOutcome,
    log: Vec<u8>,
    mut manifest: RunManifest,
    out: &mut dyn Write,
) -> Result<()> {
    save_params(dir, &outcome.checkpoint)?;
    write_file(&dir.join(TRAIN_LOG_FILE), &log)?;
    manifest.artifacts = vec![
        dir.join(MANIFEST_FILE),
        dir.join("params.bin"),
        dir.join(TRAIN_LOG_FILE),
    ];
    manifest.write(&dir.join(RUN_MANIFEST_FILE))?;
    let last = outcome.final_loss().unwrap_or(f64::NAN);
    let best = outcome
        .best_epoch
        .map(|e| format!(" best_epoch={e}"))
        .unwrap_or_default();
    say(
        out,
        format_args!(
            "steps={} final_loss={last}{best} -> {}",
            outcome.steps.len(),
            dir.display()
        ),
    )
}

fn step_logger(log: &mut Vec<u8>) -> impl FnMut(&StepRecord) + '_ {
    |r| {
        serde_json::to_writer(&mut *log, r).expect("step record serializes");
        log.push(b'\n');
    }
}

fn resolve(flags: &TrainFlags, fixed: Option<&TrainConfig>) -> Result<TrainConfig> {
    match fixed {
        Some(cfg) => {
            cfg.validate()?;
            Ok(cfg.clone())
        }
        None => resolve_train_config(flags),
    }
}

fn cmd_pretrain(
    a: PretrainArgs,
    args: &[String],
    fixed: Option<&TrainConfig>,
    out: &mut dyn Write,
) -> Result<i32> {
    let cfg = resolve(&a.train, fixed)?;
    let kind = if a.encoder == 1 {
        EncoderKind::Enc1
    } else {
        EncoderKind::Enc2
    };
    let ablation = InputAblation {
        zero_masks: a.no_masks,
        zero_seasonality: a.no_seasonality,
    };
    let train = load_split(&a.data, Split::Train)?;
    let validation = load_validation(&a.data, &a.train)?;
    let mut log = Vec::new();
    let outcome = pretrain_encoder(
        kind,
        &train,
        validation.as_deref(),
        &cfg,
        ablation,
        step_logger(&mut log),
    )?;
    let mut manifest = RunManifest::new("pretrain", args);
    manifest.seed = Some(cfg.seed);
    manifest.train_config = Some(cfg);
    manifest.inputs.insert("data".into(), a.data.clone());
    save_outcome(&a.out, &outcome, log, manifest, out)?;
    Ok(EXIT_OK)
}

fn cmd_train(
    a: FinetuneArgs,
    args: &[String],
    fixed: Option<&TrainConfig>,
    out: &mut dyn Write,
) -> Result<i32> {
    let cfg = resolve(&a.train, fixed)?;
    let enc1 = load_params(&a.enc1)?;
    let enc2 = load_params(&a.enc2)?;
    let train = load_split(&a.data, Split::Train)?;
    let validation = load_validation(&a.data, &a.train)?;
    let mut log = Vec::new();
    let outcome = finetune_full(
        &enc1,
        &enc2,
        &train,
        validation.as_deref(),
        &cfg,
        step_logger(&mut log),
    )?;
    let mut manifest = RunManifest::new("train", args);
    manifest.seed = Some(cfg.seed);
    manifest.train_config = Some(TrainConfig {
        model: enc1.config.clone(),
        ..cfg
    });
    manifest.inputs.insert("enc1".into(), a.enc1.clone());
    manifest.inputs.insert("enc2".into(), a.enc2.clone());
    manifest.inputs.insert("data".into(), a.data.clone());
    save_outcome(&a.out, &outcome, log, manifest, out)?;
    Ok(EXIT_OK)
}

fn cmd_eval(a: EvalArgs, args: &[String], out: &mut dyn Write) -> Result<i32> {
    let split: Split = a.split.parse()?;
    let ckpt: Checkpoint = load_params(&a.ckpt)?;
    let pack_path = if a.data.join(MANIFEST_FILE).is_file() {
        a.data.clone()
    } else {
        pack_dir(&a.data, split)
    };
    let samples = load_tilepack(&pack_path)?.samples;
    let row = evaluate_split(|s| ckpt.predict(s), &samples, split, "checkpoint")?;
    if let Some(path) = &a.out {
        let report = MetricsReport {
            rows: vec![row.clone()],
        };
        report.write(path)?;
        let mut manifest = RunManifest::new("eval", args);
        manifest.inputs.insert("ckpt".into(), a.ckpt.clone());
        manifest.inputs.insert("data".into(), pack_path);
        manifest.artifacts.push(path.clone());
        manifest.write(&sidecar(path))?;
    }
    say(out, format_args!("n_valid_pixels={}", row.n_valid_pixels))?;
    say(out, format_args!("rmse={} r2={}", row.rmse, row.r2))?;
    Ok(EXIT_OK)
}

/// Run-manifest path for a single-file artifact.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".run.json");
    path.with_file_name(name)
}

fn load_eval_splits(data: &Path) -> Result<Vec<(Split, Vec<SceneSample>)>> {
    Split::EVAL
        .iter()
        .map(|&s| Ok((s, load_split(data, s)?)))
        .collect()
}

fn cmd_ablate(
    a: AblateArgs,
    args: &[String],
    fixed: Option<&TrainConfig>,
    out: &mut dyn Write,
) -> Result<i32> {
    let cfg = resolve(&a.train, fixed)?;
    let data = AblationData {
        train: load_split(&a.data, Split::Train)?,
        validation: load_validation(&a.data, &a.train)?,
        eval: load_eval_splits(&a.data)?,
    };
    let outcome = run_ablations(&data, &cfg, |_, _| {})?;
    outcome.report.write(&a.out)?;
    let mut manifest = RunManifest::new("ablate", args);
    manifest.seed = Some(cfg.seed);
    manifest.train_config = Some(cfg);
    manifest.inputs.insert("data".into(), a.data.clone());
    manifest.artifacts.push(a.out.clone());
    if let Some(dir) = &a.save_checkpoints {
        for (name, ckpt) in &outcome.checkpoints {
            let path = dir.join(name);
            save_params(&path, ckpt)?;
            manifest.artifacts.push(path);
        }
    }
    manifest.write(&sidecar(&a.out))?;
    say(out, format_args!("{}", outcome.report.to_table()))?;
    Ok(EXIT_OK)
}

fn cmd_baseline(a: BaselineArgs, args: &[String], out: &mut dyn Write) -> Result<i32> {
    let train = load_split(&a.data, Split::Train)?;
    let model = mlr_baseline(&train)?;
    let mut report = MetricsReport::default();
    for (split, samples) in load_eval_splits(&a.data)? {
        report.rows.push(evaluate_split(
            |s| model.predict(s),
            &samples,
            split,
            "mlr",
        )?);
    }
    report.write(&a.out)?;
    let coef_path = a.out.with_extension("coefficients.json");
    let text = serde_json::to_string_pretty(&model).expect("model serializes");
    write_file(&coef_path, (text + "\n").as_bytes())?;
    let mut manifest = RunManifest::new("baseline", args);
    manifest.inputs.insert("data".into(), a.data.clone());
    manifest.artifacts = vec![a.out.clone(), coef_path];
    manifest.write(&sidecar(&a.out))?;
    say(out, format_args!("{}", report.to_table()))?;
    Ok(EXIT_OK)
}

fn cmd_replay(a: ReplayArgs, out: &mut dyn Write) -> Result<i32> {
    let manifest = RunManifest::read(&a.manifest)?;
    let argv = std::iter::once(manifest.tool.clone()).chain(manifest.args.iter().cloned());
    let cli = Cli::try_parse_from(argv).map_err(|e| Error::Manifest {
        path: a.manifest.clone(),
        reason: format!("recorded arguments do not parse: {e}"),
    })?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Error::Config(
            "a replay manifest cannot itself be a replay".into(),
        ));
    }
    execute(
        cli.command,
        &manifest.args,
        manifest.train_config.as_ref(),
        out,
    )
}

/// Writes `samples` as a pack for `split` under `data`, the layout every
/// command reads.
pub fn write_split(data: &Path, split: Split, samples: Vec<SceneSample>) -> Result<()> {
    let tile_size = samples
        .first()
        .map(|s| s.tile_size)
        .ok_or_else(|| Error::EmptySplit(split.name().into()))?;
    save_tilepack(
        pack_dir(data, split),
        &TilePack {
            split,
            tile_size,
            samples,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("lai-fusion").chain(args.iter().copied());
        let code = run(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_capture(&["bogus"]).0, EXIT_USAGE);
        assert_eq!(
            run_capture(&["pretrain", "--encoder", "3", "--data", "x", "--out", "y"]).0,
            EXIT_USAGE
        );
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("d");
        let (code, _, err) = run_capture(&[
            "gen-data",
            "--cloud-fraction",
            "1.5",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_USAGE, "{err}");
        assert!(!out.exists());
    }

    #[test]
    fn help_exits_0() {
        let (code, out, _) = run_capture(&["--help"]);
        assert_eq!(code, EXIT_OK);
        for cmd in [
            "gen-data",
            "gradcheck",
            "pretrain",
            "train",
            "eval",
            "ablate",
            "baseline",
        ] {
            assert!(out.contains(cmd), "{cmd} missing from help");
        }
    }

    #[test]
    fn missing_data_exits_io() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        let (code, _, _) = run_capture(&[
            "pretrain",
            "--encoder",
            "1",
            "--data",
            missing.to_str().unwrap(),
            "--out",
            "x",
        ]);
        assert_eq!(code, EXIT_IO);
    }

    #[test]
    fn config_file_layers_under_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "epochs = 7\nlr0 = 0.01\n[model]\nencoder_base = 4\n").unwrap();
        let flags = TrainFlags {
            config: Some(path.clone()),
            preset: Preset::Desk,
            epochs: None,
            batch_size: None,
            lr0: Some(0.02),
            seed: None,
            max_steps: None,
            no_validation: false,
        };
        let cfg = resolve_train_config(&flags).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.lr0, 0.02);
        assert_eq!(cfg.model.encoder_base, 4);
        assert_eq!(cfg.model.encoder_depth, 3);

        fs::write(&path, "epochz = 7\n").unwrap();
        let e = resolve_train_config(&flags).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_USAGE);
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(
            sidecar(Path::new("a/report.csv")),
            PathBuf::from("a/report.csv.run.json")
        );
    }
}
