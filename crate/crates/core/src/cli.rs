//! The `tempokit` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O error, 3 data or decoder
//! error. Failures print a single `error: ...` line on stderr.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::container::ContainerError;
use crate::eval::{
    evaluate, read_activation, segment_clips, split_train_test, ActivationSource, EvalError, EvalOptions,
    FileActivationSource, ModelActivationSource,
};
use crate::frontend::{compute_spectrogram, load_audio, FrontendConfig, FrontendError, AUGMENT_FPS};
use crate::model::{
    build_examples, init_model, load_weights, save_weights, train_with_observer, write_history_csv, forward,
    ForwardMode, ModelError, TcnConfig, TrainingConfig,
};
use crate::postproc::{run_pipeline, DecoderConfig, Pipeline, PostprocError};
use crate::synth::{write_dataset, ClickTrackSpec, OracleActivationSource, SynthError};

/// Environment variable capping evaluation worker threads.
pub const THREADS_ENV: &str = "TEMPOKIT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tempokit", version, about = "Tempo estimation with a multitask TCN")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the tempo of one audio file.
    Estimate(EstimateArgs),
    /// Score one or all methods on the test side of a manifest.
    Evaluate(EvaluateArgs),
    /// Train a model on the training side of a manifest.
    Train(TrainArgs),
    /// Generate click tracks, beat files and a manifest.
    Synth(SynthArgs),
    /// Dump the spectrogram of an audio file.
    Features(FeaturesArgs),
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    pub audio: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "direct")]
    pub method: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Beat activation file used instead of running a model.
    #[arg(long)]
    pub activation: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// A method name or "all".
    #[arg(long, default_value = "all")]
    pub method: String,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Use each entry's activation file instead of a model.
    #[arg(long, conflicts_with_all = ["model", "oracle"])]
    pub activations: bool,
    /// Use activations built from the annotated beats.
    #[arg(long, conflicts_with = "model")]
    pub oracle: bool,
    #[arg(long, default_value_t = 1234)]
    pub split_seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub split_ratio: f64,
    /// Evaluate every entry instead of the test split.
    #[arg(long)]
    pub all_clips: bool,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Add 95 and 105 fps spectrograms of every clip.
    #[arg(long)]
    pub fps_augment: bool,
    /// History CSV path (default: weights path with `.history.csv`).
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 1234)]
    pub split_seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub split_ratio: f64,
    /// Train on every entry instead of the training split.
    #[arg(long)]
    pub all_clips: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// One clip per value.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',', allow_negative_numbers = true)]
    pub bpm: Vec<f64>,
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    pub duration: f64,
    /// Beat timing jitter standard deviation in seconds.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "synthetic")]
    pub name: String,
    /// Also write oracle beat activations.
    #[arg(long)]
    pub activations: bool,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    pub audio: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub fps: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Contents of a `--config` file. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub frontend: FrontendConfig,
    pub decoder: DecoderConfig,
    pub training: TrainingConfig,
    pub model: TcnConfig,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Data(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Data(m) => m,
        }
    }
}

impl From<FrontendError> for CliError {
    fn from(e: FrontendError) -> Self {
        match e {
            FrontendError::FileNotFound(_) | FrontendError::Io(_) => CliError::Io(e.to_string()),
            FrontendError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Container(ContainerError::Io(_)) => CliError::Io(e.to_string()),
            ModelError::Frontend(f) => f.into(),
            ModelError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::MissingFile(_) | EvalError::Io { .. } => CliError::Io(e.to_string()),
            EvalError::UnknownMethod(_) => CliError::Usage(e.to_string()),
            EvalError::Frontend(f) => f.into(),
            EvalError::Model(m) => m.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PostprocError> for CliError {
    fn from(e: PostprocError) -> Self {
        match e {
            PostprocError::UnknownMethod(_) | PostprocError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidSpec(_) => CliError::Usage(e.to_string()),
            SynthError::Io(_) => CliError::Io(e.to_string()),
            SynthError::Frontend(f) => f.into(),
            SynthError::Eval(v) => v.into(),
            SynthError::InsufficientLength { .. } => CliError::Data(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile, CliError> {
    let Some(path) = path else { return Ok(ConfigFile::default()) };
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let cfg: ConfigFile =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    cfg.decoder.validate()?;
    cfg.training.validate()?;
    cfg.model.validate()?;
    Ok(cfg)
}

fn parse_methods(name: &str) -> Result<Vec<Pipeline>, CliError> {
    if name == "all" {
        Ok(Pipeline::ALL.to_vec())
    } else {
        Ok(vec![name.parse::<Pipeline>()?])
    }
}

fn finite(name: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Data(format!("{name} is not finite")))
    }
}

fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn cmd_estimate(args: &EstimateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let method: Pipeline = args.method.parse()?;
    let cfg = load_config(args.config.as_deref())?;
    let (beat, tempo) = match (&args.activation, &args.model) {
        (Some(path), _) if !method.needs_tempo_activation() => (read_activation(path, cfg.frontend.fps)?, None),
        (_, Some(model)) => {
            let weights = load_weights(model)?;
            let audio = load_audio(&args.audio)?;
            let spec = compute_spectrogram(&audio, &cfg.frontend)?;
            let out = forward(&weights, &spec, ForwardMode::Inference)?;
            (out.beat_activation, Some(out.tempo_activation))
        }
        (Some(_), None) => return Err(CliError::Usage(format!("method '{method}' needs --model"))),
        (None, None) => return Err(CliError::Usage("either --model or --activation is required".into())),
    };
    let est = run_pipeline(method, &beat, tempo.as_ref(), &cfg.decoder)?;
    let json = serde_json::json!({
        "clip": args.audio.display().to_string(),
        "method": method.name(),
        "bpm": finite("bpm", est.bpm)?,
        "confidence": finite("confidence", est.confidence)?,
    });
    writeln!(out, "{json}").map_err(|e| CliError::Io(e.to_string()))
}

fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let methods = parse_methods(&args.method)?;
    let cfg = load_config(args.config.as_deref())?;
    let threads = threads_from_env()?;
    let manifest = crate::eval::DatasetManifest::load(&args.manifest)?;
    let test_ids = if args.all_clips {
        manifest.ids()
    } else {
        split_train_test(&manifest, args.split_ratio, args.split_seed)?.test_ids
    };
    let model_source;
    let file_source;
    let oracle_source;
    let source: &dyn ActivationSource = if args.activations {
        file_source = FileActivationSource { default_fps: cfg.frontend.fps };
        &file_source
    } else if args.oracle {
        oracle_source = OracleActivationSource { fps: cfg.frontend.fps, ..Default::default() };
        &oracle_source
    } else {
        let path = args
            .model
            .as_ref()
            .ok_or_else(|| CliError::Usage("one of --model, --activations or --oracle is required".into()))?;
        model_source = ModelActivationSource { weights: load_weights(path)?, frontend: cfg.frontend.clone() };
        &model_source
    };
    let opts = EvalOptions { decoder: cfg.decoder.clone(), threads };
    let report = evaluate(&manifest, &test_ids, &methods, source, &opts)?;
    write_file(&args.out, report.to_json().as_bytes())?;
    write!(out, "{}", report.summary_table()).map_err(|e| CliError::Io(e.to_string()))
}

fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(args.config.as_deref())?;
    let mut training = cfg.training.clone();
    if let Some(e) = args.epochs {
        training.max_epochs = e;
    }
    if let Some(lr) = args.lr {
        training.learning_rate = lr;
    }
    if let Some(seed) = args.seed {
        training.seed = seed;
    }
    training.validate()?;
    let manifest = crate::eval::DatasetManifest::load(&args.manifest)?;
    let ids = if args.all_clips {
        manifest.ids()
    } else {
        split_train_test(&manifest, args.split_ratio, args.split_seed)?.train_ids
    };
    let fps_set: Vec<f64> = if args.fps_augment { AUGMENT_FPS.to_vec() } else { vec![cfg.frontend.fps] };
    let mut examples = Vec::new();
    for id in &ids {
        let entry = manifest.entry(id).expect("split ids come from the manifest");
        let annotation = manifest.annotation(entry)?;
        let audio = load_audio(manifest.resolve(&entry.audio))?;
        for segment in segment_clips(audio.duration(), &annotation, 30.0, 5.0) {
            let clip = audio.slice_seconds(segment.start, segment.end);
            examples.extend(build_examples(&clip, &segment.annotation, &cfg.frontend, &fps_set, cfg.model.tempo_bins)?);
        }
    }
    if examples.is_empty() {
        return Err(CliError::Data("no training examples (all clips shorter than 5 s?)".into()));
    }
    let model_cfg = TcnConfig { input_bands: cfg.frontend.num_bands, ..cfg.model.clone() };
    writeln!(out, "training clips: {}, training examples: {}", ids.len(), examples.len())
        .map_err(|e| CliError::Io(e.to_string()))?;
    let weights = init_model(&model_cfg, training.seed)?;
    let outcome = train_with_observer(weights, &examples, &training, &[], |r| {
        let _ = writeln!(out, "epoch {:>4}  loss {:.6}", r.epoch, r.train_loss);
    })?;
    save_weights(&outcome.weights, &args.out)?;
    let history_path = args.history.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    let mut csv = Vec::new();
    write_history_csv(&outcome.history, &mut csv).map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&history_path, &csv)?;
    writeln!(out, "best epoch {}; weights written to {}", outcome.best_epoch, args.out.display())
        .map_err(|e| CliError::Io(e.to_string()))
}

fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if let Some(b) = args.bpm.iter().find(|b| !(**b > 0.0 && **b < 1000.0)) {
        return Err(CliError::Usage(format!("--bpm must be in (0, 1000), got {b}")));
    }
    if !(args.duration > 0.0) {
        return Err(CliError::Usage(format!("--duration must be positive, got {}", args.duration)));
    }
    let specs: Vec<ClickTrackSpec> = args
        .bpm
        .iter()
        .enumerate()
        .map(|(i, &bpm)| ClickTrackSpec {
            bpm,
            duration: args.duration,
            timing_jitter_std: args.jitter,
            seed: args.seed.wrapping_add(i as u64),
            ..Default::default()
        })
        .collect();
    let manifest = write_dataset(&args.out_dir, &args.name, &specs, args.activations)?;
    writeln!(out, "wrote {} clips to {}", manifest.entries.len(), args.out_dir.display())
        .map_err(|e| CliError::Io(e.to_string()))
}

fn cmd_features(args: &FeaturesArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(args.config.as_deref())?;
    let frontend = match args.fps {
        Some(fps) => cfg.frontend.with_fps(fps),
        None => cfg.frontend.clone(),
    };
    let audio = load_audio(&args.audio)?;
    let spec = compute_spectrogram(&audio, &frontend)?;
    let mut text = format!("# frames={} bands={} fps={}\n", spec.num_frames(), spec.num_bands(), spec.fps());
    for t in 0..spec.num_frames() {
        let row: Vec<String> = spec.frame(t).iter().map(|v| format!("{v:.6}")).collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    write_file(&args.out, text.as_bytes())?;
    let json = serde_json::json!({ "frames": spec.num_frames(), "bands": spec.num_bands(), "fps": spec.fps() });
    writeln!(out, "{json}").map_err(|e| CliError::Io(e.to_string()))
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Synth(a) => cmd_synth(a, out),
        Command::Features(a) => cmd_features(a, out),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    1
                }
            };
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message().replace('\n', " "));
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("tempokit").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(run_args(&[]).0, 1);
        assert_eq!(run_args(&["bogus"]).0, 1);
        assert_eq!(run_args(&["estimate", "x.wav", "--method", "foo", "--activation", "a"]).0, 1);
        assert_eq!(run_args(&["synth", "--out-dir", "/tmp/x", "--bpm", "-5"]).0, 1);
        assert_eq!(run_args(&["estimate", "x.wav", "--unknown-flag"]).0, 1);
        assert_eq!(run_args(&["--help"]).0, 0);
    }

    #[test]
    fn missing_model_exit_2() {
        let (code, _, err) = run_args(&["estimate", "x.wav", "--method", "direct", "--model", "/nonexistent/w.tcnw"]);
        assert_eq!(code, 2);
        assert!(err.starts_with("error: "));
        assert_eq!(err.lines().count(), 1);
    }

    #[test]
    fn config_sections() {
        let cfg: ConfigFile = serde_json::from_str(r#"{"decoder": {"bpm_min": 50}, "training": {"max_epochs": 3}}"#).unwrap();
        assert_eq!(cfg.decoder.bpm_min, 50.0);
        assert_eq!(cfg.training.max_epochs, 3);
        assert_eq!(cfg.training.learning_rate, 0.0015);
        assert!(serde_json::from_str::<ConfigFile>(r#"{"decoder": {"nope": 1}}"#).is_err());
    }
}
