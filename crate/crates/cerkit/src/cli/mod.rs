//! Command-line surface: corpus synthesis, feature extraction, training,
//! evaluation, analysis, and gradient self-verification.
//!
//! Exit codes are stable: 0 success, 2 config/validation, 3 missing input,
//! 4 capacity, 5 numerical divergence.

mod commands;
pub mod gradcheck;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::augment::AugmentError;
use crate::corpus::CorpusError;
use crate::features::FeatureError;
use crate::model::{CheckpointError, ModelError};
use crate::tensor::TensorError;
use crate::train::TrainError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_GENERIC: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_MISSING_INPUT: u8 = 3;
pub const EXIT_CAPACITY: u8 = 4;
pub const EXIT_DIVERGED: u8 = 5;

/// Conversational emotion recognition toolkit.
#[derive(Debug, Parser)]
#[command(name = "cerkit", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker count for per-file and per-conversation parallelism
    /// (default: CERKIT_JOBS or 1).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Force fully serial execution for bitwise reproducibility.
    #[arg(long, global = true)]
    pub strict_deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus on disk.
    Synth(SynthArgs),
    /// Extract MFCC features for a diarized WAV corpus.
    Featurize(FeaturizeArgs),
    /// Train on a corpus under one of the four data regimes.
    Train(TrainArgs),
    /// Evaluate a checkpoint on (a session of) a corpus.
    Eval(EvalArgs),
    /// Corpus analyses: emotional inertia, trigram table, label diversity.
    Analyze(AnalyzeArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthesis config JSON (defaults apply when omitted).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output corpus directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override any config field, e.g. --set inertia=0.95 (repeatable).
    #[arg(long = "set", value_name = "FIELD=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    /// Directory holding one `<conv>.wav` per conversation.
    #[arg(long)]
    pub wav_dir: PathBuf,
    /// Segments JSONL naming the conversations.
    #[arg(long)]
    pub segments: PathBuf,
    /// Output corpus directory.
    #[arg(long)]
    pub out: PathBuf,
    /// MFCC config JSON (defaults apply when omitted).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any MFCC config field, e.g. --set num_ceps=20 (repeatable).
    #[arg(long = "set", value_name = "FIELD=VALUE")]
    pub set: Vec<String>,
    /// Frame length in ms (shorthand for --set frame_length_ms=...).
    #[arg(long)]
    pub frame_ms: Option<u32>,
    /// Frame shift in ms (shorthand for --set frame_shift_ms=...).
    #[arg(long)]
    pub shift_ms: Option<u32>,
    /// Re-extract features even when the output file already exists.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory (from synth or featurize).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Model config JSON (defaults apply when omitted).
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// Trainer config JSON (defaults apply when omitted).
    #[arg(long)]
    pub trainer_config: Option<PathBuf>,
    /// Output run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Training data regime: isolated | conversations | dca-isolated |
    /// dca-conversations.
    #[arg(long)]
    pub regime: Option<String>,
    /// Train a single cross-validation fold.
    #[arg(long, conflicts_with = "all_folds")]
    pub fold: Option<usize>,
    /// Train every fold and pool the test reports.
    #[arg(long)]
    pub all_folds: bool,
    /// Override the trainer seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override any trainer config field, e.g. --set epochs=50 (repeatable).
    #[arg(long = "set", value_name = "FIELD=VALUE")]
    pub set: Vec<String>,
    /// Override any model config field, e.g. --set-model hidden_dim=128.
    #[arg(long = "set-model", value_name = "FIELD=VALUE")]
    pub set_model: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file to evaluate.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus directory.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory for the reports.
    #[arg(long)]
    pub out: PathBuf,
    /// Restrict evaluation to one session.
    #[arg(long)]
    pub session: Option<String>,
    /// Print a per-class f1 row to stdout.
    #[arg(long)]
    pub per_class: bool,
    /// Evaluation window length in frames (0 = whole conversation).
    #[arg(long, default_value_t = 2048)]
    pub chunk_len: usize,
    /// Overlap between evaluation windows.
    #[arg(long, default_value_t = 0)]
    pub chunk_overlap: usize,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Corpus directory.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory for the CSV reports.
    #[arg(long)]
    pub out: PathBuf,
    /// Also report mean label-diversity entropy for training windows of this
    /// length under each windowing regime.
    #[arg(long)]
    pub windows: Option<usize>,
    /// Sample count for the windowed diversity estimate.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// Seed for the windowed diversity estimate.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Emit machine-readable JSON instead of a table.
    #[arg(long)]
    pub json: bool,
    /// Self-test hook: inject an error into the named check and verify the
    /// failure path reports it.
    #[arg(long, value_name = "CHECK")]
    pub perturb: Option<String>,
}

/// Record of one CLI run, written into the artifact directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub resolved_config: serde_json::Value,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_fingerprint: Option<String>,
    pub artifacts: Vec<String>,
    pub strict_deterministic: bool,
    pub wall_time_s: f64,
}

/// CLI-level error carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn missing(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_MISSING_INPUT,
            message: message.into(),
        }
    }
}

fn io_code(err: &std::io::Error) -> u8 {
    if err.kind() == std::io::ErrorKind::NotFound {
        EXIT_MISSING_INPUT
    } else {
        EXIT_GENERIC
    }
}

fn tensor_code(err: &TensorError) -> u8 {
    match err {
        TensorError::IndexOutOfRange { .. } => EXIT_CAPACITY,
        TensorError::NonDeterministic => EXIT_DIVERGED,
        _ => EXIT_CONFIG,
    }
}

fn corpus_code(err: &CorpusError) -> u8 {
    match err {
        CorpusError::Io(e) => io_code(e),
        CorpusError::SpeakerCapacity { .. } => EXIT_CAPACITY,
        CorpusError::Feature(f) => feature_code(f),
        CorpusError::MissingFeatures { .. } => EXIT_MISSING_INPUT,
        _ => EXIT_CONFIG,
    }
}

fn feature_code(err: &FeatureError) -> u8 {
    match err {
        FeatureError::Io(e) => io_code(e),
        FeatureError::NonFinite { .. } => EXIT_DIVERGED,
        _ => EXIT_CONFIG,
    }
}

fn model_code(err: &ModelError) -> u8 {
    match err {
        ModelError::Capacity { .. } => EXIT_CAPACITY,
        ModelError::Tensor(t) => tensor_code(t),
        ModelError::Checkpoint(CheckpointError::Io(e)) => io_code(e),
        _ => EXIT_CONFIG,
    }
}

fn augment_code(err: &AugmentError) -> u8 {
    match err {
        AugmentError::Corpus(c) => corpus_code(c),
        _ => EXIT_CONFIG,
    }
}

fn train_code(err: &TrainError) -> u8 {
    match err {
        TrainError::Corpus(c) => corpus_code(c),
        TrainError::Augment(a) => augment_code(a),
        TrainError::Model(m) => model_code(m),
        TrainError::Tensor(t) => tensor_code(t),
        TrainError::Diverged { .. } => EXIT_DIVERGED,
        TrainError::Validation { .. } => EXIT_CONFIG,
    }
}

impl From<CorpusError> for CliError {
    fn from(err: CorpusError) -> Self {
        CliError {
            code: corpus_code(&err),
            message: err.to_string(),
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(err: FeatureError) -> Self {
        CliError {
            code: feature_code(&err),
            message: err.to_string(),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(err: ModelError) -> Self {
        CliError {
            code: model_code(&err),
            message: err.to_string(),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(err: TrainError) -> Self {
        CliError {
            code: train_code(&err),
            message: err.to_string(),
        }
    }
}

impl From<AugmentError> for CliError {
    fn from(err: AugmentError) -> Self {
        CliError {
            code: augment_code(&err),
            message: err.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError {
            code: io_code(&err),
            message: err.to_string(),
        }
    }
}

/// Load a JSON config (or take defaults) and apply `--set field=value`
/// overrides. Flags win over the file.
pub fn resolve_config<T>(path: Option<&std::path::Path>, sets: &[String]) -> Result<T, CliError>
where
    T: serde::de::DeserializeOwned + serde::Serialize + Default,
{
    let mut value: serde_json::Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError {
                code: io_code(&e),
                message: format!("cannot read {}: {e}", p.display()),
            })?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("cannot parse {}: {e}", p.display())))?
        }
        None => serde_json::to_value(T::default()).expect("default config serializes"),
    };
    for assignment in sets {
        let (field, raw) = assignment.split_once('=').ok_or_else(|| {
            CliError::config(format!("override {assignment:?} is not FIELD=VALUE"))
        })?;
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut slot = &mut value;
        let mut parts = field.split('.').peekable();
        while let Some(part) = parts.next() {
            let obj = slot.as_object_mut().ok_or_else(|| {
                CliError::config(format!("override path {field:?} does not address an object"))
            })?;
            if parts.peek().is_none() {
                obj.insert(part.to_string(), parsed.clone());
                break;
            }
            slot = obj
                .entry(part.to_string())
                .or_insert_with(|| serde_json::Value::Object(Default::default()));
        }
    }
    serde_json::from_value(value.clone()).map_err(|e| {
        CliError::config(format!("invalid config after overrides: {e} (config: {value})"))
    })
}

/// Effective worker count: flag, then CERKIT_JOBS, then 1; strict mode
/// forces 1.
pub fn effective_jobs(cli_jobs: Option<usize>, strict: bool) -> usize {
    if strict {
        return 1;
    }
    cli_jobs
        .or_else(|| {
            std::env::var("CERKIT_JOBS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1)
        .max(1)
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version with its own formatting
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("error: {}", err.message);
            err.code
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let started = Instant::now();
    let jobs = effective_jobs(cli.jobs, cli.strict_deterministic);
    let ctx = commands::Ctx {
        jobs,
        strict_deterministic: cli.strict_deterministic,
        started,
    };
    match cli.command {
        Command::Synth(args) => commands::synth(&ctx, args),
        Command::Featurize(args) => commands::featurize(&ctx, args),
        Command::Train(args) => commands::train(&ctx, args),
        Command::Eval(args) => commands::eval(&ctx, args),
        Command::Analyze(args) => commands::analyze(&ctx, args),
        Command::Gradcheck(args) => commands::gradcheck_cmd(&ctx, args),
    }
}
