//! `fiqa`: dataset generation, encoder and quality-model training, scoring,
//! evaluation, retrieval and embedding export.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fiqa_core::dsl::Regime;
use fiqa_core::Error;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or missing input files.
    Usage(String),
    Io(String),
    Numeric(String),
    BadData(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::BadData(_) => 5,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::BadData(m) => write!(f, "bad input data: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io(_) => CliError::Io(msg),
            Error::NonFiniteLoss { .. } => CliError::Numeric(msg),
            Error::InvalidConfig(_) => CliError::Usage(msg),
            _ => CliError::BadData(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "fiqa", version, about = "Degradation-aware face image quality assessment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus overrides shared by every command.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML file with [data], [encoder], [model] and [retrieval] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set model.batch=8`; repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// Seed for every random stream of the command.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a procedural toy dataset with known degradations and MOS.
    GenData {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        /// Also write this many held-out retrieval queries under OUT/queries.
        #[arg(long)]
        queries: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a degradation encoder under one regime.
    TrainEncoder {
        #[arg(long)]
        regime: Regime,
        #[arg(long)]
        manifest: PathBuf,
        /// Clean Set S sources; defaults to the manifest's training images with mos > 0.9.
        #[arg(long)]
        clean_pool: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the quality model against a frozen encoder.
    TrainIqa {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        encoder_ckpt: PathBuf,
        /// Landmark JSON-lines file; defaults to landmarks.jsonl beside the manifest.
        #[arg(long)]
        landmarks: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score images; one JSON line (or CSV row) per image on stdout.
    Score {
        #[arg(long)]
        model_ckpt: PathBuf,
        #[arg(long)]
        encoder_ckpt: PathBuf,
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        image: Vec<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Score only this split of the manifest.
        #[arg(long)]
        split: Option<fiqa_core::data_io::Split>,
        #[arg(long)]
        landmarks: Option<PathBuf>,
        /// Directory for per-image confidence maps (PNG, raw f32 and JSON header).
        #[arg(long)]
        emit_confidence_map: Option<PathBuf>,
        #[arg(long, default_value = "json")]
        format: commands::ScoreFormat,
    },
    /// PLCC and SRCC of model predictions (or a predictions CSV) on one split.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: fiqa_core::data_io::Split,
        #[arg(long, requires = "encoder_ckpt", required_unless_present = "predictions")]
        model_ckpt: Option<PathBuf>,
        #[arg(long)]
        encoder_ckpt: Option<PathBuf>,
        /// CSV of `path,mos` rows, as written by `score --format csv`.
        #[arg(long, conflicts_with = "model_ckpt")]
        predictions: Option<PathBuf>,
        #[arg(long)]
        landmarks: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top-k degradation retrieval between two labelled manifests.
    Retrieve {
        #[arg(long)]
        encoder_ckpt: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write degradation representations of a manifest as TSV.
    ExportEmbeddings {
        #[arg(long)]
        encoder_ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData {
            n,
            size,
            queries,
            out,
            cfg,
        } => commands::gen_data(n, size, queries, &out, &cfg),
        Command::TrainEncoder {
            regime,
            manifest,
            clean_pool,
            iterations,
            learning_rate,
            out,
            cfg,
        } => commands::train_encoder(regime, &manifest, clean_pool.as_deref(), iterations, learning_rate, &out, &cfg),
        Command::TrainIqa {
            manifest,
            encoder_ckpt,
            landmarks,
            iterations,
            learning_rate,
            out,
            cfg,
        } => commands::train_iqa(&manifest, &encoder_ckpt, landmarks.as_deref(), iterations, learning_rate, &out, &cfg),
        Command::Score {
            model_ckpt,
            encoder_ckpt,
            image,
            manifest,
            split,
            landmarks,
            emit_confidence_map,
            format,
        } => commands::score(commands::ScoreArgs {
            model_ckpt,
            encoder_ckpt,
            images: image,
            manifest,
            split,
            landmarks,
            confidence_dir: emit_confidence_map,
            format,
        }),
        Command::Eval {
            manifest,
            split,
            model_ckpt,
            encoder_ckpt,
            predictions,
            landmarks,
            out,
        } => commands::eval(commands::EvalArgs {
            manifest,
            split,
            model_ckpt,
            encoder_ckpt,
            predictions,
            landmarks,
            out,
        }),
        Command::Retrieve {
            encoder_ckpt,
            queries,
            gallery,
            k,
            out,
            cfg,
        } => commands::retrieve(&encoder_ckpt, &queries, &gallery, k, out.as_deref(), &cfg),
        Command::ExportEmbeddings {
            encoder_ckpt,
            manifest,
            out,
        } => commands::export_embeddings(&encoder_ckpt, &manifest, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fiqa: {e}");
            ExitCode::from(e.code())
        }
    }
}
