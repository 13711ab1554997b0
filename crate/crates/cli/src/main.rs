//! `repdfd` — train and evaluate border visual prompts for deepfake detection
//! on a frozen encoder backend.
//!
//! One command per process; every run writes a `*.run.json` manifest with the
//! resolved settings, backend digest and checkpoint hashes so results can be
//! reproduced byte for byte.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use repdfd_core::error::Error;
use settings::Settings;

#[derive(Parser)]
#[command(name = "repdfd", version, about = "Visual-prompt reprogramming for deepfake detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CommonOpts {
    /// Flat key=value config file; CLI flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (backend weights, vocabulary, projection, data order).
    #[arg(long)]
    seed: Option<u64>,
    /// Backend registry key (default: $REPDFD_BACKEND or "toy").
    #[arg(long)]
    backend: Option<String>,
    /// Extra key=value overrides, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl CommonOpts {
    fn resolve(&self) -> Result<Settings, Error> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            s.apply_config_file(path)?;
        }
        for kv in &self.set {
            s.apply_override(kv)?;
        }
        if let Some(seed) = self.seed {
            s.set("seed", &seed.to_string())?;
        }
        if let Some(backend) = &self.backend {
            s.set("backend", backend)?;
        }
        Ok(s)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the bundled synthetic dataset (images plus manifest).
    Prepare {
        #[command(flatten)]
        common: CommonOpts,
        /// Output directory for images/ and manifest.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize a visual prompt on the manifest's train split.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for checkpoints and the training log.
        #[arg(long)]
        out: PathBuf,
        /// Border width p.
        #[arg(long)]
        p: Option<usize>,
        /// Template configuration id (T0T1, T2T1, T2T3, T0T3, RAND).
        #[arg(long)]
        templates: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Evaluate a checkpoint on a manifest split (frame and video AUC).
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Report JSON output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Split to score: train, val, test or all.
        #[arg(long, default_value = "test")]
        split: String,
        /// Expected border width; must match the checkpoint when given.
        #[arg(long)]
        p: Option<usize>,
    },
    /// One full train+eval per border width.
    SweepP {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated border widths, e.g. 4,6,8.
        #[arg(long)]
        p: String,
        /// Output directory for the sweep table.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        templates: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// One full train+eval per template configuration.
    SweepTemplates {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated config ids; defaults to all five.
        #[arg(long)]
        templates: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Mean cosine similarity between image features and each template.
    AnalyzeSim {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint to take δ from; zero-initialized prompt when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Border width for the zero-initialized prompt.
        #[arg(long)]
        p: Option<usize>,
        /// Split to analyze: train, val, test or all.
        #[arg(long, default_value = "all")]
        split: String,
    },
    /// Dump raw and prompted image features for external analysis.
    DumpFeatures {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Feature file output path.
        #[arg(long)]
        out: PathBuf,
        /// Border width for the zero-initialized prompt.
        #[arg(long)]
        p: Option<usize>,
        /// Split to dump: train, val, test or all.
        #[arg(long, default_value = "all")]
        split: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
