//! `qpnet` — synth-corpus, extract, train, generate, eval and rf-analyze
//! pipelines over the vocoder library.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "qpnet", about = "Quasi-periodic WaveNet vocoder pipelines", version)]
struct Cli {
    /// Configuration file (key = value sections); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for all randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Architecture preset (wnf, wnc, qpnet, tiny-qpnet, tiny-wnc).
    #[arg(long, global = true)]
    preset: Option<String>,

    /// Cap on worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic training corpus with ground-truth features.
    SynthCorpus {
        /// Output directory for WAV/QPF1 files and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// Number of utterances.
        #[arg(short = 'n', long = "count")]
        count: usize,
    },
    /// Extract QPF1 features (F0, voicing, mel-cepstrum) from a WAV file.
    Extract {
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a vocoder on a corpus manifest.
    Train {
        /// Manifest of wav<TAB>features lines.
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for checkpoints and the loss log.
        #[arg(long)]
        out: PathBuf,
        /// Override [train] max_steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Synthesize a waveform from a checkpoint and a feature file.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// QPF1 conditioning features.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Decoding mode: sample or argmax.
        #[arg(long)]
        mode: Option<String>,
        /// F0 scaling ratio, e.g. 1/2 or 3/2.
        #[arg(long)]
        ratio: Option<String>,
    },
    /// Run the F0-scaling objective evaluation and write a CSV report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest of evaluation utterances (wav<TAB>features).
        #[arg(long)]
        manifest: PathBuf,
        /// Report CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated ratio list, e.g. "1,1/2,3/2".
        #[arg(long)]
        ratios: Option<String>,
        #[arg(long)]
        mode: Option<String>,
    },
    /// Print receptive-field lengths per preset and F0.
    RfAnalyze {
        /// F0 in Hz, or "sweep" for a table over 50..500 Hz.
        #[arg(long, default_value = "sweep")]
        f0: String,
        /// Sample rate the table is computed at.
        #[arg(long, default_value_t = 22050)]
        sample_rate: u32,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();

    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(preset) = &cli.preset {
        cfg.preset = preset.clone();
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .ok();
    }

    match cli.command {
        Command::SynthCorpus { out, count } => commands::synth_corpus(&cfg, count, &out),
        Command::Extract { wav, out } => commands::extract(&cfg, &wav, &out),
        Command::Train {
            manifest,
            out,
            steps,
        } => {
            if let Some(steps) = steps {
                cfg.max_steps = steps;
            }
            commands::train(&cfg, &manifest, &out)
        }
        Command::Generate {
            checkpoint,
            features,
            out,
            mode,
            ratio,
        } => {
            if let Some(mode) = mode {
                cfg.mode = mode.parse()?;
            }
            let ratio = match ratio {
                Some(r) => Some(r.parse::<qpnet_core::eval::Ratio>()?),
                None => None,
            };
            commands::generate(&cfg, &checkpoint, &features, ratio, &out)
        }
        Command::Eval {
            checkpoint,
            manifest,
            out,
            ratios,
            mode,
        } => {
            if let Some(mode) = mode {
                cfg.mode = mode.parse()?;
            }
            if let Some(list) = ratios {
                cfg.ratios = list
                    .split(',')
                    .map(|r| r.trim().parse())
                    .collect::<qpnet_core::Result<Vec<_>>>()?;
            }
            commands::eval(&cfg, &checkpoint, &manifest, &out)
        }
        Command::RfAnalyze { f0, sample_rate } => commands::rf_analyze(&f0, sample_rate),
    }
}
