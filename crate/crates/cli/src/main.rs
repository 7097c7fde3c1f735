//! `lvsm`: generate synthetic data, train, evaluate and render.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::{EvalArgs, CHECKPOINT_NAME};

#[derive(Parser)]
#[command(
    name = "lvsm",
    version,
    about = "Novel view synthesis with pure transformers"
)]
struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.peak_lr=1e-3` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Sequential 64-bit arithmetic for bit-reproducible runs.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset (and optional held-out split).
    GenData {
        /// Output directory instead of `data.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on `data.dir`, writing checkpoints and a metrics log to `output.dir`.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many total steps instead of `train.total_steps`.
        #[arg(long)]
        until: Option<u64>,
    },
    /// Score a checkpoint and write report.txt / report.toml to `output.dir`.
    Eval {
        /// Defaults to `<output.dir>/checkpoint.lvsm`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Input-view counts for the zero-shot sweep, e.g. `1,2,4`.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<usize>,
        /// Input-view counts for the decode timing table.
        #[arg(long, value_delimiter = ',')]
        timing: Vec<usize>,
        /// Write input | prediction | ground-truth PNG grids.
        #[arg(long)]
        images: bool,
    },
    /// Render the target cameras of a manifest from its input views.
    Render {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory holding cameras.json and the input images.
        #[arg(long)]
        views: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the effective configuration.
    Config,
}

fn run(cli: Cli) -> Result<()> {
    let loaded = config::load(cli.config.as_deref(), &cli.overrides)?;
    let default_ckpt = || loaded.config.output.dir.join(CHECKPOINT_NAME);
    match cli.command {
        Command::GenData { out } => commands::gen_data(&loaded.config, out),
        Command::Train { resume, until } => {
            if cli.deterministic {
                commands::train::<f64>(&loaded, resume.as_deref(), until)
            } else {
                commands::train::<f32>(&loaded, resume.as_deref(), until)
            }
        }
        Command::Eval {
            checkpoint,
            sweep,
            timing,
            images,
        } => {
            let args = EvalArgs {
                checkpoint: checkpoint.unwrap_or_else(default_ckpt),
                sweep,
                timing,
                images,
            };
            if cli.deterministic {
                commands::eval::<f64>(&loaded, &args)
            } else {
                commands::eval::<f32>(&loaded, &args)
            }
        }
        Command::Render {
            checkpoint,
            views,
            out,
        } => {
            let ckpt = checkpoint.unwrap_or_else(default_ckpt);
            if cli.deterministic {
                commands::render::<f64>(&loaded, &ckpt, &views, &out)
            } else {
                commands::render::<f32>(&loaded, &ckpt, &views, &out)
            }
        }
        Command::Config => {
            print!("{}", loaded.config.to_toml()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
