//! `meshfield`: train, evaluate and inspect multi-resolution mesh fields.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 numeric failure,
//! 4 checkpoint and mesh mismatch. The spectral cache directory is taken from
//! `MESHFIELD_CACHE_DIR` unless a config sets `cache_dir`.

mod commands;
mod exit;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "meshfield", version, about = "Multi-resolution neural fields on triangle meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// n_level, one_level or plain_diffusionnet.
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Run a checkpoint on a mesh.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        /// Drop the features of this level (1-based).
        #[arg(long)]
        disable_level: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a synthetic patchwork field on a mesh.
    Synth {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write successive thresholded subdivisions of a mesh.
    Subdivide {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        threshold: f64,
        #[arg(long)]
        iterations: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { config, out, seed, baseline } => commands::cmd_train(config, out, *seed, baseline.as_deref()),
        Command::Eval { checkpoint, mesh, disable_level, out } => {
            commands::cmd_eval(checkpoint, mesh, *disable_level, out)
        }
        Command::Synth { mesh, spec, out } => commands::cmd_synth(mesh, spec, out),
        Command::Subdivide { mesh, threshold, iterations, out } => {
            commands::cmd_subdivide(mesh, *threshold, *iterations, out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
