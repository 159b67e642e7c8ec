//! `kcp`: generate data, train the VAE and flow, sample, in-paint, evaluate and export.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kcp_core::Error;

/// Environment variable naming the run config when `--config` is absent.
pub const CONFIG_ENV: &str = "KCP_CONFIG";

#[derive(Parser, Debug)]
#[command(name = "kcp", version, about = "Compositional k-cell particle pipeline")]
pub struct Cli {
    /// Base directory for every relative path.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// Run config (TOML); falls back to the KCP_CONFIG environment variable.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; defaults to the config value, then all logical cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a procedural dataset.
    GenData(GenData),
    /// Train the set VAE.
    TrainVae(TrainVae),
    /// Encode and decode a dataset and report reconstruction quality.
    Roundtrip(Roundtrip),
    /// Dump posterior-mean latents of a dataset.
    Encode(Encode),
    /// Train the latent flow model.
    TrainFlow(TrainFlow),
    /// Generate models.
    Sample(Sample),
    /// Regenerate faces around fixed vertices and edges.
    Inpaint(Inpaint),
    /// Compute distribution and CAD metrics.
    Eval(Eval),
    /// Convert a model file.
    Export(Export),
}

#[derive(Args, Debug)]
pub struct GenData {
    #[arg(long)]
    pub kinds: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    /// `solid` or `wireframe`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainVae {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt_out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct Roundtrip {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub vae: PathBuf,
    /// Optional JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Only the first this many records.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Args, Debug)]
pub struct Encode {
    #[arg(long)]
    pub vae: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainFlow {
    #[arg(long)]
    pub latents: PathBuf,
    #[arg(long)]
    pub ckpt_out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct Sample {
    #[arg(long)]
    pub vae: PathBuf,
    #[arg(long)]
    pub flow: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Inpaint {
    /// Dataset whose records supply the fixed cells.
    #[arg(long)]
    pub input: PathBuf,
    /// Cell types to hold fixed, e.g. `vertices,edges`.
    #[arg(long, default_value = "vertices,edges")]
    pub fix: String,
    #[arg(long)]
    pub vae: PathBuf,
    #[arg(long)]
    pub flow: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Eval {
    /// Directory of model JSON files or a dataset file.
    #[arg(long)]
    pub gen: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Export {
    /// Model JSON file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// `obj` or `json`.
    #[arg(long)]
    pub format: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// Validation problems exit with 1, everything else with 2.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::SchemaVersion { .. } | Error::OverBudget { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
