use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod manifest;

use config::RunConfig;

/// Nearest-neighbour speech denoising with boosted binary hash codes.
#[derive(Parser, Debug)]
#[command(name = "blsh", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate speech-like and noise WAVs for a self-contained demo corpus.
    Synth(SynthArgs),
    /// Mix every speech file with every noise file at a target SNR.
    Mix(MixArgs),
    /// Build a dictionary of mixture features and ideal binary masks.
    BuildDict(BuildDictArgs),
    /// Learn hash projections by boosting (or draw random ones).
    Train(TrainArgs),
    /// Denoise mixtures by nearest-neighbour mask estimation.
    Denoise(DenoiseArgs),
    /// Score enhanced files against their clean references.
    Evaluate(EvaluateArgs),
    /// Time cosine and Hamming dictionary scans.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// key = value configuration file.
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable), e.g. `--set hop=512`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self, extra: &[(&str, Option<String>)]) -> Result<RunConfig> {
        let mut config = RunConfig::load_or_default(self.config.as_deref())?;
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            config.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        for (key, value) in extra {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory; `speech/` and `noise/` are created inside.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    speakers: u64,
    #[arg(long, default_value_t = 1)]
    per_speaker: usize,
    /// Clip length in seconds.
    #[arg(long, default_value_t = 2.0)]
    duration: f64,
    #[arg(long, default_value_t = 16000)]
    sample_rate: u32,
    /// First speaker id; use disjoint ranges for train and test material.
    #[arg(long, default_value_t = 0)]
    first_speaker: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
pub struct MixArgs {
    #[arg(long)]
    speech_dir: PathBuf,
    #[arg(long)]
    noise_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    snr_db: Option<f64>,
    /// Keep only the first N speech/noise pairs of the cross product.
    #[arg(long)]
    max_mixtures: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct BuildDictArgs {
    /// Mixture manifest written by `mix`.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    /// Hash the dictionary with this model.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Fraction of frames to keep, drawn uniformly with the seed.
    #[arg(long)]
    subsample: Option<f64>,
    /// Store only codes and masks (requires a model).
    #[arg(long)]
    no_features: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dictionary with stored features to train on.
    #[arg(long, conflicts_with = "manifest", required_unless_present_any = ["manifest", "random"])]
    dict: Option<PathBuf>,
    /// Mixture manifest to extract training features from.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    /// Code length L.
    #[arg(long)]
    bits: Option<usize>,
    /// Draw random projections instead of training.
    #[arg(long)]
    random: bool,
    /// Write per-learner diagnostics as JSON lines here instead of stderr.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct DenoiseArgs {
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Mixture manifest; enhanced records keep its clean references.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Mixture WAVs to denoise (in addition to the manifest).
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, short)]
    k: Option<usize>,
    /// `cosine` or `hamming`.
    #[arg(long)]
    mode: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Enhanced manifest written by `denoise`.
    #[arg(long)]
    manifest: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Dictionary sizes T.
    #[arg(long, value_delimiter = ',', default_values_t = [10_000usize, 20_000, 40_000])]
    sizes: Vec<usize>,
    /// Code lengths L for the Hamming scan.
    #[arg(long, value_delimiter = ',', default_values_t = [64usize, 128, 150])]
    bits: Vec<usize>,
    /// Feature dimension D for the cosine scan.
    #[arg(long, default_value_t = 513)]
    dim: usize,
    #[arg(long, value_delimiter = ',', default_values_t = ["cosine".to_string(), "hamming".to_string()])]
    modes: Vec<String>,
    #[arg(long, default_value_t = 20)]
    queries: usize,
    #[arg(long, short, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the rows as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Mix(a) => {
            let config = a
                .config
                .resolve(&[("snr_db", a.snr_db.map(|v| v.to_string()))])?;
            ensure_dir(&a.out)?;
            commands::mix(&a, &config)
        }
        Command::BuildDict(a) => {
            let config = a
                .config
                .resolve(&[("subsample", a.subsample.map(|v| v.to_string()))])?;
            if a.no_features && a.model.is_none() && config.model.is_none() {
                bail!("--no-features needs a model to compute codes");
            }
            commands::build_dict(&a, &config)
        }
        Command::Train(a) => {
            let config = a
                .config
                .resolve(&[("n_bits", a.bits.map(|v| v.to_string()))])?;
            commands::train(&a, &config)
        }
        Command::Denoise(a) => {
            let config = a
                .config
                .resolve(&[("k", a.k.map(|v| v.to_string())), ("mode", a.mode.clone())])?;
            ensure!(
                a.manifest.is_some() || !a.inputs.is_empty(),
                "nothing to denoise: pass --manifest or input files"
            );
            ensure_dir(&a.out)?;
            commands::denoise(&a, &config)
        }
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Bench(a) => commands::bench(&a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
