//! `key = value` run configuration.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use blsh::boost::DistanceKind;
use blsh::{AnalysisConfig, FeatureKind, SearchMode, TrainConfig};
use serde::Serialize;

/// Every tunable shared by the subcommands. Command-line flags override
/// values read from a config file, which override the defaults.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub frame_size: usize,
    pub hop: usize,
    pub feature_kind: String,
    pub mel_bands: usize,
    pub n_bits: usize,
    pub k: usize,
    pub snr_db: f64,
    pub subsample: f64,
    pub seed: u64,
    pub mode: SearchMode,
    pub minibatch_frames: usize,
    pub epochs_per_learner: usize,
    pub learning_rate: f64,
    pub tanh_slope: f64,
    pub distance: DistanceKind,
    pub dictionary: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            frame_size: 1024,
            hop: 256,
            feature_kind: "stft_magnitude".into(),
            mel_bands: 64,
            n_bits: train.n_bits,
            k: 10,
            snr_db: 0.0,
            subsample: 1.0,
            seed: 0,
            mode: SearchMode::Hamming,
            minibatch_frames: train.minibatch_frames,
            epochs_per_learner: train.epochs_per_learner,
            learning_rate: train.learning_rate,
            tanh_slope: train.tanh_slope,
            distance: train.distance,
            dictionary: None,
            model: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("invalid value `{value}` for `{key}`: {e}"))
}

impl RunConfig {
    /// Sets one key; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "frame_size" => self.frame_size = parse(key, value)?,
            "hop" => self.hop = parse(key, value)?,
            "feature_kind" => {
                if value != "stft_magnitude" && value != "mel" {
                    bail!("invalid value `{value}` for `feature_kind` (expected stft_magnitude or mel)");
                }
                self.feature_kind = value.to_string();
            }
            "mel_bands" => self.mel_bands = parse(key, value)?,
            "n_bits" | "L" => self.n_bits = parse(key, value)?,
            "k" | "K" => self.k = parse(key, value)?,
            "snr_db" => self.snr_db = parse(key, value)?,
            "subsample" => self.subsample = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "mode" => self.mode = parse(key, value)?,
            "minibatch_frames" => self.minibatch_frames = parse(key, value)?,
            "epochs_per_learner" => self.epochs_per_learner = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "tanh_slope" => self.tanh_slope = parse(key, value)?,
            "distance" | "distance_kind" => self.distance = parse(key, value)?,
            "dictionary" => self.dictionary = Some(PathBuf::from(value)),
            "model" => self.model = Some(PathBuf::from(value)),
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment, blank lines are ignored.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`, got `{raw}`", n + 1))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                bail!("line {}: duplicate key `{key}`", n + 1);
            }
            config
                .set(key, value)
                .with_context(|| format!("line {}", n + 1))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse_str(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_size < 2 || !self.frame_size.is_multiple_of(2) {
            bail!(
                "frame_size must be even and at least 2, got {}",
                self.frame_size
            );
        }
        if self.hop == 0 || self.hop > self.frame_size {
            bail!("hop must be in 1..=frame_size, got {}", self.hop);
        }
        if self.feature_kind == "mel"
            && (self.mel_bands == 0 || self.mel_bands > self.frame_size / 2)
        {
            bail!(
                "mel_bands must be in 1..{}, got {}",
                self.frame_size / 2 + 1,
                self.mel_bands
            );
        }
        if self.k == 0 {
            bail!("K must be at least 1");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            bail!("subsample must be in (0, 1], got {}", self.subsample);
        }
        if !self.snr_db.is_finite() {
            bail!("snr_db must be finite");
        }
        self.train_config().validate()?;
        Ok(())
    }

    pub fn feature_kind(&self) -> FeatureKind {
        if self.feature_kind == "mel" {
            FeatureKind::Mel(self.mel_bands)
        } else {
            FeatureKind::StftMagnitude
        }
    }

    pub fn analysis(&self) -> AnalysisConfig {
        AnalysisConfig {
            frame_size: self.frame_size,
            hop: self.hop,
            kind: self.feature_kind(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            n_bits: self.n_bits,
            minibatch_frames: self.minibatch_frames,
            epochs_per_learner: self.epochs_per_learner,
            learning_rate: self.learning_rate,
            tanh_slope: self.tanh_slope,
            distance: self.distance,
            seed: self.seed,
        }
    }
}
