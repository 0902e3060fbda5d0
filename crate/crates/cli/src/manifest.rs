//! Line-delimited JSON manifests.
//!
//! Each line is one record tagged by `record`. A manifest starts with a
//! `header` record echoing the command and configuration that produced it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    Header {
        command: String,
        config: serde_json::Value,
    },
    Mixture(MixtureRecord),
    Enhanced(EnhancedRecord),
}

/// One synthesised mixture and its aligned components, or the reason it failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecord {
    pub name: String,
    pub mixture: PathBuf,
    pub speech: PathBuf,
    pub noise: PathBuf,
    pub snr_db: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_offset: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A denoised output with the references needed to score it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhancedRecord {
    pub name: String,
    pub enhanced: PathBuf,
    pub mixture: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speech: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<PathBuf>,
}

pub struct ManifestWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl ManifestWriter {
    pub fn create(path: &Path, command: &str, config: &impl Serialize) -> Result<Self> {
        let file =
            File::create(path).with_context(|| format!("creating manifest {}", path.display()))?;
        let mut writer = Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        };
        writer.write(&Record::Header {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
        })?;
        Ok(writer)
    }

    pub fn write(&mut self, record: &Record) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out
            .write_all(b"\n")
            .with_context(|| format!("writing manifest {}", self.path.display()))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out
            .flush()
            .with_context(|| format!("writing manifest {}", self.path.display()))
    }
}

/// All records of a manifest; relative paths are resolved against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<Record>> {
    let file = File::open(path).with_context(|| format!("opening manifest {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading manifest {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut record: Record = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: malformed record", path.display(), n + 1))?;
        resolve(&mut record, base);
        records.push(record);
    }
    Ok(records)
}

fn resolve(record: &mut Record, base: &Path) {
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    match record {
        Record::Header { .. } => {}
        Record::Mixture(m) => {
            fix(&mut m.mixture);
            fix(&mut m.speech);
            fix(&mut m.noise);
        }
        Record::Enhanced(e) => {
            fix(&mut e.enhanced);
            fix(&mut e.mixture);
            if let Some(p) = e.speech.as_mut() {
                fix(p);
            }
            if let Some(p) = e.noise.as_mut() {
                fix(p);
            }
        }
    }
}

/// Usable mixture records; failed ones are reported on stderr and skipped.
pub fn mixtures(path: &Path) -> Result<Vec<MixtureRecord>> {
    let mut out = Vec::new();
    for record in read_manifest(path)? {
        if let Record::Mixture(m) = record {
            match &m.error {
                Some(e) => eprintln!("skipping {}: {e}", m.name),
                None => out.push(m),
            }
        }
    }
    if out.is_empty() {
        bail!("manifest {} has no usable mixture records", path.display());
    }
    Ok(out)
}

pub fn enhanced(path: &Path) -> Result<Vec<EnhancedRecord>> {
    let out: Vec<EnhancedRecord> = read_manifest(path)?
        .into_iter()
        .filter_map(|r| match r {
            Record::Enhanced(e) => Some(e),
            _ => None,
        })
        .collect();
    if out.is_empty() {
        bail!("manifest {} has no enhanced records", path.display());
    }
    Ok(out)
}
