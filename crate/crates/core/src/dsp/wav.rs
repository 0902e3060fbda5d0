//! Mono WAV ingestion (16-bit PCM or 32-bit float) and float WAV output.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioClip;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub fn read_wav<S: Real>(path: impl AsRef<Path>) -> Result<AudioClip<S>> {
    let path = path.as_ref();
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedAudio(format!(
            "{}: {} channels, only mono is accepted",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<S> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| S::lit(v as f64 / 32768.0)))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| S::lit(v as f64)))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::UnsupportedAudio(format!(
                "{}: {bits}-bit {fmt:?} samples",
                path.display()
            )))
        }
    };
    AudioClip::new(samples, spec.sample_rate)
}

/// Reads a clip and checks its sample rate.
pub fn read_wav_at<S: Real>(path: impl AsRef<Path>, sample_rate: u32) -> Result<AudioClip<S>> {
    let clip = read_wav(path.as_ref())?;
    if clip.sample_rate != sample_rate {
        return Err(Error::UnsupportedAudio(format!(
            "{}: sample rate {} Hz, expected {sample_rate} Hz (no resampling)",
            path.as_ref().display(),
            clip.sample_rate
        )));
    }
    Ok(clip)
}

/// Writes a mono 32-bit float WAV.
pub fn write_wav<S: Real>(path: impl AsRef<Path>, clip: &AudioClip<S>) -> Result<()> {
    write_wav_format(path, clip, SampleFormat::Float)
}

/// Writes a mono 16-bit PCM WAV, clipping to [-1, 1].
pub fn write_wav_pcm16<S: Real>(path: impl AsRef<Path>, clip: &AudioClip<S>) -> Result<()> {
    write_wav_format(path, clip, SampleFormat::Int)
}

fn write_wav_format<S: Real>(
    path: impl AsRef<Path>,
    clip: &AudioClip<S>,
    format: SampleFormat,
) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: if format == SampleFormat::Float {
            32
        } else {
            16
        },
        sample_format: format,
    };
    let mut w = WavWriter::create(path.as_ref(), spec)?;
    for &s in &clip.samples {
        let v = s.to_f64_lossy();
        match format {
            SampleFormat::Float => w.write_sample(v as f32)?,
            SampleFormat::Int => w.write_sample((v.clamp(-1.0, 1.0) * 32767.0).round() as i16)?,
        }
    }
    w.finalize()?;
    Ok(())
}
