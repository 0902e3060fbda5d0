use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex;
use rustfft::FftPlanner;

use super::{frame_count, AudioClip, ComplexSpectrogram};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Periodic Hann window of length `n`.
pub fn hann_window<S: Real>(n: usize) -> Vec<S> {
    (0..n)
        .map(|i| S::lit(0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()))
        .collect()
}

fn check_framing(frame_size: usize, hop: usize) -> Result<()> {
    if frame_size == 0 || !frame_size.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "frame size must be positive and even, got {frame_size}"
        )));
    }
    if hop == 0 || hop > frame_size {
        return Err(Error::InvalidParameter(format!(
            "hop must be in 1..={frame_size}, got {hop}"
        )));
    }
    Ok(())
}

/// Hann-windowed short-time Fourier transform keeping the non-negative bins.
pub fn stft<S: Real>(
    clip: &AudioClip<S>,
    frame_size: usize,
    hop: usize,
) -> Result<ComplexSpectrogram<S>> {
    check_framing(frame_size, hop)?;
    let len = clip.samples.len();
    if len < frame_size {
        return Err(Error::InsufficientInput(format!(
            "clip of {len} samples is shorter than one {frame_size}-sample frame"
        )));
    }
    let n_frames = frame_count(len, frame_size, hop);
    let n_bins = frame_size / 2 + 1;
    let window = hann_window::<S>(frame_size);
    let fft = FftPlanner::<S>::new().plan_fft_forward(frame_size);

    let mut frames = Array2::from_elem((n_frames, n_bins), Complex::new(S::zero(), S::zero()));
    let mut buf = vec![Complex::new(S::zero(), S::zero()); frame_size];
    let mut scratch = vec![Complex::new(S::zero(), S::zero()); fft.get_inplace_scratch_len()];
    for (t, mut row) in frames.rows_mut().into_iter().enumerate() {
        let start = t * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            let x = clip.samples.get(start + i).copied().unwrap_or_else(S::zero);
            *b = Complex::new(x * window[i], S::zero());
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (dst, src) in row.iter_mut().zip(&buf) {
            *dst = *src;
        }
    }

    Ok(ComplexSpectrogram {
        frames,
        frame_size,
        hop,
        signal_len: len,
        sample_rate: clip.sample_rate,
    })
}

/// Weighted overlap-add resynthesis normalised by the summed squared window.
///
/// The normaliser is floored at a tenth of its peak, so the first and last
/// couple of hundred samples (covered only by a window's tail) are tapered
/// rather than blown up when the spectrogram has been modified.
pub fn istft<S: Real>(spec: &ComplexSpectrogram<S>) -> Result<AudioClip<S>> {
    let frame_size = spec.frame_size;
    let hop = spec.hop;
    check_framing(frame_size, hop)?;
    let n_frames = spec.n_frames();
    if spec.n_bins() != frame_size / 2 + 1 {
        return Err(Error::ShapeMismatch(format!(
            "{} bins inconsistent with frame size {frame_size}",
            spec.n_bins()
        )));
    }
    if n_frames == 0 {
        return Err(Error::InsufficientInput("spectrogram has no frames".into()));
    }
    if frame_count(spec.signal_len, frame_size, hop) != n_frames {
        return Err(Error::ShapeMismatch(format!(
            "{n_frames} frames inconsistent with signal length {} (frame {frame_size}, hop {hop})",
            spec.signal_len
        )));
    }
    if spec.sample_rate == 0 {
        return Err(Error::InvalidParameter(
            "sample rate must be positive".into(),
        ));
    }

    let padded_len = (n_frames - 1) * hop + frame_size;
    let window = hann_window::<S>(frame_size);
    let ifft = FftPlanner::<S>::new().plan_fft_inverse(frame_size);
    let zero = Complex::new(S::zero(), S::zero());
    let mut out = vec![S::zero(); padded_len];
    let mut norm = vec![S::zero(); padded_len];
    let mut buf = vec![zero; frame_size];
    let mut scratch = vec![zero; ifft.get_inplace_scratch_len()];
    let scale = S::one() / S::of_usize(frame_size);
    let half = frame_size / 2;

    for (t, row) in spec.frames.rows().into_iter().enumerate() {
        // Rebuild the Hermitian-symmetric full spectrum.
        buf[0] = Complex::new(row[0].re, S::zero());
        buf[half] = Complex::new(row[half].re, S::zero());
        for k in 1..half {
            buf[k] = row[k];
            buf[frame_size - k] = row[k].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = t * hop;
        for i in 0..frame_size {
            out[start + i] = out[start + i] + buf[i].re * scale * window[i];
            norm[start + i] = norm[start + i] + window[i] * window[i];
        }
    }

    let peak = norm.iter().copied().fold(S::zero(), S::max);
    let floor = peak * S::lit(0.1);
    for (o, n) in out.iter_mut().zip(&norm) {
        *o = *o / n.max(floor);
    }
    out.truncate(spec.signal_len);
    AudioClip::new(out, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_clip(len: usize, seed: u64) -> AudioClip<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioClip::new(
            (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            16000,
        )
        .unwrap()
    }

    #[test]
    fn one_second_at_16k_gives_60_frames() {
        let spec = stft(&noise_clip(16000, 1), 1024, 256).unwrap();
        assert_eq!(spec.n_frames(), 60);
        assert_eq!(spec.n_bins(), 513);
    }

    #[test]
    fn short_clip_is_rejected() {
        let err = stft(&noise_clip(1000, 1), 1024, 256).unwrap_err();
        assert!(matches!(err, Error::InsufficientInput(_)));
    }

    #[test]
    fn bad_framing_is_rejected() {
        let clip = noise_clip(4096, 1);
        assert!(stft(&clip, 1023, 256).is_err());
        assert!(stft(&clip, 1024, 0).is_err());
        assert!(stft(&clip, 1024, 2048).is_err());
    }

    #[test]
    fn dc_lands_in_bin_zero() {
        let clip = AudioClip::new(vec![1.0f64; 4096], 16000).unwrap();
        let spec = stft(&clip, 512, 128).unwrap();
        let mags = spec.magnitudes();
        // Frames fully inside the signal carry only DC and its window leakage into bin 1.
        for t in 0..spec.n_frames() - 4 {
            let row = mags.row(t);
            let argmax = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap();
            assert_eq!(argmax, 0);
            assert!(row.iter().skip(2).all(|&m| m < 1e-9));
        }
    }

    #[test]
    fn sine_peaks_at_its_bin_matches_direct_dft() {
        let n = 256;
        let k = 19;
        let samples: Vec<f64> = (0..2048)
            .map(|i| (2.0 * PI * k as f64 * i as f64 / n as f64).sin())
            .collect();
        let clip = AudioClip::new(samples.clone(), 16000).unwrap();
        let spec = stft(&clip, n, 64).unwrap();
        let window = hann_window::<f64>(n);
        for t in 1..spec.n_frames() - 4 {
            let row = spec.frames.row(t);
            let argmax = (0..row.len())
                .max_by(|&a, &b| row[a].norm().total_cmp(&row[b].norm()))
                .unwrap();
            assert_eq!(argmax, k);
            // brute-force DFT of the windowed frame
            for bin in [0, k - 1, k, k + 1, 100] {
                let mut acc = Complex::new(0.0, 0.0);
                for i in 0..n {
                    let x = samples[t * 64 + i] * window[i];
                    let ang = -2.0 * PI * (bin * i) as f64 / n as f64;
                    acc += Complex::new(x * ang.cos(), x * ang.sin());
                }
                assert!((acc - row[bin]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn roundtrip_white_noise() {
        let clip = noise_clip(16000 + 77, 7);
        let spec = stft(&clip, 1024, 256).unwrap();
        let back = istft(&spec).unwrap();
        assert_eq!(back.len(), clip.len());
        let err = (1024..clip.len() - 1024)
            .map(|i| (back.samples[i] - clip.samples[i]).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "max interior error {err}");
    }

    #[test]
    fn zero_spectrogram_gives_silence() {
        let clip = AudioClip::<f64>::silence(5000, 16000);
        let spec = stft(&clip, 1024, 256).unwrap();
        let back = istft(&spec).unwrap();
        assert!(back.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn inconsistent_metadata_is_rejected() {
        let clip = noise_clip(8000, 3);
        let mut spec = stft(&clip, 1024, 256).unwrap();
        spec.hop = 128;
        assert!(istft(&spec).is_err());
        let mut spec = stft(&clip, 1024, 256).unwrap();
        spec.frame_size = 512;
        assert!(istft(&spec).is_err());
    }

    #[test]
    fn f32_roundtrip() {
        let clip = noise_clip(6000, 11);
        let clip32 =
            AudioClip::new(clip.samples.iter().map(|&x| x as f32).collect(), 16000).unwrap();
        let back = istft(&stft(&clip32, 512, 128).unwrap()).unwrap();
        let err = (512..clip32.len() - 512)
            .map(|i| (back.samples[i] - clip32.samples[i]).abs())
            .fold(0.0f32, f32::max);
        assert!(err < 1e-5, "max interior error {err}");
    }
}
