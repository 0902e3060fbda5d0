use super::AudioClip;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// A synthesized mixture together with the exact components that sum to it.
#[derive(Clone, Debug)]
pub struct Mixture<S> {
    pub mixture: AudioClip<S>,
    pub speech: AudioClip<S>,
    /// Noise after tiling/cropping to the speech length and SNR scaling.
    pub noise: AudioClip<S>,
    pub noise_gain: f64,
}

/// Mean squared amplitude.
pub fn signal_power<S: Real>(samples: &[S]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples
        .iter()
        .map(|s| s.to_f64_lossy().powi(2))
        .sum::<f64>()
        / samples.len() as f64
}

/// Mixes `speech` with `noise` rescaled to the requested speech-to-noise ratio.
///
/// The noise is tiled (or cropped) to the speech length.
pub fn mix_at_snr<S: Real>(
    speech: &AudioClip<S>,
    noise: &AudioClip<S>,
    snr_db: f64,
) -> Result<Mixture<S>> {
    if speech.sample_rate != noise.sample_rate {
        return Err(Error::InvalidParameter(format!(
            "sample rate mismatch: speech {} Hz, noise {} Hz",
            speech.sample_rate, noise.sample_rate
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "snr must be finite, got {snr_db}"
        )));
    }
    if speech.is_empty() || noise.is_empty() {
        return Err(Error::InsufficientInput(
            "empty speech or noise clip".into(),
        ));
    }
    let tiled: Vec<S> = noise
        .samples
        .iter()
        .copied()
        .cycle()
        .take(speech.len())
        .collect();
    let p_speech = signal_power(&speech.samples);
    let p_noise = signal_power(&tiled);
    if p_speech <= 0.0 || p_noise <= 0.0 {
        return Err(Error::Degenerate("speech or noise has zero power".into()));
    }
    let gain = (p_speech / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let g = S::lit(gain);
    let noise_scaled: Vec<S> = tiled.iter().map(|&n| n * g).collect();
    let mixture: Vec<S> = speech
        .samples
        .iter()
        .zip(&noise_scaled)
        .map(|(&s, &n)| s + n)
        .collect();
    Ok(Mixture {
        mixture: AudioClip::new(mixture, speech.sample_rate)?,
        speech: speech.clone(),
        noise: AudioClip::new(noise_scaled, speech.sample_rate)?,
        noise_gain: gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn clip(seed: u64, len: usize, amp: f64) -> AudioClip<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioClip::new(
            (0..len)
                .map(|_| amp * rng.random_range(-1.0..1.0))
                .collect(),
            16000,
        )
        .unwrap()
    }

    fn measured_snr(m: &Mixture<f64>) -> f64 {
        10.0 * (signal_power(&m.speech.samples) / signal_power(&m.noise.samples)).log10()
    }

    #[test]
    fn zero_db_has_unit_power_ratio() {
        let m = mix_at_snr(&clip(1, 5000, 0.3), &clip(2, 7000, 0.9), 0.0).unwrap();
        let ratio = signal_power(&m.speech.samples) / signal_power(&m.noise.samples);
        assert!((ratio - 1.0).abs() < 1e-6);
        assert_eq!(m.mixture.len(), 5000);
    }

    #[test]
    fn requested_snr_is_met() {
        for snr in [-10.0, -3.5, 0.0, 5.0, 60.0] {
            let m = mix_at_snr(&clip(3, 4000, 0.2), &clip(4, 900, 0.7), snr).unwrap();
            assert!((measured_snr(&m) - snr).abs() < 1e-4, "snr {snr}");
        }
    }

    #[test]
    fn sixty_db_is_nearly_clean() {
        let s = clip(5, 4000, 0.5);
        let m = mix_at_snr(&s, &clip(6, 4000, 0.5), 60.0).unwrap();
        let err: Vec<f64> = m
            .mixture
            .samples
            .iter()
            .zip(&s.samples)
            .map(|(a, b)| a - b)
            .collect();
        let rel = 10.0 * (signal_power(&s.samples) / signal_power(&err)).log10();
        assert!((rel - 60.0).abs() < 1e-6);
    }

    #[test]
    fn identical_inputs_double() {
        let s = clip(7, 3000, 0.4);
        let m = mix_at_snr(&s, &s, 0.0).unwrap();
        for (x, y) in m.mixture.samples.iter().zip(&s.samples) {
            assert!((x - 2.0 * y).abs() < 1e-12);
        }
    }

    #[test]
    fn short_noise_is_tiled() {
        let noise = clip(8, 100, 1.0);
        let m = mix_at_snr(&clip(9, 350, 1.0), &noise, 0.0).unwrap();
        for i in 0..350 {
            assert!((m.noise.samples[i] - noise.samples[i % 100] * m.noise_gain).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let silent = AudioClip::<f64>::silence(100, 16000);
        assert!(matches!(
            mix_at_snr(&silent, &clip(1, 100, 1.0), 0.0),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            mix_at_snr(&clip(1, 100, 1.0), &silent, 0.0),
            Err(Error::Degenerate(_))
        ));
        let other_rate = AudioClip::new(vec![0.1; 100], 8000).unwrap();
        assert!(mix_at_snr(&clip(1, 100, 1.0), &other_rate, 0.0).is_err());
    }
}
