//! Deterministic speech-like and non-stationary noise signals.
//!
//! Used to build small mixture corpora when no recorded speech is at hand.
//! "Speech" is a sequence of voiced syllables (harmonic source with a
//! drifting pitch shaped by vowel formants) with occasional fricative
//! bursts and pauses. Noises are event-driven or modulated so that their
//! spectra change over time.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::AudioClip;

/// Vowel formant frequencies (F1, F2, F3) in Hz.
const VOWELS: [[f64; 3]; 8] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [660.0, 1720.0, 2410.0],
    [490.0, 1350.0, 1690.0],
    [440.0, 1020.0, 2240.0],
];

/// Second-order IIR section (RBJ cookbook coefficients).
#[derive(Clone, Copy, Debug)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    x: [f64; 2],
    y: [f64; 2],
}

impl Biquad {
    fn new(b: [f64; 3], a0: f64, a: [f64; 2]) -> Self {
        Self {
            b: b.map(|v| v / a0),
            a: a.map(|v| v / a0),
            x: [0.0; 2],
            y: [0.0; 2],
        }
    }

    fn bandpass(sr: f64, centre: f64, q: f64) -> Self {
        let w = 2.0 * PI * centre / sr;
        let alpha = w.sin() / (2.0 * q);
        Self::new(
            [alpha, 0.0, -alpha],
            1.0 + alpha,
            [-2.0 * w.cos(), 1.0 - alpha],
        )
    }

    fn lowpass(sr: f64, cutoff: f64, q: f64) -> Self {
        let w = 2.0 * PI * cutoff / sr;
        let alpha = w.sin() / (2.0 * q);
        let c = w.cos();
        Self::new(
            [(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0],
            1.0 + alpha,
            [-2.0 * c, 1.0 - alpha],
        )
    }

    fn highpass(sr: f64, cutoff: f64, q: f64) -> Self {
        let w = 2.0 * PI * cutoff / sr;
        let alpha = w.sin() / (2.0 * q);
        let c = w.cos();
        Self::new(
            [(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0],
            1.0 + alpha,
            [-2.0 * c, 1.0 - alpha],
        )
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.b[1] * self.x[0] + self.b[2] * self.x[1]
            - self.a[0] * self.y[0]
            - self.a[1] * self.y[1];
        self.x = [x, self.x[0]];
        self.y = [y, self.y[0]];
        y
    }
}

fn white(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-1.0..1.0)
}

/// Raised-cosine fade in/out over `ramp` samples.
fn envelope(i: usize, len: usize, ramp: usize) -> f64 {
    let ramp = ramp.min(len / 2).max(1);
    let edge = i.min(len.saturating_sub(1 + i));
    if edge >= ramp {
        1.0
    } else {
        0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
    }
}

fn normalize_peak(samples: &mut [f64], peak: f64) {
    let m = samples.iter().fold(0.0f64, |a, &s| a.max(s.abs()));
    if m > 0.0 {
        samples.iter_mut().for_each(|s| *s *= peak / m);
    }
}

/// A speech-like utterance of `duration_s` seconds from a speaker drawn by `seed`.
pub fn speech_like(seed: u64, duration_s: f64, sample_rate: u32) -> AudioClip<f64> {
    speech_with_speaker(seed, seed, duration_s, sample_rate)
}

/// An utterance whose pitch range and vocal-tract scale depend only on `speaker`.
pub fn speech_with_speaker(
    speaker: u64,
    utterance: u64,
    duration_s: f64,
    sample_rate: u32,
) -> AudioClip<f64> {
    let mut voice = ChaCha8Rng::seed_from_u64(speaker ^ 0x5EEC_0000);
    let base_f0: f64 = voice.random_range(90.0..240.0);
    let tract: f64 = voice.random_range(0.85..1.2);
    let mut rng = ChaCha8Rng::seed_from_u64(utterance ^ 0x0770_0000);
    let sr = sample_rate as f64;
    let len = (duration_s * sr) as usize;
    let mut out = vec![0.0; len];
    let mut pos = rng.random_range(0..(0.1 * sr) as usize);

    while pos < len {
        let syl_len = (rng.random_range(0.12..0.32) * sr) as usize;
        let vowel = VOWELS[rng.random_range(0..VOWELS.len())].map(|f| f * tract);
        let bandwidths = [
            rng.random_range(60.0..110.0),
            rng.random_range(80.0..140.0),
            rng.random_range(100.0..180.0),
        ];
        let f0_start = base_f0 * rng.random_range(0.85..1.15);
        let f0_end = f0_start * rng.random_range(0.85..1.15);
        let level: f64 = rng.random_range(0.5..1.0);

        // unvoiced onset
        if rng.random_bool(0.4) {
            let fric_len = (rng.random_range(0.04..0.09) * sr) as usize;
            let mut bp = Biquad::bandpass(sr, rng.random_range(3500.0..6500.0), 1.5);
            for i in 0..fric_len {
                if pos + i >= len {
                    break;
                }
                out[pos + i] += 0.25
                    * level
                    * envelope(i, fric_len, fric_len / 4)
                    * bp.process(white(&mut rng));
            }
            pos += fric_len;
        }

        let max_harm = (4500.0 / f0_start.min(f0_end)) as usize;
        let mut phases = vec![0.0f64; max_harm + 1];
        for i in 0..syl_len {
            if pos + i >= len {
                break;
            }
            let frac = i as f64 / syl_len as f64;
            let f0 = f0_start + (f0_end - f0_start) * frac;
            let mut v = 0.0;
            for (h, phase) in phases.iter_mut().enumerate().skip(1) {
                let f = h as f64 * f0;
                if f > 4500.0 {
                    break;
                }
                *phase += 2.0 * PI * f / sr;
                let gain: f64 = vowel
                    .iter()
                    .zip(&bandwidths)
                    .enumerate()
                    .map(|(k, (&fc, &bw))| (1.0 / (k + 1) as f64) / (1.0 + ((f - fc) / bw).powi(2)))
                    .sum();
                v += gain * phase.sin() / (h as f64).sqrt();
            }
            out[pos + i] += level * envelope(i, syl_len, (0.025 * sr) as usize) * v;
        }
        pos += syl_len + (rng.random_range(0.03..0.16) * sr) as usize;
    }
    normalize_peak(&mut out, 0.5);
    AudioClip {
        samples: out,
        sample_rate,
    }
}

/// Families of non-stationary noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Frequency sweeps between 2 and 7 kHz, like bird calls.
    Chirps,
    /// Short decaying broadband bursts, like a keyboard.
    Clicks,
    /// Low-passed noise with slow deep amplitude modulation, like surf.
    Surf,
    /// Low harmonic buzz with wandering pitch, like an engine.
    Engine,
    /// Pulsed high-frequency tone, like cicadas.
    Insects,
    /// Sparse crackle through a high-pass filter.
    Crackle,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 6] = [
        NoiseKind::Chirps,
        NoiseKind::Clicks,
        NoiseKind::Surf,
        NoiseKind::Engine,
        NoiseKind::Insects,
        NoiseKind::Crackle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Chirps => "chirps",
            NoiseKind::Clicks => "clicks",
            NoiseKind::Surf => "surf",
            NoiseKind::Engine => "engine",
            NoiseKind::Insects => "insects",
            NoiseKind::Crackle => "crackle",
        }
    }
}

/// A noise clip of the given family.
pub fn noise(kind: NoiseKind, seed: u64, duration_s: f64, sample_rate: u32) -> AudioClip<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0A15_E000);
    let sr = sample_rate as f64;
    let len = (duration_s * sr) as usize;
    let mut out = vec![0.0; len];

    match kind {
        NoiseKind::Chirps => {
            let mut t = 0usize;
            while t < len {
                let dur = (rng.random_range(0.05..0.16) * sr) as usize;
                let f_a: f64 = rng.random_range(2000.0..5500.0);
                let f_b = (f_a + rng.random_range(-1500.0..1500.0)).clamp(1500.0, 7000.0);
                let amp: f64 = rng.random_range(0.4..1.0);
                let mut phase = 0.0f64;
                for i in 0..dur {
                    if t + i >= len {
                        break;
                    }
                    let f = f_a + (f_b - f_a) * i as f64 / dur as f64;
                    phase += 2.0 * PI * f / sr;
                    out[t + i] +=
                        amp * envelope(i, dur, dur / 5) * (phase.sin() + 0.3 * (2.0 * phase).sin());
                }
                t += dur + (rng.random_range(0.02..0.25) * sr) as usize;
            }
            for s in out.iter_mut() {
                *s += 0.02 * white(&mut rng);
            }
        }
        NoiseKind::Clicks => {
            let mut bp = Biquad::bandpass(sr, rng.random_range(1500.0..3500.0), 0.7);
            let mut t = 0usize;
            let mut burst = vec![0.0; len];
            while t < len {
                let decay = rng.random_range(0.004..0.02) * sr;
                let amp: f64 = rng.random_range(0.3..1.0);
                for i in 0..(6.0 * decay) as usize {
                    if t + i >= len {
                        break;
                    }
                    burst[t + i] += amp * (-(i as f64) / decay).exp() * white(&mut rng);
                }
                t += (rng.random_range(0.05..0.22) * sr) as usize;
            }
            for (o, b) in out.iter_mut().zip(&burst) {
                *o = bp.process(*b) + 0.3 * b;
            }
        }
        NoiseKind::Surf => {
            let mut lp = Biquad::lowpass(sr, rng.random_range(400.0..1200.0), 0.7);
            let rate: f64 = rng.random_range(0.2..0.6);
            let phase0: f64 = rng.random_range(0.0..2.0 * PI);
            for (i, o) in out.iter_mut().enumerate() {
                let t = i as f64 / sr;
                let am = 0.55 + 0.45 * (2.0 * PI * rate * t + phase0).sin();
                *o = am * am * lp.process(white(&mut rng));
            }
        }
        NoiseKind::Engine => {
            let base: f64 = rng.random_range(28.0..70.0);
            let wobble: f64 = rng.random_range(0.3..1.5);
            let mut lp = Biquad::lowpass(sr, 900.0, 0.7);
            let mut phase = 0.0f64;
            for (i, o) in out.iter_mut().enumerate() {
                let t = i as f64 / sr;
                let f0 = base * (1.0 + 0.35 * (2.0 * PI * wobble * t).sin());
                phase += 2.0 * PI * f0 / sr;
                let mut v = 0.0;
                for h in 1..40 {
                    v += (h as f64 * phase).sin() / h as f64;
                }
                *o = v + 0.5 * lp.process(white(&mut rng));
            }
        }
        NoiseKind::Insects => {
            let carrier: f64 = rng.random_range(4200.0..7000.0);
            let pulse: f64 = rng.random_range(30.0..90.0);
            let mut on = true;
            let mut next_switch = (rng.random_range(0.2..0.8) * sr) as usize;
            for (i, o) in out.iter_mut().enumerate() {
                if i >= next_switch {
                    on = !on;
                    next_switch = i + (rng.random_range(0.15..0.7) * sr) as usize;
                }
                let t = i as f64 / sr;
                let p = 0.5 + 0.5 * (2.0 * PI * pulse * t).sin();
                let level = if on { 1.0 } else { 0.08 };
                *o = level * p * p * (2.0 * PI * carrier * t).sin() + 0.01 * white(&mut rng);
            }
        }
        NoiseKind::Crackle => {
            let mut hp = Biquad::highpass(sr, rng.random_range(1500.0..3000.0), 0.7);
            let density: f64 = rng.random_range(0.002..0.01);
            let mut slow = 1.0;
            for (i, o) in out.iter_mut().enumerate() {
                if i % 800 == 0 {
                    slow = rng.random_range(0.2..1.0);
                }
                let impulse = if rng.random_bool(density) {
                    white(&mut rng) * 4.0
                } else {
                    0.0
                };
                *o = slow * hp.process(impulse + 0.05 * white(&mut rng));
            }
        }
    }
    normalize_peak(&mut out, 0.5);
    AudioClip {
        samples: out,
        sample_rate,
    }
}

/// A named clean speech clip paired with a noise clip of equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct SourcePair {
    pub name: String,
    pub speech: AudioClip<f64>,
    pub noise: AudioClip<f64>,
    pub noise_kind: NoiseKind,
}

/// `per_speaker` utterances for each speaker id, with noise families
/// assigned round-robin. Disjoint speaker ranges give disjoint material.
pub fn source_pairs(
    speakers: std::ops::Range<u64>,
    per_speaker: usize,
    duration_s: f64,
    sample_rate: u32,
    seed: u64,
) -> Vec<SourcePair> {
    let mut out = Vec::new();
    for speaker in speakers {
        for u in 0..per_speaker as u64 {
            let kind = NoiseKind::ALL[((speaker * 7 + u) % NoiseKind::ALL.len() as u64) as usize];
            let utterance = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (speaker << 20) ^ u;
            let speech = speech_with_speaker(speaker, utterance, duration_s, sample_rate);
            out.push(SourcePair {
                name: format!("spk{speaker:03}_u{u:02}_{}", kind.name()),
                speech,
                noise: noise(kind, utterance ^ 0xB0B, duration_s, sample_rate),
                noise_kind: kind,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::signal_power;

    #[test]
    fn deterministic_and_bounded() {
        let a = speech_like(3, 1.0, 16000);
        assert_eq!(a, speech_like(3, 1.0, 16000));
        assert_ne!(a, speech_like(4, 1.0, 16000));
        assert_eq!(a.len(), 16000);
        assert!(a.samples.iter().all(|s| s.abs() <= 0.5 + 1e-12));
        assert!(signal_power(&a.samples) > 1e-4);
        for kind in NoiseKind::ALL {
            let n = noise(kind, 1, 1.0, 16000);
            assert_eq!(n, noise(kind, 1, 1.0, 16000));
            assert!(n
                .samples
                .iter()
                .all(|s| s.is_finite() && s.abs() <= 0.5 + 1e-12));
            assert!(signal_power(&n.samples) > 1e-5, "{kind:?}");
        }
    }

    #[test]
    fn source_pairs_are_named_and_distinct() {
        let pairs = source_pairs(0..3, 2, 0.5, 8000, 1);
        assert_eq!(pairs.len(), 6);
        let mut names: Vec<_> = pairs.iter().map(|p| p.name.clone()).collect();
        names.dedup();
        assert_eq!(names.len(), 6);
        assert_ne!(pairs[0].speech, pairs[1].speech);
        assert!(pairs
            .iter()
            .all(|p| p.speech.len() == 4000 && p.noise.len() == 4000));
        assert_eq!(pairs, source_pairs(0..3, 2, 0.5, 8000, 1));
    }
}
