//! Speech-like test signals: voiced syllables with formant structure, short
//! fricative onsets and occasional pauses, produced at a syllabic rate around
//! 4 Hz. Used to exercise the pipeline where no speech corpus is at hand.

use std::f64::consts::PI;

use rand::Rng;

use crate::dsp::{AudioBuffer, SAMPLE_RATE_HZ};
use crate::rng::{derived_rng, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub syllable_rate_hz: f64,
    /// Relative spread of syllable durations around `1 / syllable_rate_hz`.
    pub rate_jitter: f64,
    pub pause_probability: f64,
    pub f0_range_hz: (f64, f64),
    pub peak_amplitude: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            syllable_rate_hz: 4.0,
            rate_jitter: 0.3,
            pause_probability: 0.08,
            f0_range_hz: (90.0, 220.0),
            peak_amplitude: 0.5,
        }
    }
}

/// Two-pole resonator.
#[derive(Debug, Clone, Copy, Default)]
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn tune(&mut self, freq: f64, bandwidth: f64) {
        let fs = SAMPLE_RATE_HZ as f64;
        let r = (-PI * bandwidth / fs).exp();
        self.a1 = 2.0 * r * (2.0 * PI * freq / fs).cos();
        self.a2 = -r * r;
        self.gain = 1.0 - r;
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

#[derive(Debug, Clone)]
pub struct SpeechLike {
    config: SynthConfig,
}

impl SpeechLike {
    pub fn new(config: SynthConfig) -> Self {
        Self { config }
    }

    pub fn utterance(&self, seconds: f64, seed: u64) -> AudioBuffer {
        let fs = SAMPLE_RATE_HZ as f64;
        let len = (seconds * fs).round() as usize;
        let mut rng = derived_rng(seed, stream::SYNTH, 0);
        let cfg = &self.config;
        let mut out = vec![0.0; len];

        let f0_base = rng.random_range(cfg.f0_range_hz.0..cfg.f0_range_hz.1);
        let mut formants = [Resonator::default(); 3];
        let mut fricative = Resonator::default();
        let mut glottal_phase = 0.0;
        let mut tilt = 0.0;

        let mut cursor = (rng.random_range(0.0..0.15) * fs) as usize;
        while cursor < len {
            if rng.random::<f64>() < cfg.pause_probability {
                cursor += (rng.random_range(0.12..0.35) * fs) as usize;
                continue;
            }
            let nominal = 1.0 / cfg.syllable_rate_hz;
            let dur = nominal * (1.0 + cfg.rate_jitter * rng.random_range(-1.0..1.0));
            let n = ((dur * fs) as usize).max(1);
            let level = rng.random_range(0.4..1.0);
            let f1 = rng.random_range(300.0..850.0);
            let f2 = rng.random_range(900.0..2300.0);
            let f3 = rng.random_range(2300.0..3200.0);
            for (res, (f, bw)) in formants.iter_mut().zip([(f1, 80.0), (f2, 120.0), (f3, 180.0)]) {
                res.tune(f, bw);
            }
            fricative.tune(rng.random_range(3500.0..6500.0), 900.0);
            let onset = (rng.random_range(0.02..0.06) * fs) as usize;
            let voiced_frac = rng.random_range(0.55..0.85);
            let f0_slope = rng.random_range(-0.2..0.2);

            let mut syllable = vec![0.0; n];
            for (i, s) in syllable.iter_mut().enumerate() {
                let tau = i as f64 / n as f64;
                let f0 = f0_base * (1.0 + f0_slope * (tau - 0.5));
                glottal_phase += f0 / fs;
                let pulse = if glottal_phase >= 1.0 {
                    glottal_phase -= 1.0;
                    1.0
                } else {
                    0.0
                };
                tilt = pulse + 0.9 * tilt;
                let voiced_env = if tau < voiced_frac {
                    (PI * tau / voiced_frac).sin().powf(1.5)
                } else {
                    0.0
                };
                let mut v = tilt * voiced_env;
                for res in formants.iter_mut() {
                    v = res.step(v) * 4.0;
                }
                let noise = rng.random_range(-1.0..1.0);
                let f = fricative.step(noise);
                let fric_env = if i < onset {
                    (PI * i as f64 / onset as f64).sin()
                } else {
                    0.0
                };
                *s = v + 0.3 * f * fric_env;
            }
            let rms = (syllable.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
            let scale = if rms > 0.0 { level * 0.1 / rms } else { 0.0 };
            for (o, s) in out[cursor..].iter_mut().zip(&syllable) {
                *o += s * scale;
            }
            cursor += n;
        }

        for o in out.iter_mut() {
            *o += 1e-4 * rng.random_range(-1.0..1.0);
        }
        let peak = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if peak > 0.0 {
            let g = cfg.peak_amplitude / peak;
            out.iter_mut().for_each(|x| *x *= g);
        }
        AudioBuffer::new(out, SAMPLE_RATE_HZ).expect("finite samples")
    }

    /// Low-passed noise suitable as an additive noise source.
    pub fn noise(&self, seconds: f64, seed: u64) -> AudioBuffer {
        let len = (seconds * SAMPLE_RATE_HZ as f64).round() as usize;
        let mut rng = derived_rng(seed, stream::SYNTH, 1);
        let mut state = 0.0;
        let samples = (0..len)
            .map(|_| {
                state = 0.7 * state + 0.3 * rng.random_range(-1.0..1.0);
                state
            })
            .collect();
        AudioBuffer::new(samples, SAMPLE_RATE_HZ).expect("finite samples")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let s = SpeechLike::new(SynthConfig::default());
        let a = s.utterance(3.0, 1);
        assert_eq!(a, s.utterance(3.0, 1));
        assert_ne!(a, s.utterance(3.0, 2));
        assert_eq!(a.len(), 48_000);
        let peak = a.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!((peak - 0.5).abs() < 1e-12);
    }
}
