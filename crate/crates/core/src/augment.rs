//! Additive-noise augmentation at a controlled signal-to-noise ratio.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;

use crate::corpus::read_wav;
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::rng::{derived_rng, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPolicy {
    pub apply_probability: f64,
    pub snr_lo_db: f64,
    pub snr_hi_db: f64,
    /// Identifiers of the noise recordings to draw from.
    pub noise_manifest: Vec<String>,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            apply_probability: 0.8,
            snr_lo_db: 12.0,
            snr_hi_db: 18.0,
            noise_manifest: Vec::new(),
        }
    }
}

impl AugmentPolicy {
    /// Policy that never touches the input.
    pub fn disabled() -> Self {
        Self {
            apply_probability: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.apply_probability) {
            return Err(Error::Config(format!(
                "augmentation probability {} outside [0, 1]",
                self.apply_probability
            )));
        }
        if !(self.snr_lo_db.is_finite() && self.snr_hi_db.is_finite()) || self.snr_lo_db > self.snr_hi_db {
            return Err(Error::Config(format!(
                "SNR range {}..{} dB is invalid",
                self.snr_lo_db, self.snr_hi_db
            )));
        }
        if self.apply_probability > 0.0 && self.noise_manifest.is_empty() {
            return Err(Error::Config(
                "augmentation enabled but the noise manifest is empty".into(),
            ));
        }
        Ok(())
    }
}

/// Noise recordings keyed by manifest identifier.
#[derive(Debug, Clone, Default)]
pub struct NoiseBank {
    noises: HashMap<String, AudioBuffer>,
}

impl NoiseBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, audio: AudioBuffer) {
        self.noises.insert(id.into(), audio);
    }

    pub fn get(&self, id: &str) -> Option<&AudioBuffer> {
        self.noises.get(id)
    }

    pub fn len(&self) -> usize {
        self.noises.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noises.is_empty()
    }

    /// Reads a newline-delimited list of WAV paths. Relative paths resolve
    /// against the manifest's directory; blank lines and `#` comments are
    /// skipped. Returns the bank and the identifiers in file order.
    pub fn load_manifest(path: &Path) -> Result<(Self, Vec<String>)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading noise manifest {}", path.display()), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut bank = Self::new();
        let mut ids = Vec::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let wav = base.join(line);
            bank.insert(line, read_wav(&wav)?);
            ids.push(line.to_string());
        }
        Ok((bank, ids))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixed {
    pub audio: AudioBuffer,
    /// Noise scale applied; zero when the mix was skipped.
    pub gain: f64,
    /// Set when the noise had no power and the speech was returned unchanged.
    pub skipped: bool,
}

/// Noise repeated from `offset` (circularly) out to `len` samples.
fn tile(noise: &[f64], len: usize, offset: usize) -> impl Iterator<Item = f64> + '_ {
    noise.iter().copied().cycle().skip(offset % noise.len().max(1)).take(len)
}

/// Adds noise scaled so that `10 log10(P_speech / P_noise) = snr_db`, with
/// powers measured over the whole utterance. Noise is tiled or cropped to the
/// speech length starting at `offset`.
pub fn mix_at_snr_from(speech: &AudioBuffer, noise: &AudioBuffer, snr_db: f64, offset: usize) -> Result<Mixed> {
    if speech.sample_rate_hz != noise.sample_rate_hz {
        return Err(Error::Config(format!(
            "speech at {} Hz cannot be mixed with noise at {} Hz",
            speech.sample_rate_hz, noise.sample_rate_hz
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("SNR {snr_db} dB is not finite")));
    }
    let unchanged = || Mixed {
        audio: speech.clone(),
        gain: 0.0,
        skipped: true,
    };
    if noise.is_empty() || speech.is_empty() {
        log::warn!("empty noise or speech buffer, augmentation skipped");
        return Ok(unchanged());
    }
    let n = speech.len();
    let noise_power = tile(&noise.samples, n, offset).map(|x| x * x).sum::<f64>() / n as f64;
    if noise_power <= 0.0 {
        log::warn!("noise has zero power over the utterance, augmentation skipped");
        return Ok(unchanged());
    }
    let gain = (speech.power() / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt();
    let samples = speech
        .samples
        .iter()
        .zip(tile(&noise.samples, n, offset))
        .map(|(s, v)| s + gain * v)
        .collect();
    Ok(Mixed {
        audio: AudioBuffer::new(samples, speech.sample_rate_hz)?,
        gain,
        skipped: false,
    })
}

pub fn mix_at_snr(speech: &AudioBuffer, noise: &AudioBuffer, snr_db: f64) -> Result<Mixed> {
    mix_at_snr_from(speech, noise, snr_db, 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub audio: AudioBuffer,
    pub applied: bool,
    pub snr_db: Option<f64>,
    pub noise_id: Option<String>,
}

/// With probability `apply_probability`, mixes in a uniformly chosen noise at
/// an SNR drawn uniformly from `[snr_lo_db, snr_hi_db]`. Deterministic in `seed`.
pub fn maybe_augment(speech: &AudioBuffer, policy: &AugmentPolicy, bank: &NoiseBank, seed: u64) -> Result<Augmented> {
    policy.validate()?;
    let untouched = || Augmented {
        audio: speech.clone(),
        applied: false,
        snr_db: None,
        noise_id: None,
    };
    let mut rng = derived_rng(seed, stream::AUGMENT, 0);
    if rng.random::<f64>() >= policy.apply_probability {
        return Ok(untouched());
    }
    let id = &policy.noise_manifest[rng.random_range(0..policy.noise_manifest.len())];
    let snr = if policy.snr_lo_db < policy.snr_hi_db {
        rng.random_range(policy.snr_lo_db..=policy.snr_hi_db)
    } else {
        policy.snr_lo_db
    };
    let noise = bank
        .get(id)
        .ok_or_else(|| Error::Config(format!("noise `{id}` is not loaded")))?;
    let offset = rng.random_range(0..noise.len().max(1));
    let mixed = mix_at_snr_from(speech, noise, snr, offset)?;
    if mixed.skipped {
        return Ok(untouched());
    }
    Ok(Augmented {
        audio: mixed.audio,
        applied: true,
        snr_db: Some(snr),
        noise_id: Some(id.clone()),
    })
}

/// Achieved SNR of `mixed` relative to the clean `speech`.
pub fn measured_snr_db(speech: &AudioBuffer, mixed: &AudioBuffer) -> f64 {
    let noise_power = speech
        .samples
        .iter()
        .zip(&mixed.samples)
        .map(|(s, m)| (m - s).powi(2))
        .sum::<f64>()
        / speech.len() as f64;
    10.0 * (speech.power() / noise_power).log10()
}
