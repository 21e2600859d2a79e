use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::dsp::{WindowedSegment, SAMPLE_RATE_HZ, WINDOW_SAMPLES};
use crate::error::{Error, Result};

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

/// Cosine-tapered, mel-spaced band windows over the one-sided spectrum.
///
/// Band centres are equally spaced on the mel scale from 0 Hz to Nyquist.
/// Between two neighbouring centres the lower band falls off as `cos(pi u / 2)`
/// and the upper band rises as `sin(pi u / 2)`, so the squared weights of all
/// bands sum to one at every bin.
#[derive(Debug, Clone)]
pub struct MelBands {
    fft_len: usize,
    start_bins: Vec<usize>,
    weights: Vec<Vec<f64>>,
}

impl MelBands {
    pub fn new(band_count: usize, fft_len: usize, sample_rate_hz: u32) -> Result<Self> {
        if band_count < 2 {
            return Err(Error::Config(format!(
                "need at least 2 bands, got {band_count}"
            )));
        }
        if fft_len < 2 * band_count {
            return Err(Error::Config(format!(
                "fft length {fft_len} too short for {band_count} bands"
            )));
        }
        let bins = fft_len / 2 + 1;
        let nyquist_mel = hz_to_mel(sample_rate_hz as f64 / 2.0);
        let spacing = nyquist_mel / (band_count - 1) as f64;

        let mut dense = vec![vec![0.0; bins]; band_count];
        for k in 0..bins {
            let hz = k as f64 * sample_rate_hz as f64 / fft_len as f64;
            let pos = (hz_to_mel(hz) / spacing).min((band_count - 1) as f64);
            let lower = (pos.floor() as usize).min(band_count - 2);
            let u = pos - lower as f64;
            dense[lower][k] = (FRAC_PI_2 * u).cos();
            dense[lower + 1][k] = (FRAC_PI_2 * u).sin();
        }

        let mut start_bins = Vec::with_capacity(band_count);
        let mut weights = Vec::with_capacity(band_count);
        for row in dense {
            let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
            let last = row.iter().rposition(|&w| w > 0.0).unwrap_or(0);
            start_bins.push(first);
            weights.push(row[first..=last].to_vec());
        }
        Ok(Self {
            fft_len,
            start_bins,
            weights,
        })
    }

    pub fn band_count(&self) -> usize {
        self.weights.len()
    }

    pub fn fft_len(&self) -> usize {
        self.fft_len
    }

    /// Inclusive start bin and weights of one band.
    pub fn band(&self, band: usize) -> (usize, &[f64]) {
        (self.start_bins[band], &self.weights[band])
    }

    /// Weight of `band` at one-sided spectral bin `bin`.
    pub fn weight(&self, band: usize, bin: usize) -> f64 {
        let start = self.start_bins[band];
        bin.checked_sub(start)
            .and_then(|i| self.weights[band].get(i).copied())
            .unwrap_or(0.0)
    }
}

/// Band-weighted spectral coefficients of one window: the sequence complex
/// FDLP runs linear prediction on.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSpectrum {
    pub band: usize,
    pub start_bin: usize,
    /// Transform length that produced the coefficients; fixes the envelope scale.
    pub fft_len: usize,
    pub coeffs: Vec<Complex64>,
}

impl BandSpectrum {
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Reusable sub-band decomposer holding the FFT plan and band windows.
pub struct SubbandAnalyzer {
    bands: MelBands,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SubbandAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubbandAnalyzer")
            .field("bands", &self.bands)
            .finish_non_exhaustive()
    }
}

impl SubbandAnalyzer {
    pub fn new(band_count: usize) -> Result<Self> {
        let bands = MelBands::new(band_count, WINDOW_SAMPLES, SAMPLE_RATE_HZ)?;
        let fft = FftPlanner::new().plan_fft_forward(WINDOW_SAMPLES);
        Ok(Self { bands, fft })
    }

    pub fn bands(&self) -> &MelBands {
        &self.bands
    }

    pub fn decompose(&self, segment: &WindowedSegment) -> Result<Vec<BandSpectrum>> {
        if segment.samples.len() != WINDOW_SAMPLES {
            return Err(Error::Contract(format!(
                "segment has {} samples, expected {WINDOW_SAMPLES}",
                segment.samples.len()
            )));
        }
        let mut spectrum: Vec<Complex64> = segment
            .samples
            .iter()
            .map(|&x| Complex64::new(x, 0.0))
            .collect();
        self.fft.process(&mut spectrum);

        Ok((0..self.bands.band_count())
            .map(|band| {
                let (start_bin, weights) = self.bands.band(band);
                let coeffs = weights
                    .iter()
                    .zip(&spectrum[start_bin..])
                    .map(|(w, x)| x * *w)
                    .collect();
                BandSpectrum {
                    band,
                    start_bin,
                    fft_len: WINDOW_SAMPLES,
                    coeffs,
                }
            })
            .collect())
    }
}

pub fn subband_decompose(segment: &WindowedSegment, band_count: usize) -> Result<Vec<BandSpectrum>> {
    SubbandAnalyzer::new(band_count)?.decompose(segment)
}
