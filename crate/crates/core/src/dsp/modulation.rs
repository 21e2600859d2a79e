use std::f64::consts::{LN_2, PI};
use std::ops::RangeInclusive;
use std::str::FromStr;

use ndarray::Array2;
use num_complex::Complex64;

use crate::dsp::{MODULATION_COEFFS, WINDOW_SECONDS};
use crate::error::{Error, Result};

/// Per-band modulation coefficients of one analysis window.
///
/// Row `b`, column `m` holds the coefficient at `m / 1.5` Hz of band `b`'s log
/// power envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationSpectrum {
    pub coeffs: Array2<Complex64>,
    pub window_index: usize,
}

impl ModulationSpectrum {
    pub fn zeros(band_count: usize, window_index: usize) -> Self {
        Self {
            coeffs: Array2::zeros((band_count, MODULATION_COEFFS)),
            window_index,
        }
    }

    pub fn band_count(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn segment_duration_s(&self) -> f64 {
        WINDOW_SECONDS
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }
}

pub fn modulation_frequency_hz(index: usize) -> f64 {
    index as f64 / WINDOW_SECONDS
}

/// Inclusive coefficient range whose frequencies `m / 1.5` lie in
/// `[lo_hz, hi_hz]`, or `None` when no index falls inside.
pub fn modulation_bin_range(lo_hz: f64, hi_hz: f64) -> Option<(usize, usize)> {
    const EPS: f64 = 1e-9;
    let lo = (lo_hz * WINDOW_SECONDS - EPS).ceil().max(0.0) as usize;
    let hi = (hi_hz * WINDOW_SECONDS + EPS).floor();
    if hi < 0.0 {
        return None;
    }
    let hi = (hi as usize).min(MODULATION_COEFFS - 1);
    (lo <= hi).then_some((lo, hi))
}

/// Modulation band to delete, optionally pinned to one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSpec {
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub window_index: Option<usize>,
    bins: Option<(usize, usize)>,
}

impl MaskSpec {
    /// Highest representable modulation frequency (exclusive).
    pub const MAX_HZ: f64 = 53.34;

    pub fn new(lo_hz: f64, hi_hz: f64) -> Result<Self> {
        if !(lo_hz.is_finite() && hi_hz.is_finite() && 0.0 <= lo_hz && lo_hz <= hi_hz && hi_hz < Self::MAX_HZ) {
            return Err(Error::Config(format!(
                "mask range {lo_hz}..{hi_hz} Hz must satisfy 0 <= lo <= hi < {}",
                Self::MAX_HZ
            )));
        }
        Ok(Self {
            lo_hz,
            hi_hz,
            window_index: None,
            bins: modulation_bin_range(lo_hz, hi_hz),
        })
    }

    /// The 2-8 Hz syllabic band.
    pub fn syllabic() -> Self {
        Self::new(2.0, 8.0).expect("static range")
    }

    pub fn at_window(mut self, window_index: usize) -> Self {
        self.window_index = Some(window_index);
        self
    }

    pub fn bin_lo(&self) -> Option<usize> {
        self.bins.map(|(lo, _)| lo)
    }

    pub fn bin_hi(&self) -> Option<usize> {
        self.bins.map(|(_, hi)| hi)
    }

    pub fn bins(&self) -> Option<RangeInclusive<usize>> {
        self.bins.map(|(lo, hi)| lo..=hi)
    }
}

impl FromStr for MaskSpec {
    type Err = Error;

    /// Parses `lo:hi` in Hz, e.g. `2:8`.
    fn from_str(s: &str) -> Result<Self> {
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("mask `{s}` must look like lo:hi")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad mask frequency `{v}`")))
        };
        MaskSpec::new(parse(lo)?, parse(hi)?)
    }
}

/// Zeroes the masked coefficients in every band; all others are copied as is.
pub fn apply_modulation_dropout(spec: &ModulationSpectrum, mask: &MaskSpec) -> ModulationSpectrum {
    let mut out = spec.clone();
    if let Some(bins) = mask.bins() {
        let hi = (*bins.end()).min(out.coeffs.ncols().saturating_sub(1));
        for mut row in out.coeffs.rows_mut() {
            for m in *bins.start()..=hi {
                row[m] = Complex64::new(0.0, 0.0);
            }
        }
    }
    out
}

/// Evaluates `Re sum_m c[m] e^{j 2 pi m t / T}` at `frame_count` uniform
/// instants `t = i T / frame_count`.
pub fn synthesize_log_envelope(coeffs: &[Complex64], frame_count: usize) -> Vec<f64> {
    EnvelopeSynthesizer::new(coeffs.len(), frame_count).synthesize(coeffs)
}

/// [`synthesize_log_envelope`] with the cosine table computed once.
#[derive(Debug, Clone)]
pub struct EnvelopeSynthesizer {
    coeff_count: usize,
    frame_count: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl EnvelopeSynthesizer {
    pub fn new(coeff_count: usize, frame_count: usize) -> Self {
        let (cos, sin) = (0..frame_count * coeff_count)
            .map(|idx| {
                let (i, m) = (idx / coeff_count, idx % coeff_count);
                let phase = 2.0 * PI * ((m * i) % frame_count) as f64 / frame_count as f64;
                (phase.cos(), phase.sin())
            })
            .unzip();
        Self {
            coeff_count,
            frame_count,
            cos,
            sin,
        }
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn synthesize(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let used = coeffs.len().min(self.coeff_count);
        (0..self.frame_count)
            .map(|i| {
                let row = i * self.coeff_count;
                coeffs[..used]
                    .iter()
                    .zip(&self.cos[row..row + used])
                    .zip(&self.sin[row..row + used])
                    .map(|((c, cos), sin)| c.re * cos - c.im * sin)
                    .sum()
            })
            .collect()
    }
}

/// Modulation coefficients of the periodic Hann window's log power,
/// `log(hann(t)^2) = -4 log 2 - 4 sum_{m>=1} cos(2 pi m t / T) / m`.
pub fn analysis_window_cepstrum(count: usize) -> Vec<f64> {
    (0..count)
        .map(|m| if m == 0 { -4.0 * LN_2 } else { -4.0 / m as f64 })
        .collect()
}

/// Subtracts the analysis window's own log-power modulation from every band,
/// leaving the modulation of the underlying signal.
pub fn remove_analysis_window(spec: &mut ModulationSpectrum) {
    let window = analysis_window_cepstrum(spec.coeffs.ncols());
    for mut row in spec.coeffs.rows_mut() {
        for (c, w) in row.iter_mut().zip(&window) {
            c.re -= w;
        }
    }
}
