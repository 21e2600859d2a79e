//! Temporal modulation content of predictor layer outputs.
//!
//! Every model dimension of every layer output is treated as a time signal at
//! the frame rate: its mean is removed, it is zero-padded to [`FFT_LEN`]
//! frames (longer traces are cut into consecutive blocks whose spectra are
//! averaged) and the magnitude of its DFT is averaged over dimensions and
//! utterances.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::FdlpSpectrogram;
use crate::error::{Error, Result};
use crate::predictor::{forward, ActivationTrace, PredictorParams};
use crate::rng::{derived_rng, stream};

pub const FFT_LEN: usize = 512;
/// Highest modulation frequency written to the spectra CSV.
pub const REPORT_MAX_HZ: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerProbeReport {
    /// Bin frequencies from 0 Hz to Nyquist, step `frame_rate / FFT_LEN`.
    pub freq_axis_hz: Vec<f64>,
    /// Average magnitude, `layer_count x freq_bins`.
    pub per_layer_spectra: Array2<f64>,
    pub utterance_count: usize,
    pub band_ratio_2_8: Vec<f64>,
    /// Set where a layer's spectrum is all zero and its ratio is reported as 0.
    pub degenerate: Vec<bool>,
    /// Frequency of the largest non-DC bin per layer.
    pub peak_hz: Vec<f64>,
}

impl LayerProbeReport {
    pub fn layer_count(&self) -> usize {
        self.per_layer_spectra.nrows()
    }

    /// Number of leading bins at or below `max_hz`.
    pub fn bins_up_to(&self, max_hz: f64) -> usize {
        self.freq_axis_hz.iter().take_while(|&&f| f <= max_hz + 1e-9).count()
    }
}

/// One-sided DFT of `signal` zero-padded to `fft_len`.
pub fn padded_spectrum(signal: ArrayView1<f64>, fft_len: usize, planner: &mut FftPlanner<f64>) -> Vec<Complex64> {
    let fft = planner.plan_fft_forward(fft_len);
    let mut buf: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(fft_len, Complex64::new(0.0, 0.0));
    fft.process(&mut buf);
    buf
}

/// Mean magnitude spectrum of one time signal (`fft_len / 2 + 1` bins).
fn signal_magnitude(signal: &[f64], planner: &mut FftPlanner<f64>) -> Array1<f64> {
    let bins = FFT_LEN / 2 + 1;
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    let centered: Vec<f64> = signal.iter().map(|v| v - mean).collect();
    let mut acc = Array1::zeros(bins);
    let blocks = centered.chunks(FFT_LEN);
    let count = blocks.len();
    for block in blocks {
        let spec = padded_spectrum(ArrayView1::from(block), FFT_LEN, planner);
        for (a, c) in acc.iter_mut().zip(&spec[..bins]) {
            *a += c.norm();
        }
    }
    acc / count as f64
}

/// Per-layer spectra of one trace, summed over dimensions.
fn trace_spectra(trace: &ActivationTrace) -> Array2<f64> {
    let bins = FFT_LEN / 2 + 1;
    let mut planner = FftPlanner::new();
    let mut out = Array2::zeros((trace.layer_count(), bins));
    for (mut row, layer) in out.rows_mut().into_iter().zip(&trace.layers) {
        for column in layer.columns() {
            let signal: Vec<f64> = column.iter().map(|&v| v as f64).collect();
            row += &signal_magnitude(&signal, &mut planner);
        }
    }
    out
}

/// Ratio of squared magnitude in `[lo_hz, hi_hz]` to squared magnitude over
/// every non-DC bin. An all-zero spectrum gives `(0.0, true)`.
pub fn band_energy_ratio(spectrum: &[f64], freq_axis_hz: &[f64], lo_hz: f64, hi_hz: f64) -> Result<(f64, bool)> {
    if spectrum.len() != freq_axis_hz.len() {
        return Err(Error::Contract(format!(
            "spectrum has {} bins, axis has {}",
            spectrum.len(),
            freq_axis_hz.len()
        )));
    }
    if freq_axis_hz.last().is_none_or(|&top| top < hi_hz) {
        return Err(Error::Contract(format!("frequency axis does not reach {hi_hz} Hz")));
    }
    let mut band = 0.0;
    let mut total = 0.0;
    for (&s, &f) in spectrum.iter().zip(freq_axis_hz) {
        if f <= 0.0 {
            continue;
        }
        let e = s * s;
        total += e;
        if f >= lo_hz - 1e-9 && f <= hi_hz + 1e-9 {
            band += e;
        }
    }
    if total == 0.0 {
        return Ok((0.0, true));
    }
    Ok((band / total, false))
}

/// Frequency of the largest bin, DC excluded.
pub fn peak_frequency(spectrum: &[f64], freq_axis_hz: &[f64]) -> f64 {
    spectrum
        .iter()
        .zip(freq_axis_hz)
        .skip(1)
        .fold((f64::NEG_INFINITY, 0.0), |best, (&s, &f)| if s > best.0 { (s, f) } else { best })
        .1
}

/// Average temporal magnitude spectra of every layer over `traces`.
pub fn layer_modulation_spectra(traces: &[ActivationTrace], frame_rate_hz: f64) -> Result<LayerProbeReport> {
    let first = traces.first().ok_or_else(|| Error::EmptyInput("no activation traces".into()))?;
    let layers = first.layer_count();
    let dims = first.layers.first().map_or(0, |l| l.ncols());
    if layers == 0 || dims == 0 {
        return Err(Error::Contract("trace has no layers or no dimensions".into()));
    }
    for (i, t) in traces.iter().enumerate() {
        let consistent = t.layer_count() == layers
            && t.frame_count() > 0
            && t.layers.iter().all(|l| l.ncols() == dims && l.nrows() == t.frame_count());
        if !consistent {
            return Err(Error::Contract(format!("trace {i} is inconsistent with trace 0")));
        }
    }
    if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
        return Err(Error::Config(format!("frame rate {frame_rate_hz} is invalid")));
    }

    let bins = FFT_LEN / 2 + 1;
    let sum = traces
        .par_iter()
        .map(trace_spectra)
        .reduce(|| Array2::zeros((layers, bins)), |a, b| a + b);
    let spectra = sum / (traces.len() * dims) as f64;
    let freq_axis_hz: Vec<f64> = (0..bins).map(|k| k as f64 * frame_rate_hz / FFT_LEN as f64).collect();

    let mut band_ratio_2_8 = Vec::with_capacity(layers);
    let mut degenerate = Vec::with_capacity(layers);
    let mut peak_hz = Vec::with_capacity(layers);
    let top = freq_axis_hz[bins - 1];
    for row in spectra.rows() {
        let row = row.to_vec();
        let (ratio, flat) = band_energy_ratio(&row, &freq_axis_hz, 2.0_f64.min(top), 8.0_f64.min(top))?;
        band_ratio_2_8.push(ratio);
        degenerate.push(flat);
        peak_hz.push(peak_frequency(&row, &freq_axis_hz));
    }
    Ok(LayerProbeReport {
        freq_axis_hz,
        per_layer_spectra: spectra,
        utterance_count: traces.len(),
        band_ratio_2_8,
        degenerate,
        peak_hz,
    })
}

/// Runs the predictor with activation capture on each spectrogram, after the
/// same per-band mean removal used in training.
pub fn collect_traces(params: &PredictorParams, spectrograms: &[FdlpSpectrogram]) -> Result<Vec<ActivationTrace>> {
    spectrograms
        .par_iter()
        .map(|s| {
            let (_, trace) = forward(params, &s.mean_normalized(), true)?;
            Ok(trace.expect("capture requested"))
        })
        .collect()
}

/// Sorted indices of `count` distinct utterances out of `total`, drawn with
/// `seed`. Asking for more than `total` returns every index.
pub fn pick_utterances(total: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = derived_rng(seed, stream::PROBE_PICK, 0);
    let mut picked = rand::seq::index::sample(&mut rng, total, count.min(total)).into_vec();
    picked.sort_unstable();
    picked
}

pub const SPECTRA_FILE: &str = "layer_spectra.csv";
pub const SUMMARY_FILE: &str = "layer_summary.csv";

/// Writes `layer_spectra.csv` (`freq_hz,layer_1..layer_N`, bins up to 20 Hz)
/// and `layer_summary.csv` (`layer,band_ratio_2_8,peak_hz`) into `dir`.
pub fn emit_report(report: &LayerProbeReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let spectra_path = dir.join(SPECTRA_FILE);
    let mut w = csv::Writer::from_path(&spectra_path)?;
    let mut header = vec!["freq_hz".to_string()];
    header.extend((1..=report.layer_count()).map(|i| format!("layer_{i}")));
    w.write_record(&header)?;
    for k in 0..report.bins_up_to(REPORT_MAX_HZ) {
        let mut record = vec![report.freq_axis_hz[k].to_string()];
        record.extend(report.per_layer_spectra.column(k).iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", spectra_path.display()), e))?;

    let summary_path = dir.join(SUMMARY_FILE);
    let mut w = csv::Writer::from_path(&summary_path)?;
    w.write_record(["layer", "band_ratio_2_8", "peak_hz"])?;
    for (i, (ratio, peak)) in report.band_ratio_2_8.iter().zip(&report.peak_hz).enumerate() {
        w.write_record([(i + 1).to_string(), ratio.to_string(), peak.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", summary_path.display()), e))?;
    Ok((spectra_path, summary_path))
}
