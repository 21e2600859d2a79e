//! Modulation-domain signal processing: windowing, sub-band decomposition,
//! complex FDLP envelope fitting, modulation cepstra, modulation dropout,
//! envelope synthesis and overlap-add spectrogram assembly.

mod audio;
mod cepstrum;
mod fdlp;
mod features;
mod modulation;
mod segment;
mod spectrogram;
mod subband;

pub use audio::AudioBuffer;
pub use cepstrum::lp_to_modulation_cepstrum;
pub use fdlp::{autocorrelation, fit_complex_fdlp, levinson_durbin, FdlpFit, Levinson, LpModel};
pub use features::{extract_features, ExtractMode, FeatureConfig, FeatureExtractor, FeaturePair, UtteranceModulations};
pub use modulation::{
    analysis_window_cepstrum, apply_modulation_dropout, modulation_bin_range,
    modulation_frequency_hz, remove_analysis_window, synthesize_log_envelope, EnvelopeSynthesizer,
    MaskSpec,
    ModulationSpectrum,
};
pub use segment::{hann_periodic, segment_utterance, window_count, WindowedSegment};
pub use spectrogram::{
    frames_for_samples, hann_weight_sum, overlap_add_spectrogram, EnvelopeBlock, FdlpSpectrogram,
};
pub use subband::{subband_decompose, BandSpectrum, MelBands, SubbandAnalyzer};

/// Every pipeline entry point runs at this rate.
pub const SAMPLE_RATE_HZ: u32 = 16_000;
/// Analysis window length in seconds.
pub const WINDOW_SECONDS: f64 = 1.5;
pub const WINDOW_SAMPLES: usize = 24_000;
pub const HOP_SAMPLES: usize = WINDOW_SAMPLES / 2;
pub const BAND_COUNT: usize = 20;
/// Modulation coefficients kept per band; index 79 sits at 52.67 Hz.
pub const MODULATION_COEFFS: usize = 80;
pub const DEFAULT_LP_ORDER: usize = 60;
pub const FRAME_RATE_HZ: usize = 100;
pub const FRAMES_PER_WINDOW: usize = 150;
pub const HOP_FRAMES: usize = FRAMES_PER_WINDOW / 2;
pub const SAMPLES_PER_FRAME: usize = SAMPLE_RATE_HZ as usize / FRAME_RATE_HZ;
/// Power floor for silent bands.
pub const ENERGY_FLOOR: f64 = 1e-10;
