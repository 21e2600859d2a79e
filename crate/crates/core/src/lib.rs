//! Self-supervised learning of speech temporal modulations.
//!
//! The crate computes complex-FDLP modulation spectra of speech in 20 mel
//! sub-bands over 1.5 s Hann windows, deletes a band of modulations (2-8 Hz by
//! default) in one window per utterance, and trains a self-attention network
//! to restore them from context. Layer outputs can then be probed for their
//! temporal modulation content.

pub mod augment;
pub mod corpus;
pub mod dsp;
mod error;
pub mod predictor;
pub mod probe;
pub mod rng;
pub mod synth;

pub use dsp::{
    extract_features, AudioBuffer, ExtractMode, FdlpSpectrogram, FeatureConfig, FeatureExtractor,
    FeaturePair, MaskSpec, ModulationSpectrum,
};
pub use error::{Error, Result};
