use ndarray::Array2;
use rand::Rng as _;
use rayon::prelude::*;


use crate::dsp::{
    apply_modulation_dropout, EnvelopeSynthesizer, fit_complex_fdlp, frames_for_samples, lp_to_modulation_cepstrum,
    overlap_add_spectrogram, remove_analysis_window, segment_utterance, AudioBuffer, EnvelopeBlock,
    FdlpSpectrogram, MaskSpec, ModulationSpectrum, SubbandAnalyzer, WindowedSegment, BAND_COUNT,
    DEFAULT_LP_ORDER, FRAMES_PER_WINDOW, MODULATION_COEFFS, WINDOW_SAMPLES,
};
use crate::error::{Error, Result};
use crate::rng::{derived_rng, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub band_count: usize,
    pub lp_order: usize,
    pub coeff_count: usize,
    /// Subtract the Hann window's own log-power modulation from each window's
    /// coefficients before masking and synthesis.
    pub remove_window_modulation: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            band_count: BAND_COUNT,
            lp_order: DEFAULT_LP_ORDER,
            coeff_count: MODULATION_COEFFS,
            remove_window_modulation: true,
        }
    }
}

/// Training rejects utterances shorter than one window; analysis zero-pads them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractMode {
    Training,
    Analysis,
}

/// Modulation spectra of every window of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceModulations {
    pub spectra: Vec<ModulationSpectrum>,
    pub frame_count: usize,
    /// Bands that were silent and replaced by floor-level flat models.
    pub flat_bands: usize,
}

/// Network input (masked) and target (clean) spectrograms of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePair {
    pub masked: FdlpSpectrogram,
    pub clean: FdlpSpectrogram,
    pub masked_window: Option<usize>,
    pub window_count: usize,
}

pub struct FeatureExtractor {
    config: FeatureConfig,
    analyzer: SubbandAnalyzer,
    synth: EnvelopeSynthesizer,
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureExtractor")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        if config.coeff_count == 0 || config.coeff_count > MODULATION_COEFFS {
            return Err(Error::Config(format!(
                "coefficient count must be in 1..={MODULATION_COEFFS}"
            )));
        }
        let analyzer = SubbandAnalyzer::new(config.band_count)?;
        let shortest = (0..config.band_count)
            .map(|b| analyzer.bands().band(b).1.len())
            .min()
            .unwrap_or(0);
        if config.lp_order == 0 || config.lp_order >= shortest {
            return Err(Error::Config(format!(
                "LP order {} must be in 1..{shortest} for {} bands",
                config.lp_order, config.band_count
            )));
        }
        let synth = EnvelopeSynthesizer::new(config.coeff_count, FRAMES_PER_WINDOW);
        Ok(Self {
            config,
            analyzer,
            synth,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    /// Modulation spectrum of one window plus the number of silent bands.
    pub fn window_spectrum(&self, segment: &WindowedSegment) -> Result<(ModulationSpectrum, usize)> {
        let bands = self.analyzer.decompose(segment)?;
        let mut spec = ModulationSpectrum::zeros(self.config.band_count, segment.window_index);
        let mut flat = 0;
        for band in &bands {
            let fit = fit_complex_fdlp(band, self.config.lp_order)?;
            flat += usize::from(fit.flat);
            let cep = lp_to_modulation_cepstrum(&fit.model, self.config.coeff_count);
            for (dst, c) in spec.coeffs.row_mut(band.band).iter_mut().zip(cep) {
                *dst = c;
            }
        }
        if self.config.remove_window_modulation {
            remove_analysis_window(&mut spec);
        }
        if !spec.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite modulation coefficients in window {}",
                segment.window_index
            )));
        }
        Ok((spec, flat))
    }

    pub fn modulation_spectra(&self, audio: &AudioBuffer, mode: ExtractMode) -> Result<UtteranceModulations> {
        audio.check_pipeline_input()?;
        if mode == ExtractMode::Training && audio.len() < WINDOW_SAMPLES {
            return Err(Error::TooShort {
                samples: audio.len(),
                required: WINDOW_SAMPLES,
            });
        }
        let segments = segment_utterance(audio)?;
        let results: Vec<(ModulationSpectrum, usize)> = segments
            .par_iter()
            .map(|seg| self.window_spectrum(seg))
            .collect::<Result<_>>()?;
        let flat_bands = results.iter().map(|(_, f)| f).sum();
        Ok(UtteranceModulations {
            spectra: results.into_iter().map(|(s, _)| s).collect(),
            frame_count: frames_for_samples(audio.len()),
            flat_bands,
        })
    }

    fn envelope_block(&self, spec: &ModulationSpectrum, masked: bool) -> EnvelopeBlock {
        let mut values = Array2::zeros((spec.band_count(), FRAMES_PER_WINDOW));
        for (b, row) in spec.coeffs.rows().into_iter().enumerate() {
            let env = self.synth.synthesize(row.as_slice().expect("standard layout"));
            for (dst, v) in values.row_mut(b).iter_mut().zip(env) {
                *dst = v;
            }
        }
        EnvelopeBlock {
            window_index: spec.window_index,
            values,
            masked,
        }
    }

    /// Builds masked and clean spectrograms from precomputed spectra.
    ///
    /// Without a pinned window the masked window is drawn uniformly from the
    /// utterance's windows using `seed`.
    pub fn pair_from_spectra(
        &self,
        utt: &UtteranceModulations,
        mask: Option<&MaskSpec>,
        seed: u64,
    ) -> Result<FeaturePair> {
        let count = utt.spectra.len();
        let masked_window = match mask {
            None => None,
            Some(m) => Some(match m.window_index {
                Some(i) if i < count => i,
                Some(i) => {
                    return Err(Error::Config(format!(
                        "mask window {i} out of range, utterance has {count} windows"
                    )))
                }
                None => derived_rng(seed, stream::MASK_WINDOW, 0).random_range(0..count),
            }),
        };

        let clean_blocks: Vec<EnvelopeBlock> = utt
            .spectra
            .iter()
            .map(|s| self.envelope_block(s, false))
            .collect();
        let clean = overlap_add_spectrogram(&clean_blocks, utt.frame_count)?;
        let masked = match (mask, masked_window) {
            (Some(m), Some(w)) => {
                let mut blocks = clean_blocks;
                blocks[w] = self.envelope_block(&apply_modulation_dropout(&utt.spectra[w], m), true);
                overlap_add_spectrogram(&blocks, utt.frame_count)?
            }
            _ => clean.clone(),
        };
        Ok(FeaturePair {
            masked,
            clean,
            masked_window,
            window_count: count,
        })
    }

    pub fn extract(
        &self,
        audio: &AudioBuffer,
        mask: Option<&MaskSpec>,
        seed: u64,
        mode: ExtractMode,
    ) -> Result<FeaturePair> {
        let utt = self.modulation_spectra(audio, mode)?;
        self.pair_from_spectra(&utt, mask, seed)
    }
}

/// Full pipeline with the default configuration.
pub fn extract_features(
    audio: &AudioBuffer,
    mask: Option<&MaskSpec>,
    seed: u64,
    mode: ExtractMode,
) -> Result<FeaturePair> {
    FeatureExtractor::new(FeatureConfig::default())?.extract(audio, mask, seed, mode)
}
