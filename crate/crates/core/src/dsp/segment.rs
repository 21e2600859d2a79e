use std::f64::consts::PI;

use crate::dsp::{AudioBuffer, HOP_SAMPLES, WINDOW_SAMPLES};
use crate::error::Result;

/// One Hann-weighted analysis window of an utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSegment {
    pub samples: Vec<f64>,
    pub start_sample: usize,
    pub window_index: usize,
}

/// Periodic Hann window, `w[n] = 0.5 - 0.5 cos(2 pi n / len)`.
pub fn hann_periodic(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Number of 50%-overlapping windows needed to cover `len` samples.
pub fn window_count(len: usize) -> usize {
    if len <= WINDOW_SAMPLES {
        1
    } else {
        (len - WINDOW_SAMPLES).div_ceil(HOP_SAMPLES) + 1
    }
}

pub fn segment_utterance(audio: &AudioBuffer) -> Result<Vec<WindowedSegment>> {
    audio.check_pipeline_input()?;
    let window = hann_periodic(WINDOW_SAMPLES);
    let count = window_count(audio.len());
    let segments = (0..count)
        .map(|window_index| {
            let start_sample = window_index * HOP_SAMPLES;
            let available = audio.len().saturating_sub(start_sample).min(WINDOW_SAMPLES);
            let mut samples = vec![0.0; WINDOW_SAMPLES];
            for ((out, x), w) in samples
                .iter_mut()
                .zip(&audio.samples[start_sample..start_sample + available])
                .zip(&window)
            {
                *out = x * w;
            }
            WindowedSegment {
                samples,
                start_sample,
                window_index,
            }
        })
        .collect();
    Ok(segments)
}
