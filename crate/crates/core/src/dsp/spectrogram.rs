use std::ops::Range;

use ndarray::{Array2, Axis};

use crate::dsp::{hann_periodic, FRAMES_PER_WINDOW, FRAME_RATE_HZ, HOP_FRAMES, SAMPLES_PER_FRAME};
use crate::error::{Error, Result};

/// Frames x bands matrix of log power envelopes.
#[derive(Debug, Clone, PartialEq)]
pub struct FdlpSpectrogram {
    pub frames: Array2<f32>,
    pub frame_rate_hz: f32,
    /// Frames belonging to the window whose modulations were deleted.
    pub masked_frame_range: Option<Range<usize>>,
}

impl FdlpSpectrogram {
    pub fn new(frames: Array2<f32>, masked_frame_range: Option<Range<usize>>) -> Self {
        Self {
            frames,
            frame_rate_hz: FRAME_RATE_HZ as f32,
            masked_frame_range,
        }
    }

    pub fn frame_count(&self) -> usize {
        self.frames.nrows()
    }

    pub fn band_count(&self) -> usize {
        self.frames.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.frames.iter().all(|v| v.is_finite())
    }

    /// Copy with each band's mean over the utterance removed.
    pub fn mean_normalized(&self) -> Self {
        let mut out = self.clone();
        if let Some(mean) = self.frames.mean_axis(Axis(0)) {
            out.frames -= &mean;
        }
        out
    }

    /// The first `max_frames` frames; the masked range is clipped to match and
    /// dropped if nothing of it remains.
    pub fn truncated(&self, max_frames: usize) -> Self {
        let keep = max_frames.min(self.frame_count());
        let masked_frame_range = self
            .masked_frame_range
            .clone()
            .map(|r| r.start.min(keep)..r.end.min(keep))
            .filter(|r| !r.is_empty());
        Self {
            frames: self.frames.slice(ndarray::s![..keep, ..]).to_owned(),
            frame_rate_hz: self.frame_rate_hz,
            masked_frame_range,
        }
    }
}

/// Number of 10 ms frames covering `samples` samples at 16 kHz.
pub fn frames_for_samples(samples: usize) -> usize {
    samples.div_ceil(SAMPLES_PER_FRAME)
}

/// Bands x 150 log-envelope block synthesized from one analysis window.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeBlock {
    pub window_index: usize,
    pub values: Array2<f64>,
    pub masked: bool,
}

/// Sum of hop-75 shifted 150-point Hann windows at every frame of `len` frames,
/// with windows starting at frame 0.
pub fn hann_weight_sum(len: usize) -> Vec<f64> {
    let w = hann_periodic(FRAMES_PER_WINDOW);
    let mut sum = vec![0.0; len];
    let mut start = 0;
    while start < len {
        for (i, wi) in w.iter().enumerate() {
            if let Some(s) = sum.get_mut(start + i) {
                *s += wi;
            }
        }
        start += HOP_FRAMES;
    }
    sum
}

/// Overlap-adds Hann-weighted log-envelope blocks into a spectrogram.
///
/// Each output frame is the weighted mean of the blocks covering it. Frames
/// where every covering weight is zero (the first frame of the utterance) take
/// the plain mean of the covering blocks.
pub fn overlap_add_spectrogram(blocks: &[EnvelopeBlock], utterance_frames: usize) -> Result<FdlpSpectrogram> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::Sequence("no envelope blocks".into()))?;
    let bands = first.values.nrows();
    for (expected, block) in blocks.iter().enumerate() {
        if block.window_index != expected {
            return Err(Error::Sequence(format!(
                "expected window {expected}, found window {}",
                block.window_index
            )));
        }
        if block.values.dim() != (bands, FRAMES_PER_WINDOW) {
            return Err(Error::Contract(format!(
                "window {expected} block has shape {:?}, expected ({bands}, {FRAMES_PER_WINDOW})",
                block.values.dim()
            )));
        }
    }
    let covered = (blocks.len() - 1) * HOP_FRAMES + FRAMES_PER_WINDOW;
    if covered < utterance_frames {
        return Err(Error::Sequence(format!(
            "{} windows cover {covered} frames, utterance has {utterance_frames}",
            blocks.len()
        )));
    }

    let window = hann_periodic(FRAMES_PER_WINDOW);
    let mut acc = Array2::<f64>::zeros((utterance_frames, bands));
    let mut weight = vec![0.0; utterance_frames];
    let mut plain = Array2::<f64>::zeros((utterance_frames, bands));
    let mut hits = vec![0usize; utterance_frames];
    let mut masked: Option<Range<usize>> = None;

    for block in blocks {
        let start = block.window_index * HOP_FRAMES;
        if start >= utterance_frames {
            continue;
        }
        let end = (start + FRAMES_PER_WINDOW).min(utterance_frames);
        for t in start..end {
            let i = t - start;
            let w = window[i];
            weight[t] += w;
            hits[t] += 1;
            for b in 0..bands {
                let v = block.values[[b, i]];
                acc[[t, b]] += w * v;
                plain[[t, b]] += v;
            }
        }
        if block.masked {
            masked = Some(match masked {
                Some(r) => r.start.min(start)..r.end.max(end),
                None => start..end,
            });
        }
    }

    let mut frames = Array2::<f32>::zeros((utterance_frames, bands));
    for t in 0..utterance_frames {
        for b in 0..bands {
            let v = if weight[t] > 0.0 {
                acc[[t, b]] / weight[t]
            } else {
                plain[[t, b]] / hits[t] as f64
            };
            frames[[t, b]] = v as f32;
        }
    }
    Ok(FdlpSpectrogram::new(frames, masked))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(index: usize, value: f64) -> EnvelopeBlock {
        EnvelopeBlock {
            window_index: index,
            values: Array2::from_elem((20, FRAMES_PER_WINDOW), value),
            masked: false,
        }
    }

    #[test]
    fn hann_sum_is_constant_in_interior() {
        let sum = hann_weight_sum(75 * 10);
        for &s in &sum[HOP_FRAMES..sum.len() - HOP_FRAMES] {
            assert!((s - 1.0).abs() < 1e-10, "{s}");
        }
    }

    #[test]
    fn single_block_passes_through() {
        let mut b = block(0, 0.0);
        for (i, v) in b.values.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        let spec = overlap_add_spectrogram(std::slice::from_ref(&b), 150).unwrap();
        for t in 0..150 {
            for band in 0..20 {
                let expected = b.values[[band, t]] as f32;
                assert!((spec.frames[[t, band]] - expected).abs() <= 1e-6 * expected.abs().max(1.0));
            }
        }
        assert_eq!(spec.masked_frame_range, None);
    }

    #[test]
    fn constant_blocks_stay_constant() {
        let blocks: Vec<_> = (0..4).map(|i| block(i, -2.5)).collect();
        let spec = overlap_add_spectrogram(&blocks, 375).unwrap();
        assert!(spec.frames.iter().all(|&v| (v + 2.5).abs() < 1e-6));
    }

    #[test]
    fn masked_range_is_recorded_and_clipped() {
        let mut blocks: Vec<_> = (0..3).map(|i| block(i, 1.0)).collect();
        blocks[1].masked = true;
        let spec = overlap_add_spectrogram(&blocks, 300).unwrap();
        assert_eq!(spec.masked_frame_range, Some(75..225));

        blocks[1].masked = false;
        blocks[2].masked = true;
        let spec = overlap_add_spectrogram(&blocks, 260).unwrap();
        assert_eq!(spec.masked_frame_range, Some(150..260));
    }

    #[test]
    fn truncation_clips_the_masked_range() {
        let frames = Array2::from_shape_fn((300, 20), |(t, b)| (t * 20 + b) as f32);
        let spec = FdlpSpectrogram::new(frames, Some(150..225));
        let cut = spec.truncated(200);
        assert_eq!(cut.frame_count(), 200);
        assert_eq!(cut.masked_frame_range, Some(150..200));
        assert_eq!(cut.frames.row(199), spec.frames.row(199));
        assert_eq!(spec.truncated(100).masked_frame_range, None);
        assert_eq!(spec.truncated(1000), spec);
    }

    #[test]
    fn missing_window_is_sequence_error() {
        let blocks = vec![block(0, 1.0), block(2, 1.0)];
        assert!(matches!(overlap_add_spectrogram(&blocks, 200), Err(Error::Sequence(_))));
        assert!(matches!(overlap_add_spectrogram(&[], 10), Err(Error::Sequence(_))));
        // Two windows cannot cover 400 frames.
        let blocks = vec![block(0, 1.0), block(1, 1.0)];
        assert!(matches!(overlap_add_spectrogram(&blocks, 400), Err(Error::Sequence(_))));
    }

    #[test]
    fn frame_count_rounds_up() {
        assert_eq!(frames_for_samples(16_000), 100);
        assert_eq!(frames_for_samples(16_001), 101);
        assert_eq!(frames_for_samples(36_000), 225);
    }

    #[test]
    fn mean_normalization_zeroes_band_means() {
        let mut frames = Array2::<f32>::zeros((10, 3));
        for ((t, b), v) in frames.indexed_iter_mut() {
            *v = t as f32 + 10.0 * b as f32;
        }
        let spec = FdlpSpectrogram::new(frames, None).mean_normalized();
        for col in spec.frames.columns() {
            assert!(col.sum().abs() < 1e-4);
        }
    }
}
